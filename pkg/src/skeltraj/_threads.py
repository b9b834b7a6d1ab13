"""BLAS thread control for the solver loops.

The estimators run long sequences of small dense factorizations (72x72
covariances, 240x240 innovation solves, banded trajectory systems); with
multi-threaded BLAS those are dominated by thread synchronization, an order
of magnitude slower than single-threaded execution. Solver entry points wrap
themselves in single_threaded_blas().
"""

from contextlib import contextmanager

try:
    from threadpoolctl import threadpool_limits

    @contextmanager
    def single_threaded_blas():
        with threadpool_limits(limits=1, user_api="blas"):
            yield

except ImportError:  # pragma: no cover - threadpoolctl is a declared dependency

    @contextmanager
    def single_threaded_blas():
        yield
