"""Multi-camera 3D articulated-skeleton trajectory reconstruction toolkit."""

from .skeleton import (SkeletonModel, default_model, forward_kinematics,
                       fk_jacobian, load_model, rotation_from_angles)
from .camera import CameraModel, CameraRig, load_rig, project, project_jacobian
from .kernels import backend

__version__ = "0.1.0"

__all__ = [
    "SkeletonModel", "default_model", "forward_kinematics", "fk_jacobian",
    "load_model", "rotation_from_angles", "CameraModel", "CameraRig",
    "load_rig", "project", "project_jacobian", "backend", "__version__",
]
