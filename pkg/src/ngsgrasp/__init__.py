"""Normalized-grasp-space toolkit for regional 6-DoF parallel-jaw grasp detection."""

from .errors import ConfigurationError, DomainError, NonCanonicalRotation
from .geometry import (CameraIntrinsics, CameraPose, EulerRotation, Grasp, PointMap, RGBDFrame,
                       deproject, euler_to_matrix, matrix_to_euler)

__all__ = [
    "CameraIntrinsics", "CameraPose", "ConfigurationError", "DomainError", "EulerRotation",
    "Grasp", "NonCanonicalRotation", "PointMap", "RGBDFrame", "deproject", "euler_to_matrix",
    "matrix_to_euler",
]

__version__ = "0.1.0"
