from .rotations import (
    normalize_quaternion,
    quat_multiply,
    quat_from_axis_angle,
    slerp,
    quat_angle_deg,
    tilt_from_vertical_deg,
)
from .matrix_text import MatrixDocument, read_document, write_document, format_float

__all__ = [
    "normalize_quaternion",
    "quat_multiply",
    "quat_from_axis_angle",
    "slerp",
    "quat_angle_deg",
    "tilt_from_vertical_deg",
    "MatrixDocument",
    "read_document",
    "write_document",
    "format_float",
]
