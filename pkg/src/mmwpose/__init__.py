"""6D pose and scatterer estimation from mmWave angle and delay measurements."""

from .errors import MmwPoseError
from .lie import Pose, exp_se3, exp_so3, log_so3

__version__ = "0.1.0"

__all__ = ["MmwPoseError", "Pose", "exp_se3", "exp_so3", "log_so3", "__version__"]
