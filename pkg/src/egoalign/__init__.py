"""Align the local frames of two ego-motion streams from mutual point tracks."""
from .errors import (CriticalConfigurationError, EgoAlignError, GaugeDeficiencyError,
                     InputConsistencyError, InternalConsistencyError, InvalidInputError,
                     NoSolutionError, RobustFailureError, SolverDegenerateError,
                     UnderConstrainedError)
from .geom import (GRAVITY, CameraIntrinsics, GravityRotation, Pose6D, RigCalibration,
                   SymmetryPlane, backproject, project, rotation_from_s, s_from_rotation,
                   symmetry_plane)
from .qepsolve import (AlignmentEstimate, ConstraintMode, Direction, PointCorrespondence,
                       assemble_pencil, detect_critical, determinant_polynomial, solve,
                       solve_rect_qep, solve_square_qep)
from .robust import RansacConfig, ransac_align

__version__ = "0.1.0"

__all__ = [
    "CriticalConfigurationError", "EgoAlignError", "GaugeDeficiencyError", "InputConsistencyError",
    "InternalConsistencyError", "InvalidInputError", "NoSolutionError", "RobustFailureError",
    "SolverDegenerateError", "UnderConstrainedError",
    "GRAVITY", "CameraIntrinsics", "GravityRotation", "Pose6D", "RigCalibration", "SymmetryPlane",
    "backproject", "project", "rotation_from_s", "s_from_rotation", "symmetry_plane",
    "AlignmentEstimate", "ConstraintMode", "Direction", "PointCorrespondence", "assemble_pencil",
    "detect_critical", "determinant_polynomial", "solve", "solve_rect_qep", "solve_square_qep",
    "RansacConfig", "ransac_align",
]
