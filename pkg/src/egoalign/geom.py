"""Rigid poses, the one-parameter gravity rotation, rays and the face symmetry plane.

Conventions used throughout the package:

* every local world frame is gravity aligned with ``g = (0, 0, 1)`` unless a
  different unit axis is passed explicitly;
* a :class:`Pose6D` stores the *world-from-body* transform, i.e.
  ``X_world = R @ X_body + t``;
* the pan angle ``theta`` and the rotation parameter ``s`` are related by
  ``s = 1 / tan(theta / 2)`` and ``theta = 2 * atan2(1, s)`` in (0, 2*pi).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CriticalConfigurationError, InvalidInputError

GRAVITY = np.array([0.0, 0.0, 1.0])


def _frozen(a, shape=None):
    a = np.array(a, dtype=float)
    if shape is not None and a.shape != shape:
        raise InvalidInputError(f"expected shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


def normalize(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def skew(v):
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _check_axis(g):
    g = np.asarray(g, dtype=float)
    if g.shape != (3,) or abs(np.linalg.norm(g) - 1.0) > 1e-12:
        raise InvalidInputError("gravity axis must be a unit 3-vector")
    return g


def rotation_from_s(s, g=GRAVITY):
    """Rotation about ``g`` parametrized by the scalar ``s`` (quaternion form)."""
    g = _check_axis(g)
    s = float(s)
    return (2.0 * (np.outer(g, g) + s * skew(g)) + (s * s - 1.0) * np.eye(3)) / (1.0 + s * s)


def rotation_about(g, theta):
    """Rodrigues rotation by ``theta`` radians about the unit axis ``g``."""
    g = np.asarray(g, dtype=float)
    G = skew(g)
    return np.eye(3) + np.sin(theta) * G + (1.0 - np.cos(theta)) * (G @ G)


def angle_from_s(s):
    """Pan angle in (0, 2*pi) for a finite ``s``."""
    return 2.0 * np.arctan2(1.0, s)


def s_from_angle(theta):
    half = 0.5 * theta
    sin_half = np.sin(half)
    if abs(sin_half) < 1e-15:
        raise CriticalConfigurationError("zero pan angle has no finite s")
    return np.cos(half) / sin_half


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    return w if np.ndim(w) else float(w)


def s_from_rotation(R, g=GRAVITY, tol=1e-6):
    """Inverse of :func:`rotation_from_s`.

    Raises :class:`CriticalConfigurationError` when ``R`` is the identity
    (``theta = 0`` and ``s`` is unbounded).
    """
    g = _check_axis(g)
    R = np.asarray(R, dtype=float)
    if np.linalg.norm(R @ g - g) > tol or np.linalg.norm(R.T @ R - np.eye(3)) > tol:
        raise InvalidInputError("R is not a rotation about g")
    # sin/cos of the pan angle from the antisymmetric and symmetric parts
    sin_t = 0.5 * g @ np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    cos_t = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(sin_t, cos_t)
    if abs(theta) < 1e-12:
        raise CriticalConfigurationError("R is the identity; local frames share their pan")
    return s_from_angle(theta)


@dataclass(frozen=True)
class GravityRotation:
    s: float
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        object.__setattr__(self, "g", _frozen(_check_axis(self.g)))
        object.__setattr__(self, "s", float(self.s))

    @property
    def matrix(self):
        return rotation_from_s(self.s, self.g)

    @property
    def theta(self):
        return angle_from_s(self.s)

    def inverse(self):
        return GravityRotation(-self.s, self.g)


@dataclass(frozen=True)
class Pose6D:
    """World-from-body rigid transform at a timestamp (seconds)."""

    rotation: np.ndarray
    translation: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9 or np.linalg.det(R) < 0:
            raise InvalidInputError("pose rotation is not a proper rotation")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        object.__setattr__(self, "time", float(self.time))

    def apply(self, X):
        """Map body-frame point(s) into the world frame."""
        return np.asarray(X) @ self.rotation.T + self.translation

    def apply_inverse(self, X):
        """Map world-frame point(s) into the body frame."""
        return (np.asarray(X) - self.translation) @ self.rotation

    def compose(self, other):
        """``self * other`` (apply ``other`` first)."""
        return Pose6D(self.rotation @ other.rotation,
                      self.rotation @ other.translation + self.translation, other.time)

    def inverse(self):
        return Pose6D(self.rotation.T, -self.rotation.T @ self.translation, self.time)

    def __eq__(self, other):
        if not isinstance(other, Pose6D):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation)
                and self.time == other.time)

    __hash__ = None


def check_stream(poses):
    """Raise unless timestamps strictly increase."""
    times = [p.time for p in poses]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise InvalidInputError("pose timestamps must strictly increase")


@dataclass(frozen=True)
class CameraIntrinsics:
    K: np.ndarray
    width: int = 640
    height: int = 480

    def __post_init__(self):
        K = _frozen(self.K, (3, 3))
        if K[2, 2] != 1.0 or np.any(np.tril(K, -1) != 0) or abs(np.linalg.det(K)) < 1e-12:
            raise InvalidInputError("K must be invertible upper-triangular with K[2,2] == 1")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def simple(cls, f=500.0, width=640, height=480):
        return cls(np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]]),
                   width, height)

    def contains(self, u):
        return 0.0 <= u[0] < self.width and 0.0 <= u[1] < self.height

    def __eq__(self, other):
        if not isinstance(other, CameraIntrinsics):
            return NotImplemented
        return np.array_equal(self.K, other.K) and (self.width, self.height) == (other.width, other.height)

    __hash__ = None


def backproject(u, intr):
    """Unit ray through pixel ``u`` in the camera frame."""
    K = intr.K if isinstance(intr, CameraIntrinsics) else np.asarray(intr)
    return normalize(np.linalg.solve(K, [u[0], u[1], 1.0]))


def project(X_cam, intr):
    """Pinhole projection of camera-frame point(s) to pixels."""
    K = intr.K if isinstance(intr, CameraIntrinsics) else np.asarray(intr)
    q = np.asarray(X_cam) @ K.T
    return q[..., :2] / q[..., 2:3]


# body frame: x right, y forward, z up; camera: x right, y down, z forward
_CAM_FROM_BODY = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class RigCalibration:
    """Camera-IMU extrinsics of one glasses rig.

    ``cam_rotation``/``cam_translation`` map IMU coordinates into the
    observing camera (``X_cam = R X_imu + t``). ``left_cam``/``right_cam``
    are the stereo camera centres in the IMU frame that define the face
    symmetry plane.
    """

    cam_rotation: np.ndarray
    cam_translation: np.ndarray
    left_cam: np.ndarray
    right_cam: np.ndarray

    def __post_init__(self):
        R = _frozen(self.cam_rotation, (3, 3))
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9 or np.linalg.det(R) < 0:
            raise InvalidInputError("camera_from_imu rotation is not a proper rotation")
        object.__setattr__(self, "cam_rotation", R)
        object.__setattr__(self, "cam_translation", _frozen(self.cam_translation, (3,)))
        object.__setattr__(self, "left_cam", _frozen(self.left_cam, (3,)))
        object.__setattr__(self, "right_cam", _frozen(self.right_cam, (3,)))
        if np.linalg.norm(self.right_cam - self.left_cam) <= 1e-6:
            raise InvalidInputError("left and right cameras coincide")

    @classmethod
    def default(cls, baseline=0.14):
        """Forward-looking camera at the left eye of a symmetric stereo rig."""
        left = np.array([-baseline / 2, 0.0, 0.0])
        right = np.array([baseline / 2, 0.0, 0.0])
        return cls(_CAM_FROM_BODY, -_CAM_FROM_BODY @ left, left, right)

    @property
    def camera_center(self):
        """Observing camera centre in the IMU frame."""
        return -self.cam_rotation.T @ self.cam_translation

    def camera_pose(self, imu_pose):
        """World-from-camera pose given the world-from-IMU pose."""
        R = imu_pose.rotation @ self.cam_rotation.T
        return Pose6D(R, imu_pose.apply(self.camera_center), imu_pose.time)

    def __eq__(self, other):
        if not isinstance(other, RigCalibration):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("cam_rotation", "cam_translation", "left_cam", "right_cam"))

    __hash__ = None


@dataclass(frozen=True)
class SymmetryPlane:
    n: np.ndarray
    d: float
    midpoint: np.ndarray

    def basis(self):
        """Orthonormal frame whose first column is ``n`` (the S-frame axes)."""
        n = self.n
        helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
        b2 = normalize(helper - (helper @ n) * n)
        b3 = np.cross(n, b2)
        return np.column_stack([n, b2, b3])

    def distance(self, X):
        return float(self.n @ X + self.d)


def symmetry_plane(rig):
    diff = rig.right_cam - rig.left_cam
    if np.linalg.norm(diff) <= 1e-6:
        raise InvalidInputError("left and right cameras coincide")
    n = normalize(diff)
    S = 0.5 * (rig.right_cam + rig.left_cam)
    return SymmetryPlane(_frozen(n), float(-n @ S), _frozen(S))
