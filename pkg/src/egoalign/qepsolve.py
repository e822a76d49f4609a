"""Gravity-constrained QEP solver for the relative pose of two ego-motion frames.

Unknowns are stacked as ``x = [L; K; t; 1]`` where ``L`` is the tracked point
of rig B in B's IMU frame, ``K`` the tracked point of rig A in A's IMU frame
and ``t`` the translation of B's local frame in A's local frame. The pan
``R = rotation_from_s(s)`` enters quadratically, so every observation gives
three rows of the pencil ``D0 + D1 s + D2 s^2`` (rank two because of the cross
product with the observed ray).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from .errors import (CriticalConfigurationError, InternalConsistencyError, InvalidInputError,
                     NoSolutionError, SolverDegenerateError, UnderConstrainedError)
from .geom import (GRAVITY, Pose6D, angle_from_s, rotation_about, rotation_from_s,
                   s_from_angle, skew, symmetry_plane, wrap_angle)


class Direction(str, Enum):
    A_SEES_B = "AseesB"
    B_SEES_A = "BseesA"


@dataclass(frozen=True)
class PointCorrespondence:
    """One detection of the counterpart's tracked point.

    ``observer_cam_pose`` is world-from-camera in the observer's local frame,
    ``target_imu_pose`` world-from-IMU of the tracked rig in its own frame.
    """

    direction: Direction
    ray: np.ndarray
    observer_cam_pose: Pose6D
    target_imu_pose: Pose6D

    def __post_init__(self):
        ray = np.array(self.ray, dtype=float)
        if ray.shape != (3,) or abs(np.linalg.norm(ray) - 1.0) > 1e-9:
            raise InvalidInputError("ray must be a unit 3-vector")
        ray.setflags(write=False)
        object.__setattr__(self, "ray", ray)
        object.__setattr__(self, "direction", Direction(self.direction))

    @property
    def world_ray(self):
        return self.observer_cam_pose.rotation @ self.ray

    @property
    def center(self):
        return self.observer_cam_pose.translation


# --------------------------------------------------------------------------
# constraint modes


@dataclass(frozen=True)
class ConstraintMode:
    """How a lever arm is conditioned.

    ``kind`` is one of ``free``, ``sym-hard``, ``sym-soft``, ``prior-hard``,
    ``prior-soft``. ``free`` leaves the arm unconstrained; it is only well
    posed in the bidirectional problem with non-degenerate head motion.
    """

    kind: str
    prior: np.ndarray | None = None
    weight: float = 1.0

    KINDS = ("free", "sym-hard", "sym-soft", "prior-hard", "prior-soft")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidInputError(f"unknown constraint kind {self.kind!r}")
        if self.kind.endswith("soft") and not self.weight > 0:
            raise InvalidInputError("soft constraint weight must be positive")
        if self.kind.startswith("prior"):
            if self.prior is None:
                raise InvalidInputError(f"{self.kind} needs a prior lever arm")
            p = np.array(self.prior, dtype=float).reshape(3)
            p.setflags(write=False)
            object.__setattr__(self, "prior", p)

    @classmethod
    def free(cls):
        return cls("free")

    @classmethod
    def symmetry_hard(cls):
        return cls("sym-hard")

    @classmethod
    def symmetry_soft(cls, weight=1.0):
        return cls("sym-soft", weight=weight)

    @classmethod
    def prior_hard(cls, prior):
        return cls("prior-hard", prior)

    @classmethod
    def prior_soft(cls, prior, weight=1.0):
        return cls("prior-soft", prior, weight)


@dataclass(frozen=True)
class LeverParam:
    """Affine map from solved columns to the lever arm: ``lever = base + basis @ p``."""

    base: np.ndarray
    basis: np.ndarray
    extra_rows: np.ndarray  # soft-constraint rows over [p; 1]

    @property
    def ncols(self):
        return self.basis.shape[1]


def lever_param(mode, rig):
    z3 = np.zeros(3)
    if mode.kind == "free":
        return LeverParam(z3, np.eye(3), np.zeros((0, 4)))
    if mode.kind == "prior-hard":
        return LeverParam(mode.prior.copy(), np.zeros((3, 0)), np.zeros((0, 1)))
    if mode.kind == "prior-soft":
        rows = mode.weight * np.hstack([-np.eye(3), mode.prior[:, None]])
        return LeverParam(z3, np.eye(3), rows)
    if rig is None:
        raise InvalidInputError("symmetry constraints need a rig calibration")
    plane = symmetry_plane(rig)
    if mode.kind == "sym-soft":
        rows = mode.weight * np.append(plane.n, plane.d)[None, :]
        return LeverParam(z3, np.eye(3), rows)
    # sym-hard: lever = S + Q @ [0, a, b]
    Q = plane.basis()
    return LeverParam(plane.midpoint.copy(), Q[:, 1:], np.zeros((0, 3)))


# --------------------------------------------------------------------------
# per-point rows


def _point_blocks(c, g, sign):
    """Coefficient blocks ``(A, B, C)`` over ``[lever; t; 1]`` for one point.

    ``sign`` is +1 when A observes B and -1 when B observes A (the relative
    rotation then appears transposed, i.e. ``s -> -s``, and ``t`` is rotated
    together with the target point).
    """
    g = np.asarray(g, dtype=float)
    W = skew(c.world_ray)
    Rt = c.target_imu_pose.rotation
    tt = c.target_imu_pose.translation
    cc = c.center
    G0 = 2.0 * np.outer(g, g) - np.eye(3)
    G1 = 2.0 * sign * skew(g)
    I3 = np.eye(3)
    A = np.hstack([G0 @ Rt, I3 if sign > 0 else -G0, (G0 @ tt - cc)[:, None]])
    B = np.hstack([G1 @ Rt, np.zeros((3, 3)) if sign > 0 else -G1, (G1 @ tt)[:, None]])
    C = np.hstack([Rt, sign * I3, (tt - cc)[:, None]])
    return W @ A, W @ B, W @ C


def build_onedir_rows(c, g=GRAVITY):
    """Rows of ``A + B s + C s^2`` over ``[L; t; 1]`` for an A-observes-B point."""
    if c.direction is not Direction.A_SEES_B:
        raise InvalidInputError("one-directional rows need an A-observes-B correspondence")
    return _point_blocks(c, g, +1.0)


def build_bidir_rows(c, g=GRAVITY):
    """Rows of ``A' + B' s + C' s^2`` over ``[K; t; 1]`` for a B-observes-A point."""
    if c.direction is not Direction.B_SEES_A:
        raise InvalidInputError("opposite-direction rows need a B-observes-A correspondence")
    return _point_blocks(c, g, -1.0)


def point_rows(c, g=GRAVITY):
    if c.direction is Direction.A_SEES_B:
        return build_onedir_rows(c, g)
    return build_bidir_rows(c, g)


# --------------------------------------------------------------------------
# estimate and pencil


@dataclass(frozen=True)
class AlignmentEstimate:
    """Relative pose of B's local frame in A's plus the recovered lever arms."""

    s: float
    translation: np.ndarray
    lever_L: np.ndarray
    lever_K: np.ndarray | None = None
    residual: float = 0.0
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        object.__setattr__(self, "s", float(self.s))
        for k in ("translation", "lever_L", "lever_K", "g"):
            v = getattr(self, k)
            if v is not None:
                v = np.array(v, dtype=float).reshape(3)
                v.setflags(write=False)
                object.__setattr__(self, k, v)
        if not self.residual >= 0:
            raise InvalidInputError("residual must be non-negative")

    @property
    def rotation(self):
        return rotation_from_s(self.s, self.g)

    @property
    def theta(self):
        """Pan angle in (0, 2*pi)."""
        return angle_from_s(self.s)

    @property
    def theta_deg(self):
        return math.degrees(self.theta)

    @classmethod
    def from_angle(cls, theta, translation, lever_L, lever_K=None, residual=0.0, g=GRAVITY):
        return cls(s_from_angle(theta), translation, lever_L, lever_K, residual, g)

    def replace(self, **kw):
        d = dict(s=self.s, translation=self.translation, lever_L=self.lever_L,
                 lever_K=self.lever_K, residual=self.residual, g=self.g)
        d.update(kw)
        return AlignmentEstimate(**d)

    def to_dict(self):
        return {
            "s": self.s,
            "theta_deg": self.theta_deg,
            "rotation": self.rotation.ravel().tolist(),
            "translation": self.translation.tolist(),
            "lever_L": self.lever_L.tolist(),
            "lever_K": None if self.lever_K is None else self.lever_K.tolist(),
            "residual": self.residual,
            "g": self.g.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["s"], d["translation"], d["lever_L"], d.get("lever_K"),
                   d.get("residual", 0.0), d.get("g", GRAVITY))


@dataclass(frozen=True)
class QepPencil:
    D0: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    columns: dict
    lever_L: LeverParam
    lever_K: LeverParam | None
    n_point_rows: int
    g: np.ndarray

    @property
    def shape(self):
        return self.D0.shape

    @property
    def bidirectional(self):
        return self.lever_K is not None

    def matrix(self, s):
        return self.D0 + s * self.D1 + (s * s) * self.D2

    def residual(self, s, x):
        """Algebraic residual with the common ``(1 + s^2)`` factor removed."""
        return float(np.linalg.norm(self.matrix(s) @ x) / (1.0 + s * s))

    def unknown_vector(self, est):
        """Solved-column vector reproducing ``est`` (inverse of :meth:`unpack`)."""
        x = np.zeros(self.D0.shape[1])
        x[-1] = 1.0
        x[self.columns["t"]] = est.translation
        for name, lp, lever in (("L", self.lever_L, est.lever_L), ("K", self.lever_K, est.lever_K)):
            if lp is None or lp.ncols == 0:
                continue
            p, *_ = np.linalg.lstsq(lp.basis, lever - lp.base, rcond=None)
            x[self.columns[name]] = p
        return x

    def unpack(self, s, x):
        x = np.asarray(x, dtype=float)
        L = self.lever_L.base + self.lever_L.basis @ x[self.columns["L"]]
        K = None
        if self.lever_K is not None:
            K = self.lever_K.base + self.lever_K.basis @ x[self.columns["K"]]
        return AlignmentEstimate(s, x[self.columns["t"]], L, K, self.residual(s, x), self.g)


def minimal_points(lever_L, lever_K=None):
    """Fewest correspondences making the pencil square in unknown count."""
    ncols = lever_L.ncols + (lever_K.ncols if lever_K is not None else 0) + 3 + 1
    extra = lever_L.extra_rows.shape[0] + (lever_K.extra_rows.shape[0] if lever_K is not None else 0)
    need = max(math.ceil((ncols - extra) / 2), 1)
    if lever_K is not None:
        need = max(need, 2)
    return need


def _split(correspondences):
    ab = sum(c.direction is Direction.A_SEES_B for c in correspondences)
    return ab, len(correspondences) - ab


def assemble_pencil(correspondences, mode_L, mode_K=None, rig=None, rig_K=None, g=GRAVITY):
    """Stack point rows and lever-arm conditioning into ``(D0, D1, D2)``.

    The problem is bidirectional as soon as any B-observes-A point is present;
    then ``mode_K`` is required and at least one point per direction. Soft
    constraint rows carry the same ``(1 + s^2)`` factor as point rows so their
    relative weight does not depend on the pan.
    """
    g = np.asarray(g, dtype=float)
    correspondences = list(correspondences)
    n_ab, n_ba = _split(correspondences)
    bidir = n_ba > 0
    pL = lever_param(mode_L, rig)
    pK = None
    if bidir:
        if mode_K is None:
            raise InvalidInputError("bidirectional problem needs a constraint mode for K")
        pK = lever_param(mode_K, rig_K if rig_K is not None else rig)
    need = minimal_points(pL, pK)
    if len(correspondences) < need or (bidir and n_ab == 0):
        raise UnderConstrainedError(need, len(correspondences),
                                    "at least one point per direction" if bidir else "")

    cols = {}
    k = 0
    cols["L"] = slice(k, k + pL.ncols)
    k += pL.ncols
    if pK is not None:
        cols["K"] = slice(k, k + pK.ncols)
        k += pK.ncols
    cols["t"] = slice(k, k + 3)
    k += 3
    cols["hom"] = slice(k, k + 1)
    n = k + 1

    n_pts = 3 * len(correspondences)
    n_extra = pL.extra_rows.shape[0] + (pK.extra_rows.shape[0] if pK is not None else 0)
    D = np.zeros((3, n_pts + n_extra, n))
    for i, c in enumerate(correspondences):
        blocks = point_rows(c, g)
        lp, lc = (pL, cols["L"]) if c.direction is Direction.A_SEES_B else (pK, cols["K"])
        r = slice(3 * i, 3 * i + 3)
        for j, blk in enumerate(blocks):
            D[j, r, lc] = blk[:, :3] @ lp.basis
            D[j, r, cols["t"]] = blk[:, 3:6]
            D[j, r, -1] = blk[:, 6] + blk[:, :3] @ lp.base
    row = n_pts
    for lp, lc in ((pL, cols["L"]), (pK, cols.get("K"))):
        if lp is None or lp.extra_rows.shape[0] == 0:
            continue
        m = lp.extra_rows.shape[0]
        for j in (0, 2):
            D[j, row:row + m, lc] = lp.extra_rows[:, :-1]
            D[j, row:row + m, -1] = lp.extra_rows[:, -1]
        row += m
    return QepPencil(D[0], D[1], D[2], cols, pL, pK, n_pts, g)


# --------------------------------------------------------------------------
# solvers


def _companion_eig(M0, M1, M2):
    n = M0.shape[0]
    I = np.eye(n)
    Z = np.zeros((n, n))
    A = np.block([[Z, I], [-M0, -M1]])
    B = np.block([[I, Z], [Z, M2]])
    w, V = scipy.linalg.eig(A, B, homogeneous_eigvals=True)
    return w[0], w[1], V


def qep_eigenpairs(pencil):
    """All finite (possibly complex) eigenpairs of the normal-equation pencil.

    Returns ``(lambdas, X)`` with eigenvectors as columns of ``X`` (length n).
    """
    D0, D1, D2 = pencil.D0, pencil.D1, pencil.D2
    M0, M1, M2 = D0.T @ D0, D0.T @ D1, D0.T @ D2
    n = M0.shape[0]
    reverse = np.linalg.cond(M2) > 1e12 and np.linalg.cond(M0) < np.linalg.cond(M2)
    if reverse:
        alpha, beta, V = _companion_eig(M2, M1, M0)
        alpha, beta = beta, alpha
    else:
        alpha, beta, V = _companion_eig(M0, M1, M2)
    if not np.all(np.isfinite(V)):
        raise SolverDegenerateError("companion eigen-decomposition failed")
    finite = np.abs(beta) > 1e-13 * np.abs(alpha)
    lam = np.full(alpha.shape, np.inf, dtype=complex)
    lam[finite] = alpha[finite] / beta[finite]
    X = np.empty((n, alpha.size), dtype=complex)
    for i in range(alpha.size):
        z1, z2 = V[:n, i], V[n:, i]
        # z = [x; mu x] with mu the eigenvalue of the pencil actually solved
        X[:, i] = z1 if np.linalg.norm(z1) >= np.linalg.norm(z2) else z2
    return lam[finite], X[:, finite]


def _dehomogenize(x):
    x = np.asarray(x)
    if abs(x[-1]) < 1e-10 * np.linalg.norm(x):
        return None
    return np.real(x / x[-1])


def solve_square_qep(pencil):
    """Real solutions ``(s, x)`` of the normal-equation QEP, ``x[-1] == 1``."""
    lam, X = qep_eigenpairs(pencil)
    out = []
    for mu, x in zip(lam, X.T):
        if abs(mu.imag) > 1e-6 * (1.0 + abs(mu.real)):
            continue
        xd = _dehomogenize(x)
        if xd is None:
            continue
        out.append((float(mu.real), xd))
    out.sort(key=lambda p: p[0])
    return out


def _sigma_min_sq(pencil, s):
    sv = np.linalg.svd(pencil.matrix(s) / (1.0 + s * s), compute_uv=False)
    return sv[-1] ** 2


def solve_rect_qep(pencil, seeds, window_deg=5.0):
    """Refine seeds by minimizing the smallest singular value of the rectangular pencil.

    Each seed is refined within +-``window_deg`` of its pan angle. Seeds whose
    minimum lands on the window edge count as not converged; if no seed
    converges, the square solutions are returned and a warning is issued.
    """
    seeds = [float(s) for s in seeds]
    if not seeds:
        raise InvalidInputError("rectangular refinement needs at least one seed")
    w = math.radians(window_deg)
    out = []
    for s0 in seeds:
        t0 = angle_from_s(s0)
        lo, hi = max(t0 - w, 1e-9), min(t0 + w, 2 * math.pi - 1e-9)
        res = minimize_scalar(lambda t: _sigma_min_sq(pencil, s_from_angle(t)), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12, "maxiter": 500})
        t = float(res.x)
        if not res.success or min(t - lo, hi - t) < 1e-7:
            continue
        s = s_from_angle(t)
        _, _, Vt = np.linalg.svd(pencil.matrix(s))
        x = _dehomogenize(Vt[-1])
        if x is None:
            continue
        if all(abs(s - q) >= 1e-6 for q, _ in out):
            out.append((s, x))
    if not out:
        warnings.warn("rectangular QEP refinement did not converge; using square solutions",
                      RuntimeWarning, stacklevel=2)
        return solve_square_qep(pencil)
    out.sort(key=lambda p: p[0])
    return out


def filter_solutions(candidates, pencil, min_deg=1.0, max_deg=359.0):
    """Keep real solutions whose pan angle lies in ``[min_deg, max_deg]``."""
    out = []
    for s, x in candidates:
        if not np.isfinite(s):
            continue
        th = math.degrees(angle_from_s(s))
        if min_deg <= th <= max_deg:
            out.append(pencil.unpack(s, x))
    if not out:
        raise NoSolutionError("no real solution in the admissible pan range")
    return out


# --------------------------------------------------------------------------
# residuals and selection


def predicted_vector(c, est):
    """Vector from the observer camera to the predicted tracked point (observer frame)."""
    R = est.rotation
    t = est.translation
    if c.direction is Direction.A_SEES_B:
        X = R @ c.target_imu_pose.apply(est.lever_L) + t
    else:
        if est.lever_K is None:
            raise InvalidInputError("estimate has no lever arm K")
        X = R.T @ (c.target_imu_pose.apply(est.lever_K) - t)
    return X - c.center


def correspondence_residual(c, est):
    """Algebraic point residual ``|w x (X - c)|`` in metres (rows divided by 1+s^2)."""
    return float(np.linalg.norm(np.cross(c.world_ray, predicted_vector(c, est))))


def angular_residual(c, est):
    """Sine of the angle between observed and predicted rays; 1 when behind the camera."""
    v = predicted_vector(c, est)
    nv = np.linalg.norm(v)
    if nv == 0 or c.world_ray @ v <= 0:
        return 1.0
    return float(np.linalg.norm(np.cross(c.world_ray, v)) / nv)


def select_solution(candidates, holdout):
    """Candidate with the smallest holdout residual; ties go to the smaller ``|s|``."""
    candidates = list(candidates)
    if not candidates:
        raise NoSolutionError("no candidates to select from")
    if isinstance(holdout, PointCorrespondence):
        holdout = [holdout]
    scores = [math.sqrt(sum(correspondence_residual(c, e) ** 2 for c in holdout)) for e in candidates]
    best = min(scores)
    tied = [e for e, sc in zip(candidates, scores) if sc - best <= 1e-12]
    return min(tied, key=lambda e: abs(e.s))


def solve(correspondences, mode_L, mode_K=None, rig=None, rig_K=None, g=GRAVITY, rect=False,
          holdout=None):
    """Full closed-form pipeline: assemble, solve, filter, select.

    Without a holdout the candidate with the smallest full-pencil residual wins.
    """
    pencil = assemble_pencil(correspondences, mode_L, mode_K, rig, rig_K, g)
    cands = solve_square_qep(pencil)
    if rect and cands:
        cands = solve_rect_qep(pencil, [s for s, _ in cands])
    ests = filter_solutions(cands, pencil)
    if holdout is not None:
        return select_solution(ests, holdout)
    return min(ests, key=lambda e: (e.residual, abs(e.s)))


# --------------------------------------------------------------------------
# critical configuration


def rotate_b_frame(correspondences, phi, g=GRAVITY):
    """Re-express every B-frame pose in B's local frame rotated by ``phi`` about ``g``."""
    Rp = rotation_about(g, phi)
    out = []
    for c in correspondences:
        if c.direction is Direction.A_SEES_B:
            p = c.target_imu_pose
            out.append(PointCorrespondence(c.direction, c.ray, c.observer_cam_pose,
                                           Pose6D(Rp @ p.rotation, Rp @ p.translation, p.time)))
        else:
            p = c.observer_cam_pose
            out.append(PointCorrespondence(c.direction, c.ray,
                                           Pose6D(Rp @ p.rotation, Rp @ p.translation, p.time),
                                           c.target_imu_pose))
    return out


def derotate(est, phi):
    """Undo a pre-rotation of B's frame by ``phi``: the pan grows by ``phi``."""
    half = 0.5 * (est.theta + phi)
    sn = math.sin(half)
    if abs(sn) < 1e-15:
        # a zero pan has no finite s; 1e15 reproduces the identity to rounding
        sn = math.copysign(1e-15, sn) if sn else 1e-15
    return est.replace(s=math.cos(half) / sn)


def scene_scale(correspondences, est):
    """Median observer-to-target distance implied by ``est``."""
    d = [np.linalg.norm(predicted_vector(c, est)) for c in correspondences]
    return float(np.median(d))


def _agree(e1, e2, scale, tol_deg, tol_frac):
    dth = abs(wrap_angle(e1.theta - e2.theta))
    return math.degrees(dth) < tol_deg and np.linalg.norm(e1.translation - e2.translation) < tol_frac * scale


def detect_critical(correspondences, mode_L, mode_K=None, rig=None, rig_K=None, g=GRAVITY,
                    angles_deg=(120.0, 240.0), tol_deg=0.5, tol_frac=0.01, **solve_kw):
    """Run the solver on the original and two pan-rotated copies of B's frame.

    Returns ``(estimate, critical)``. ``critical`` is False when the run on the
    original frames agrees with at least one rotated run. When only the two
    rotated runs agree (the original run failed or disagrees, as happens at a
    zero relative pan) their consensus is returned with ``critical=True``;
    with no agreeing pair the best-residual estimate is returned, also flagged.
    """
    correspondences = list(correspondences)
    runs = []
    for phi_deg in (0.0,) + tuple(angles_deg):
        phi = math.radians(phi_deg)
        cs = rotate_b_frame(correspondences, phi, g) if phi_deg else correspondences
        try:
            est = solve(cs, mode_L, mode_K, rig, rig_K, g, **solve_kw)
        except (NoSolutionError, SolverDegenerateError, CriticalConfigurationError):
            runs.append(None)
            continue
        runs.append(derotate(est, phi) if phi_deg else est)
    ok = [e for e in runs if e is not None]
    if not ok:
        raise NoSolutionError("all three pan-rotated solves failed")
    scale = max(scene_scale(correspondences, min(ok, key=lambda e: e.residual)), 1e-6)
    orig = runs[0]
    if orig is not None and any(e is not None and _agree(orig, e, scale, tol_deg, tol_frac)
                                for e in runs[1:]):
        return orig, False
    rot = [e for e in runs[1:] if e is not None]
    if len(rot) == 2 and _agree(rot[0], rot[1], scale, tol_deg, tol_frac):
        return min(rot, key=lambda e: e.residual), True
    return min(ok, key=lambda e: e.residual), True


# --------------------------------------------------------------------------
# quartic reduction (verification oracle for the minimal one-directional case)


@dataclass(frozen=True)
class DeterminantPolynomial:
    sextic: np.ndarray
    quartic: np.ndarray
    remainder_rel: float
    projector_drift: float

    def roots(self):
        return np.roots(self.quartic)


def determinant_polynomial(pencil, sample_nodes=None):
    """Reduce the minimal 3-point symmetric one-directional QEP to a quartic in ``s``.

    The translation columns are eliminated with the projector onto the
    orthogonal complement of their (s-independent) span. One row per point of
    the reduced 9x3 system gives a 3x3 determinant of degree six, which is
    interpolated at seven nodes and divided by ``1 + s^2``.
    """
    if pencil.bidirectional or pencil.lever_L.ncols != 2 or pencil.n_point_rows != 9 \
            or pencil.D0.shape[0] != 9:
        raise InvalidInputError("expects a 3-point one-directional symmetry-hard pencil")
    tcols = pencil.columns["t"]
    keep = [0, 1, pencil.D0.shape[1] - 1]

    def projector(s):
        T = pencil.matrix(s)[:, tcols]
        return T @ np.linalg.solve(T.T @ T, T.T)

    P = projector(0.0)
    drift = float(np.max(np.abs(P - projector(1.0))))
    if drift > 1e-9:
        raise InternalConsistencyError(f"translation projector depends on s (drift {drift:.2e})")
    E = np.eye(9) - P

    def reduced(s):
        return E @ pencil.matrix(s)[:, keep]

    probe = reduced(0.37)
    rows = [3 * i + int(np.argmax(np.linalg.norm(probe[3 * i:3 * i + 3], axis=1))) for i in range(3)]
    if sample_nodes is None:
        sample_nodes = 2.0 * np.cos((2 * np.arange(7) + 1) * np.pi / 14)
    dets = [np.linalg.det(reduced(s)[rows]) for s in sample_nodes]
    sextic = np.polyfit(sample_nodes, dets, 6)
    quartic, rem = np.polydiv(sextic, [1.0, 0.0, 1.0])
    rel = float(np.linalg.norm(rem) / np.linalg.norm(sextic))
    if rel > 1e-8:
        raise InternalConsistencyError(f"determinant not divisible by 1+s^2 (rel {rel:.2e})")
    return DeterminantPolynomial(sextic, quartic, rel, drift)
