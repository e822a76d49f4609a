"""Factor-graph refinement with Gaussian belief propagation in information form.

Every variable is a 4-DoF camera state ``(x, y, z, theta)``: the IMU position
in the common frame (A's local frame) and the pan of the camera's local VIO
frame relative to the common frame. The full orientation of a keyframe is
``Rot(theta) @ R_vio`` where ``R_vio`` is the (fixed) gravity-aligned VIO
rotation, so only the pan is refined.

Internally angles are kept continuous so that linearization points and
messages stay on one branch; residuals use wrapped angle differences and
:class:`CameraState` wraps on output.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GaugeDeficiencyError, InputConsistencyError, InvalidInputError
from .geom import GRAVITY, CameraIntrinsics, Pose6D, RigCalibration, rotation_about, skew, wrap_angle
from .qepsolve import AlignmentEstimate

log = logging.getLogger(__name__)

POSE_PRIOR = "PosePrior"
ODOMETRY = "Odometry"
DETECTION = "Detection"

_GX = skew(GRAVITY)


def _rot(theta):
    return rotation_about(GRAVITY, theta)


@dataclass(frozen=True)
class CameraState:
    """Position in the common frame (metres) and pan (radians, wrapped)."""

    x: float
    y: float
    z: float
    theta: float

    def __post_init__(self):
        for k in ("x", "y", "z", "theta"):
            object.__setattr__(self, k, float(getattr(self, k)))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def from_vector(cls, v):
        return cls(*np.asarray(v, dtype=float))

    def as_vector(self):
        return np.array([self.x, self.y, self.z, self.theta])


@dataclass
class GaussianInfo:
    eta: np.ndarray
    lam: np.ndarray

    @classmethod
    def zero(cls, dim=4):
        return cls(np.zeros(dim), np.zeros((dim, dim)))

    def mean(self):
        return np.linalg.solve(self.lam, self.eta)

    def __add__(self, other):
        return GaussianInfo(self.eta + other.eta, self.lam + other.lam)

    def __sub__(self, other):
        return GaussianInfo(self.eta - other.eta, self.lam - other.lam)


# --------------------------------------------------------------------------
# measurement functions


def eval_pose_prior(x):
    """``h = x`` with identity Jacobian."""
    return np.array(x, dtype=float), np.eye(4)


def eval_odometry(x1, x2):
    """Position change expressed in the first state's local frame, plus pan change.

    ``h = [Rot(theta1)^T (p2 - p1); theta2 - theta1]``; Jacobian is 4x8 over
    ``[x1, x2]``.
    """
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    Rt = _rot(x1[3]).T
    dp = x2[:3] - x1[:3]
    h = np.concatenate([Rt @ dp, [x2[3] - x1[3]]])
    J = np.zeros((4, 8))
    J[:3, :3] = -Rt
    J[:3, 4:7] = Rt
    # d/dtheta Rot(theta)^T v = -Rot(theta)^T [g]x v
    J[:3, 3] = -Rt @ (_GX @ dp)
    J[3, 3], J[3, 7] = -1.0, 1.0
    return h, J


def eval_detection(x_obs, x_tgt, obs_vio_rot, tgt_vio_rot, rig, K, lever):
    """Predicted pixel of the target's tracked point in the observer camera.

    ``obs_vio_rot``/``tgt_vio_rot`` are the VIO world-from-IMU rotations of the
    two keyframes in their own local frames, ``rig`` the observer's
    calibration and ``lever`` the tracked point in the target's IMU frame.
    Returns ``(h, J, depth)`` with ``J`` 2x8 over ``[x_obs, x_tgt]``.
    """
    x_obs, x_tgt = np.asarray(x_obs, dtype=float), np.asarray(x_tgt, dtype=float)
    K = K.K if isinstance(K, CameraIntrinsics) else np.asarray(K, dtype=float)
    Ro, Rt = _rot(x_obs[3]), _rot(x_tgt[3])
    arm = Rt @ (tgt_vio_rot @ lever)
    X = x_tgt[:3] + arm                         # tracked point, common frame
    v = X - x_obs[:3]
    M = rig.cam_rotation @ obs_vio_rot.T @ Ro.T  # common -> observer camera
    Xc = M @ v + rig.cam_translation
    q = K @ Xc
    h = q[:2] / q[2]
    dh_dq = np.array([[1.0 / q[2], 0.0, -q[0] / q[2] ** 2],
                      [0.0, 1.0 / q[2], -q[1] / q[2] ** 2]])
    A = dh_dq @ K
    J = np.zeros((2, 8))
    J[:, :3] = -A @ M
    J[:, 3] = A @ (rig.cam_rotation @ obs_vio_rot.T @ (-Ro.T @ (_GX @ v)))
    J[:, 4:7] = A @ M
    J[:, 7] = A @ (M @ (_GX @ arm))
    return h, J, float(Xc[2])


# --------------------------------------------------------------------------
# graph containers


@dataclass
class Variable:
    camera: str
    frame: int
    vio: Pose6D
    mean: np.ndarray            # continuous-angle state


@dataclass
class Factor:
    kind: str
    connected: tuple
    z: np.ndarray
    meas_precision: np.ndarray
    huber_delta: float | None = None
    # detection-only context
    obs_vio_rot: np.ndarray | None = None
    tgt_vio_rot: np.ndarray | None = None
    rig: RigCalibration | None = None
    K: np.ndarray | None = None
    lever: np.ndarray | None = None
    linearization_point: np.ndarray | None = None
    eta: np.ndarray | None = None
    lam: np.ndarray | None = None
    active: bool = True

    @property
    def dim(self):
        return 4 * len(self.connected)

    def evaluate(self, y):
        """``(h, J, ok)`` at the stacked state ``y``."""
        if self.kind == POSE_PRIOR:
            h, J = eval_pose_prior(y)
            return h, J, True
        if self.kind == ODOMETRY:
            h, J = eval_odometry(y[:4], y[4:])
            return h, J, True
        h, J, depth = eval_detection(y[:4], y[4:], self.obs_vio_rot, self.tgt_vio_rot,
                                     self.rig, self.K, self.lever)
        return h, J, depth > 0

    def residual(self, y):
        """``z - h(y)`` with angle components wrapped."""
        h, _, ok = self.evaluate(y)
        r = self.z - h
        if self.kind != DETECTION:
            r[3] = wrap_angle(r[3])
        return r, ok

    def cost(self, y):
        r, ok = self.residual(y)
        return float(r @ self.meas_precision @ r) if ok else 0.0


def linearize(factor, y):
    """Recompute and cache ``(eta_f, lambda_f)`` at the stacked state ``y``.

    With a Huber threshold the measurement precision is scaled down when the
    Mahalanobis residual exceeds it.
    """
    y = np.asarray(y, dtype=float)
    h, J, ok = factor.evaluate(y)
    factor.linearization_point = y.copy()
    if not ok:
        log.info("detection factor %s has non-positive depth; deactivated", factor.connected)
        factor.active = False
        factor.eta, factor.lam = np.zeros(factor.dim), np.zeros((factor.dim, factor.dim))
        return factor.eta, factor.lam
    factor.active = True
    r = factor.z - h
    if factor.kind != DETECTION:
        r[3] = wrap_angle(r[3])
    Lam = factor.meas_precision
    if factor.huber_delta is not None:
        m = math.sqrt(max(float(r @ Lam @ r), 0.0))
        d = factor.huber_delta
        if m > d:
            Lam = Lam * (d * (2.0 * m - d) / m ** 2)
    JtL = J.T @ Lam
    factor.lam = JtL @ J
    factor.eta = JtL @ (J @ y + r)
    return factor.eta, factor.lam


@dataclass(frozen=True)
class NoiseConfig:
    """Factor noise model. Odometry sigmas scale with the distance travelled.

    ``huber_delta`` (in whitened units) robustifies the detection factors only;
    priors and odometry are trusted.
    """

    pixel_sigma: float = 1.0
    odo_t_per_m: float = 0.005
    odo_theta_per_m: float = math.radians(0.1)
    odo_min_dist: float = 0.1
    prior_A_t: float = 1e-6
    prior_A_theta: float = 1e-6
    prior_B_t: float = 0.3
    prior_B_theta: float = math.radians(5.0)
    huber_delta: float | None = None

    def __post_init__(self):
        for k in ("pixel_sigma", "odo_t_per_m", "odo_theta_per_m", "odo_min_dist",
                  "prior_A_t", "prior_A_theta", "prior_B_t", "prior_B_theta"):
            if not getattr(self, k) > 0:
                raise InvalidInputError(f"{k} must be positive")
        if self.huber_delta is not None and not self.huber_delta > 0:
            raise InvalidInputError("huber_delta must be positive or None")


@dataclass(frozen=True)
class GbpConfig:
    damping: float = 0.4
    relin_every: int = 5          # 0 disables relinearization
    max_iters: int = 200
    tol: float = 1e-6
    regularization: float = 1e-9

    def __post_init__(self):
        if not 0 <= self.damping < 1:
            raise InvalidInputError("damping must lie in [0, 1)")
        if self.relin_every < 0 or self.max_iters < 0 or not self.tol > 0:
            raise InvalidInputError("invalid GBP schedule")


@dataclass
class FactorGraph:
    variables: list = field(default_factory=list)
    factors: list = field(default_factory=list)
    levers: dict = field(default_factory=dict)    # "L"/"K" lever arms used
    messages: dict = field(default_factory=dict)  # (factor idx, var idx) -> GaussianInfo
    iteration: int = 0

    def index(self, camera, frame):
        for i, v in enumerate(self.variables):
            if v.camera == camera and v.frame == frame:
                return i
        raise KeyError((camera, frame))

    def add_variable(self, camera, frame, vio, mean):
        self.variables.append(Variable(camera, frame, vio, np.asarray(mean, dtype=float).copy()))
        return len(self.variables) - 1

    def add_factor(self, factor):
        self.factors.append(factor)
        return len(self.factors) - 1

    def stacked(self, factor, means=None):
        means = self.means() if means is None else means
        return np.concatenate([means[i] for i in factor.connected])

    def means(self):
        return [v.mean for v in self.variables]

    def states(self):
        return [CameraState.from_vector(v.mean) for v in self.variables]

    def relinearize(self):
        means = self.means()
        for f in self.factors:
            linearize(f, self.stacked(f, means))

    def total_cost(self, means=None):
        means = self.means() if means is None else means
        return sum(f.cost(self.stacked(f, means)) for f in self.factors)

    def count(self, kind):
        return sum(f.kind == kind for f in self.factors)

    def beliefs(self):
        b = [GaussianInfo.zero() for _ in self.variables]
        for (fi, vi), m in self.messages.items():
            b[vi] = b[vi] + m
        return b

    def reset_messages(self):
        self.messages = {(fi, vi): GaussianInfo.zero()
                         for fi, f in enumerate(self.factors) for vi in f.connected}
        self.iteration = 0


# --------------------------------------------------------------------------
# construction


def _odometry_precision(dist, noise):
    d = max(dist, noise.odo_min_dist)
    st, sth = noise.odo_t_per_m * d, noise.odo_theta_per_m * d
    return np.diag([1 / st ** 2] * 3 + [1 / sth ** 2])


def build_graph(stream_A, stream_B, detections_A, detections_B, init, lever_K, lever_L,
                intrinsics_A, intrinsics_B=None, rig_A=None, rig_B=None, noise=None):
    """Factor graph over all detection-bearing keyframes of both cameras.

    ``detections_A`` are ``(frame, pixel)`` pairs where A observes B's tracked
    point (lever ``lever_L`` in B's IMU frame); ``detections_B`` the reverse
    with ``lever_K``. Frame indices address both streams, which are assumed
    to be synchronized. ``init`` places B's local frame in the common frame.
    """
    noise = noise or NoiseConfig()
    intrinsics_B = intrinsics_B or intrinsics_A
    rig_A = rig_A or RigCalibration.default()
    rig_B = rig_B or rig_A
    streams = {"A": list(stream_A), "B": list(stream_B)}
    dets = {"A": list(detections_A), "B": list(detections_B)}
    for cam, other in (("A", "B"), ("B", "A")):
        for k, _ in dets[cam]:
            if not (0 <= k < len(streams[cam]) and 0 <= k < len(streams[other])):
                raise InputConsistencyError(f"detection by {cam} references missing frame {k}")

    frames = sorted({k for cam in dets for k, _ in dets[cam]})
    if not frames:
        # nothing couples the cameras: keep both full chains
        frames = list(range(min(len(streams["A"]), len(streams["B"]))))
    R0, t0, th0 = init.rotation, init.translation, init.theta
    g = FactorGraph(levers={"L": np.asarray(lever_L, dtype=float),
                            "K": np.asarray(lever_K, dtype=float)})
    for cam in ("A", "B"):
        for k in frames:
            p = streams[cam][k]
            if cam == "A":
                mean = np.concatenate([p.translation, [0.0]])
            else:
                mean = np.concatenate([R0 @ p.translation + t0, [wrap_angle(th0)]])
            g.add_variable(cam, k, p, mean)

    for cam in ("A", "B"):
        first = g.index(cam, frames[0])
        z = g.variables[first].mean.copy()
        if cam == "A":
            prec = np.diag([noise.prior_A_t ** -2] * 3 + [noise.prior_A_theta ** -2])
        else:
            prec = np.diag([noise.prior_B_t ** -2] * 3 + [noise.prior_B_theta ** -2])
        g.add_factor(Factor(POSE_PRIOR, (first,), z, prec))
        # intermediate frames only contribute their (exact) composed VIO delta
        for k1, k2 in zip(frames, frames[1:]):
            s = streams[cam]
            dist = sum(np.linalg.norm(s[j + 1].translation - s[j].translation) for j in range(k1, k2))
            # position change in the (gravity-aligned) local VIO frame
            z = np.concatenate([s[k2].translation - s[k1].translation, [0.0]])
            g.add_factor(Factor(ODOMETRY, (g.index(cam, k1), g.index(cam, k2)), z,
                                _odometry_precision(dist, noise)))

    for obs, tgt, lever, rig, intr in (("A", "B", lever_L, rig_A, intrinsics_A),
                                       ("B", "A", lever_K, rig_B, intrinsics_B)):
        prec = np.eye(2) / noise.pixel_sigma ** 2
        for k, px in dets[obs]:
            g.add_factor(Factor(DETECTION, (g.index(obs, k), g.index(tgt, k)),
                                np.asarray(px, dtype=float), prec, noise.huber_delta,
                                obs_vio_rot=streams[obs][k].rotation,
                                tgt_vio_rot=streams[tgt][k].rotation,
                                rig=rig, K=intr.K, lever=np.asarray(lever, dtype=float)))
    g.relinearize()
    g.reset_messages()
    return g


def graph_from_scenario(scenario, init, lever_K=None, lever_L=None, noise=None):
    """:func:`build_graph` on a simulated scenario."""
    lever_L = init.lever_L if lever_L is None else lever_L
    lever_K = init.lever_K if lever_K is None else lever_K
    if lever_K is None:
        raise InvalidInputError("lever_K is required")
    return build_graph(scenario.streams["A"], scenario.streams["B"], scenario.detections["A"],
                       scenario.detections["B"], init, lever_K, lever_L, scenario.intrinsics,
                       rig_A=scenario.rig, noise=noise)


# --------------------------------------------------------------------------
# inference


@dataclass
class ConvergenceReport:
    iterations: int
    converged: bool
    max_changes: list
    final_cost: float
    initial_cost: float


def _marginalize(eta, lam, keep, reg):
    """Schur complement of the joint information onto the ``keep`` block.

    Returns None when the block to eliminate stays singular even after a
    diagonal regularization of ``reg`` relative to its largest entry.
    """
    idx = np.arange(eta.size)
    k = idx[keep]
    o = idx[~keep]
    Loo = lam[np.ix_(o, o)]
    Lko = lam[np.ix_(k, o)]
    rhs = np.column_stack([Lko.T, eta[o]])
    scale = max(float(np.max(np.abs(np.diag(Loo)))), 1.0)
    X = None
    for eps in (0.0, reg * scale):
        try:
            A = Loo + eps * np.eye(o.size)
            if np.linalg.cond(A) > 1e15:
                continue
            X = np.linalg.solve(A, rhs)
            break
        except np.linalg.LinAlgError:
            continue
    if X is None:
        return None
    lam_m = lam[np.ix_(k, k)] - Lko @ X[:, :-1]
    eta_m = eta[k] - Lko @ X[:, -1]
    return GaussianInfo(eta_m, 0.5 * (lam_m + lam_m.T))


def _belief_means(beliefs, fallback):
    out = []
    for b, fb in zip(beliefs, fallback):
        try:
            if np.linalg.cond(b.lam) > 1e14:
                raise np.linalg.LinAlgError
            out.append(b.mean())
        except np.linalg.LinAlgError:
            out.append(fb.copy())
    return out


def gbp_step(graph, damping, reg=1e-9):
    """One synchronous round of factor->variable messages; returns the new beliefs."""
    beliefs = graph.beliefs()
    new = {}
    for fi, f in enumerate(graph.factors):
        n = len(f.connected)
        for slot, vi in enumerate(f.connected):
            if n == 1:
                msg = GaussianInfo(f.eta.copy(), f.lam.copy())
            else:
                eta, lam = f.eta.copy(), f.lam.copy()
                for oslot, ovi in enumerate(f.connected):
                    if oslot == slot:
                        continue
                    incoming = beliefs[ovi] - graph.messages[(fi, ovi)]
                    sl = slice(4 * oslot, 4 * oslot + 4)
                    eta[sl] += incoming.eta
                    lam[sl, sl] += incoming.lam
                keep = np.zeros(4 * n, dtype=bool)
                keep[4 * slot:4 * slot + 4] = True
                msg = _marginalize(eta, lam, keep, reg)
            old = graph.messages[(fi, vi)]
            if msg is None:
                log.debug("factor %d: singular block, message to %d skipped", fi, vi)
                new[(fi, vi)] = old
                continue
            new[(fi, vi)] = GaussianInfo(damping * old.eta + (1 - damping) * msg.eta,
                                         damping * old.lam + (1 - damping) * msg.lam)
    graph.messages = new
    graph.iteration += 1
    return graph.beliefs()


def gbp_iterate(graph, config=None, dump=None):
    """Run synchronous damped GBP until the belief means settle.

    ``dump`` (a text stream) receives one JSON object per iteration with the
    maximum mean change, the belief means and covariance traces.
    """
    cfg = config or GbpConfig()
    initial_cost = graph.total_cost()
    changes = []
    converged = False
    prev = [m.copy() for m in graph.means()]
    for it in range(1, cfg.max_iters + 1):
        if cfg.relin_every and it > 1 and (it - 1) % cfg.relin_every == 0:
            graph.relinearize()
        beliefs = gbp_step(graph, cfg.damping, cfg.regularization)
        means = _belief_means(beliefs, prev)
        for v, m in zip(graph.variables, means):
            v.mean = m
        change = max((float(np.max(np.abs(a - b))) for a, b in zip(means, prev)), default=0.0)
        changes.append(change)
        if dump is not None:
            traces = []
            for b in beliefs:
                try:
                    traces.append(float(np.trace(np.linalg.inv(b.lam))))
                except np.linalg.LinAlgError:
                    traces.append(None)
            dump.write(json.dumps({"iteration": it, "max_change": change,
                                   "means": [[float(x) for x in m] for m in means],
                                   "cov_trace": traces}) + "\n")
        prev = [m.copy() for m in means]
        # only trust the change once every variable has a proper belief
        if change < cfg.tol and all(np.linalg.eigvalsh(b.lam).min() > 0 for b in beliefs):
            converged = True
            break
    if cfg.max_iters == 0:
        converged = False
    return ConvergenceReport(len(changes), converged, changes, graph.total_cost(), initial_cost)


def _dense_system(graph, means):
    n = 4 * len(graph.variables)
    eta, lam = np.zeros(n), np.zeros((n, n))
    for f in graph.factors:
        e, L = linearize(f, np.concatenate([means[i] for i in f.connected]))
        idx = np.concatenate([np.arange(4 * i, 4 * i + 4) for i in f.connected])
        eta[idx] += e
        lam[np.ix_(idx, idx)] += L
    return eta, lam


def dense_map_solve(graph, relinearize=True, max_iters=50, tol=1e-12):
    """Direct MAP estimate of the stacked system (Gauss-Newton when relinearizing).

    Returns ``(means, covariances)`` as lists of 4-vectors and 4x4 blocks. The
    graph's own linearization caches are restored afterwards.
    """
    saved = [(f.linearization_point, f.eta, f.lam, f.active) for f in graph.factors]
    means = [f.copy() for f in graph.means()]
    if not relinearize:
        # solve the system at the graph's current linearization points
        n = 4 * len(graph.variables)
        eta, lam = np.zeros(n), np.zeros((n, n))
        for f in graph.factors:
            idx = np.concatenate([np.arange(4 * i, 4 * i + 4) for i in f.connected])
            eta[idx] += f.eta
            lam[np.ix_(idx, idx)] += f.lam
        x, cov = _solve_dense(eta, lam)
        return [x[4 * i:4 * i + 4] for i in range(len(means))], _blocks(cov)
    try:
        for _ in range(max(max_iters, 1)):
            eta, lam = _dense_system(graph, means)
            x, cov = _solve_dense(eta, lam)
            new = [x[4 * i:4 * i + 4] for i in range(len(means))]
            step = max(float(np.max(np.abs(a - b))) for a, b in zip(new, means))
            means = new
            if step < tol:
                break
    finally:
        for f, (lp, e, L, a) in zip(graph.factors, saved):
            f.linearization_point, f.eta, f.lam, f.active = lp, e, L, a
    return means, _blocks(cov)


def _solve_dense(eta, lam):
    d = np.sqrt(np.abs(np.diag(lam))) if lam.size else np.zeros(0)
    if d.size == 0 or np.any(d == 0):
        raise GaugeDeficiencyError("information matrix is singular; the graph lacks an anchor")
    # Jacobi scaling so a stiff anchor does not mask a free direction elsewhere
    scaled = lam / np.outer(d, d)
    w = np.linalg.eigvalsh(scaled)
    if w.min() <= 1e-12 * w.max():
        raise GaugeDeficiencyError("information matrix is singular; the graph lacks an anchor")
    cov = np.linalg.inv(scaled) / np.outer(d, d)
    x = np.linalg.solve(scaled, eta / d) / d
    for _ in range(2):
        # refinement recovers digits lost to the spread of prior strengths
        x = x + np.linalg.solve(scaled, (eta - lam @ x) / d) / d
    return x, cov


def _blocks(cov):
    return [cov[4 * i:4 * i + 4, 4 * i:4 * i + 4] for i in range(cov.shape[0] // 4)]


def extract_relative_pose(graph, camera_frame=None):
    """Relative pose of B's local frame from a refined B keyframe (default: the first)."""
    idx = [i for i, v in enumerate(graph.variables) if v.camera == "B"]
    if not idx:
        raise InvalidInputError("graph has no B variables")
    i = idx[0] if camera_frame is None else graph.index("B", camera_frame)
    v = graph.variables[i]
    theta = v.mean[3]
    R = _rot(theta)
    t = v.mean[:3] - R @ v.vio.translation
    return AlignmentEstimate.from_angle(wrap_angle(theta) % (2 * math.pi), t,
                                        graph.levers["L"], graph.levers["K"])
