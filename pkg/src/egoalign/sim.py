"""Synthetic two-rig scenarios, the cube reprojection metric and noise sweeps."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EgoAlignError, InvalidInputError
from .geom import (GRAVITY, CameraIntrinsics, Pose6D, RigCalibration, backproject, normalize,
                   project, rotation_about, s_from_angle)
from .qepsolve import AlignmentEstimate, ConstraintMode, Direction, PointCorrespondence

log = logging.getLogger(__name__)

TRAJECTORIES = ("lateral", "orbit", "small")


@dataclass(frozen=True)
class ScenarioConfig:
    """Generator settings. Angles in degrees, lengths in metres, noise in pixels.

    The scene is laid out in A's local frame (which is also the common frame):
    the two wearers stand ``separation`` apart facing each other and move
    according to ``trajectory``; B's local frame is then placed by
    ``true_theta``/``true_translation``.
    """

    seed: int = 0
    n_keyframes: int = 6
    trajectory: str = "lateral"
    true_theta: float = 137.0
    true_translation: tuple = (3.0, 0.0, 0.0)
    lever_L: tuple = (0.0, 0.05, 0.08)
    lever_K: tuple = (0.0, 0.06, 0.07)
    pixel_sigma: float = 0.0
    outlier_fraction: float = 0.0
    lever_prior_shift: float = 0.10
    prior_shift_mode: str = "multiplicative"
    focal: float = 500.0
    width: int = 640
    height: int = 480
    baseline: float = 0.14
    separation: float = 3.0
    eye_height: float = 1.6
    yaw_jitter: float = 8.0
    pitch_jitter: float = 10.0
    roll_jitter: float = 6.0
    position_jitter: float = 0.05
    frame_dt: float = 0.5
    visibility: str = "both"
    critical_ok: bool = False

    def __post_init__(self):
        if self.n_keyframes < 2:
            raise InvalidInputError("need at least two keyframes")
        if self.pixel_sigma < 0:
            raise InvalidInputError("pixel_sigma must be non-negative")
        if not 0 <= self.outlier_fraction < 1:
            raise InvalidInputError("outlier_fraction must lie in [0, 1)")
        if self.trajectory not in TRAJECTORIES:
            raise InvalidInputError(f"trajectory must be one of {TRAJECTORIES}")
        if self.visibility not in ("both", "alternate"):
            raise InvalidInputError("visibility must be 'both' or 'alternate'")
        if math.isclose(math.fmod(self.true_theta, 360.0), 0.0, abs_tol=1e-12) and not self.critical_ok:
            raise InvalidInputError("true_theta = 0 is the critical configuration; set critical_ok")

    @property
    def intrinsics(self):
        return CameraIntrinsics.simple(self.focal, self.width, self.height)

    @property
    def rig(self):
        return RigCalibration.default(self.baseline)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k in ("true_translation", "lever_L", "lever_K"):
            d[k] = [float(v) for v in d[k]]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("true_translation", "lever_L", "lever_K"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    ground_truth: AlignmentEstimate
    streams: dict            # "A"/"B" -> list of world-from-IMU Pose6D in own local frame
    correspondences: list
    detections: dict         # observer -> list of (frame, pixel)
    cube: np.ndarray         # 8x3, A's frame
    outlier_labels: list
    common_poses: dict = field(default_factory=dict)   # IMU poses in A's frame

    @property
    def intrinsics(self):
        return self.config.intrinsics

    @property
    def rig(self):
        return self.config.rig


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def _head_paths(cfg, rng):
    n = cfg.n_keyframes
    u = np.linspace(0.0, 1.0, n)
    D, h = cfg.separation, cfg.eye_height
    if cfg.trajectory == "lateral":
        pa = np.column_stack([-0.75 + 1.5 * u, np.zeros(n), np.full(n, h)])
        pb = np.column_stack([0.75 - 1.5 * u, np.full(n, D), np.full(n, h)])
    elif cfg.trajectory == "small":
        pa = np.column_stack([-0.25 + 0.5 * u, np.zeros(n), np.full(n, h)])
        pb = np.column_stack([0.25 - 0.5 * u, np.full(n, D), np.full(n, h)])
    else:
        r = D / 2.0
        phi = np.radians(-40.0 + 80.0 * u)
        psi = np.radians(30.0 - 70.0 * u)
        mid = np.array([0.0, r, h])
        pa = mid + r * np.column_stack([np.sin(phi), -np.cos(phi), np.zeros(n)])
        pb = mid + r * np.column_stack([-np.sin(psi), np.cos(psi), np.zeros(n)])
    j = cfg.position_jitter
    pa = pa + rng.uniform(-j, j, pa.shape)
    pb = pb + rng.uniform(-j, j, pb.shape)
    return pa, pb


def _look_rotation(pos, target, rng, cfg):
    """Head orientation looking roughly at ``target`` (body: x right, y forward, z up)."""
    d = target - pos
    yaw = math.atan2(-d[0], d[1]) + math.radians(rng.uniform(-cfg.yaw_jitter, cfg.yaw_jitter))
    pitch = math.atan2(d[2], math.hypot(d[0], d[1])) + math.radians(
        rng.uniform(-cfg.pitch_jitter, cfg.pitch_jitter))
    roll = math.radians(rng.uniform(-cfg.roll_jitter, cfg.roll_jitter))
    return _rz(yaw) @ _rx(pitch) @ _ry(roll)


def _observe(observer_imu, rig, intr, X_world):
    cam = rig.camera_pose(observer_imu)
    Xc = cam.apply_inverse(X_world)
    if Xc[2] <= 0:
        return None
    return project(Xc, intr)


def generate(config):
    """Build a deterministic scenario from ``config``."""
    cfg = config
    ss = np.random.SeedSequence(int(cfg.seed))
    rng_geo, rng_noise, rng_out = (np.random.default_rng(s) for s in ss.spawn(3))
    rig, intr = cfg.rig, cfg.intrinsics
    L = np.asarray(cfg.lever_L, dtype=float)
    K = np.asarray(cfg.lever_K, dtype=float)

    pa, pb = _head_paths(cfg, rng_geo)
    n = cfg.n_keyframes
    RA, RB = [], []
    for k in range(n):
        RA.append(_look_rotation(pa[k], pb[k], rng_geo, cfg))
        RB.append(_look_rotation(pb[k], pa[k], rng_geo, cfg))
    times = cfg.frame_dt * np.arange(n)

    theta = math.radians(cfg.true_theta)
    R_true = rotation_about(GRAVITY, theta)
    t_true = np.asarray(cfg.true_translation, dtype=float)
    common = {"A": [Pose6D(RA[k], pa[k], times[k]) for k in range(n)],
              "B": [Pose6D(RB[k], pb[k], times[k]) for k in range(n)]}
    streams = {
        "A": list(common["A"]),
        "B": [Pose6D(R_true.T @ RB[k], R_true.T @ (pb[k] - t_true), times[k]) for k in range(n)],
    }

    # standard-normal draws are independent of sigma so sweeps share noise shapes
    unit_noise = rng_noise.standard_normal((n, 2, 2))
    raw = []  # (frame, observer, exact pixel)
    for k in range(n):
        for obs, tgt, lever in (("A", "B", L), ("B", "A", K)):
            if cfg.visibility == "alternate" and (k % 2) != (obs == "B"):
                continue
            X = common[tgt][k].apply(lever)
            u = _observe(common[obs][k], rig, intr, X)
            if u is None or not intr.contains(u):
                log.info("frame %d: %s cannot see %s's tracked point; dropped", k, obs, tgt)
                continue
            raw.append((k, obs, u))

    n_out = int(round(cfg.outlier_fraction * len(raw)))
    out_idx = set(rng_out.choice(len(raw), size=n_out, replace=False).tolist()) if n_out else set()
    random_px = rng_out.uniform([0.0, 0.0], [intr.width, intr.height], size=(len(raw), 2))

    correspondences, labels = [], []
    detections = {"A": [], "B": []}
    for i, (k, obs, u) in enumerate(raw):
        j = 0 if obs == "A" else 1
        px = u + cfg.pixel_sigma * unit_noise[k, j]
        is_out = i in out_idx
        if is_out:
            px = random_px[i]
        detections[obs].append((k, px))
        tgt = "B" if obs == "A" else "A"
        correspondences.append(PointCorrespondence(
            Direction.A_SEES_B if obs == "A" else Direction.B_SEES_A,
            backproject(px, intr),
            rig.camera_pose(streams[obs][k]),
            streams[tgt][k]))
        labels.append(is_out)

    # 0.5 m cube 1.5 m in front of A's first head pose, towards B, below eye level
    d = pb[0] - pa[0]
    d[2] = 0.0
    center = pa[0] + 1.5 * normalize(d) + np.array([0.0, 0.0, -0.3])
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    cube = center + 0.25 * corners

    # zero pan has no finite s; 1e15 reproduces the identity to rounding
    s_true = s_from_angle(theta) if abs(math.sin(theta / 2)) > 1e-15 else 1e15
    gt = AlignmentEstimate(s_true, t_true, L, K, 0.0)
    return Scenario(cfg, gt, streams, correspondences, detections, cube, labels, common)


def cube_reprojection_error(estimate, scenario, return_excluded=False):
    """Mean pixel distance of the cube vertices seen by B under ``estimate`` vs. truth.

    Vertex-frame pairs behind B's camera under either transform are excluded.
    """
    gt = scenario.ground_truth
    R_t, t_t = gt.rotation, gt.translation
    R_e, t_e = estimate.rotation, estimate.translation
    rig, intr = scenario.rig, scenario.intrinsics
    Xb_true = (scenario.cube - t_t) @ R_t
    Xb_est = (scenario.cube - t_e) @ R_e
    errs, excluded = [], 0
    for pose in scenario.streams["B"]:
        cam = rig.camera_pose(pose)
        ct = cam.apply_inverse(Xb_true)
        ce = cam.apply_inverse(Xb_est)
        ok = (ct[:, 2] > 0) & (ce[:, 2] > 0)
        excluded += int((~ok).sum())
        if ok.any():
            errs.append(np.linalg.norm(project(ct[ok], intr) - project(ce[ok], intr), axis=1))
    if not errs:
        raise EgoAlignError("every cube vertex is behind camera B")
    err = float(np.mean(np.concatenate(errs)))
    return (err, excluded) if return_excluded else err


def perturb_lever_priors(scenario, shift_fraction, mode="multiplicative"):
    """Lever-arm priors shifted from the truth by ``shift_fraction`` on every axis."""
    if shift_fraction < 0:
        raise InvalidInputError("shift_fraction must be non-negative")
    L, K = scenario.ground_truth.lever_L, scenario.ground_truth.lever_K
    if mode == "multiplicative":
        return L * (1.0 + shift_fraction), K * (1.0 + shift_fraction)
    if mode == "additive":
        # shift by the fraction of the arm length along every axis
        return (L + shift_fraction * np.linalg.norm(L), K + shift_fraction * np.linalg.norm(K))
    raise InvalidInputError(f"unknown shift mode {mode!r}")


# --------------------------------------------------------------------------
# solver variants and sweeps


@dataclass(frozen=True)
class Variant:
    """A named solver configuration, e.g. ``bidir-hard`` or ``bidir-hard+rect+gbp``."""

    name: str
    bidirectional: bool
    kind: str
    rect: bool = False
    refine: bool = False

    BASES = {
        "onedir": (False, "sym-hard"),
        "onedir-sym-soft": (False, "sym-soft"),
        "onedir-hard": (False, "prior-hard"),
        "onedir-soft": (False, "prior-soft"),
        "bidir-none": (True, "free"),
        "bidir-sym-hard": (True, "sym-hard"),
        "bidir-sym-soft": (True, "sym-soft"),
        "bidir-soft": (True, "prior-soft"),
        "bidir-hard": (True, "prior-hard"),
    }

    @classmethod
    def parse(cls, name):
        base, *flags = name.split("+")
        if base not in cls.BASES:
            raise InvalidInputError(f"unknown variant {name!r}")
        bad = set(flags) - {"rect", "gbp"}
        if bad:
            raise InvalidInputError(f"unknown variant flags {sorted(bad)}")
        bidir, kind = cls.BASES[base]
        return cls(name, bidir, kind, "rect" in flags, "gbp" in flags)

    def modes(self, priors, soft_weight=1.0):
        Lp, Kp = priors

        def make(prior):
            w = soft_weight if self.kind.endswith("soft") else 1.0
            if self.kind.startswith("prior"):
                return ConstraintMode(self.kind, prior, w)
            return ConstraintMode(self.kind, weight=w)

        return make(Lp), (make(Kp) if self.bidirectional else None)


DEFAULT_VARIANTS = ("onedir", "bidir-none", "bidir-soft", "bidir-hard")

# Soft rows and point rows are both in metres. A point row misses by roughly
# depth * sigma_px / focal (3 m * 0.5 px / 500 px = 3 mm) while a 10% shifted
# prior is off by about 1 cm, so soft rows get ~0.3 of a point row's weight.
SWEEP_SOFT_WEIGHT = 0.3


def run_variant(variant, scenario, priors=None, gbp_config=None, soft_weight=SWEEP_SOFT_WEIGHT):
    """Solve (and optionally refine) one scenario; returns ``(estimate, iterations, converged)``."""
    from . import qepsolve
    if isinstance(variant, str):
        variant = Variant.parse(variant)
    if priors is None:
        priors = perturb_lever_priors(scenario, scenario.config.lever_prior_shift,
                                      scenario.config.prior_shift_mode)
    mode_L, mode_K = variant.modes(priors, soft_weight)
    cs = scenario.correspondences
    if not variant.bidirectional:
        cs = [c for c in cs if c.direction is Direction.A_SEES_B]
    est = qepsolve.solve(cs, mode_L, mode_K, scenario.rig, g=GRAVITY, rect=variant.rect)
    if not variant.refine:
        return est, 0, True
    from .fgraph import graph_from_scenario, gbp_iterate, extract_relative_pose, GbpConfig
    lever_K = est.lever_K if est.lever_K is not None else priors[1]
    graph = graph_from_scenario(scenario, est, lever_K=lever_K, lever_L=est.lever_L)
    report = gbp_iterate(graph, gbp_config or GbpConfig())
    return extract_relative_pose(graph), report.iterations, report.converged


def sweep_noise(config_base, sigmas, n_trials, variants=DEFAULT_VARIANTS, gbp_config=None,
                soft_weight=SWEEP_SOFT_WEIGHT):
    """Cube errors over a (sigma, variant, trial) grid.

    Trial ``i`` uses scenario seed ``config_base.seed + i`` at every sigma, so
    cells share geometry and unit-noise draws. Solver failures are recorded as
    rows with ``error_px = None`` and ``converged = False``.
    """
    if any(s < 0 for s in sigmas):
        raise InvalidInputError("sigmas must be non-negative")
    variants = [Variant.parse(v) if isinstance(v, str) else v for v in variants]
    rows = []
    for sigma in sigmas:
        for trial in range(n_trials):
            scn = generate(config_base.with_(seed=config_base.seed + trial, pixel_sigma=float(sigma)))
            for v in variants:
                try:
                    est, iters, conv = run_variant(v, scn, gbp_config=gbp_config,
                                                   soft_weight=soft_weight)
                    err = cube_reprojection_error(est, scn)
                except EgoAlignError as exc:
                    log.info("variant %s sigma %s trial %d failed: %s", v.name, sigma, trial, exc)
                    rows.append(dict(variant=v.name, sigma=float(sigma), trial=trial, error_px=None,
                                     converged=False, iterations=0))
                    continue
                rows.append(dict(variant=v.name, sigma=float(sigma), trial=trial, error_px=err,
                                 converged=bool(conv), iterations=int(iters)))
    return rows


def summarize(rows):
    """Per-(variant, sigma) mean/median over successful trials plus failure counts."""
    cells = {}
    for r in rows:
        cells.setdefault((r["variant"], r["sigma"]), []).append(r["error_px"])
    out = []
    for (v, s), errs in cells.items():
        ok = np.array([e for e in errs if e is not None], dtype=float)
        out.append(dict(variant=v, sigma=s, n=len(errs), failed=len(errs) - ok.size,
                        mean=float(ok.mean()) if ok.size else None,
                        median=float(np.median(ok)) if ok.size else None))
    return out
