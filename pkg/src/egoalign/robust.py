"""RANSAC around the minimal gravity-constrained solver."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import EgoAlignError, InvalidInputError, RobustFailureError, UnderConstrainedError
from .geom import GRAVITY
from .qepsolve import (Direction, angular_residual, assemble_pencil,
                       filter_solutions, lever_param, minimal_points, solve, solve_square_qep)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RansacConfig:
    """Hypothesize-and-verify settings.

    ``inlier_threshold`` applies to the sine of the angle between the observed
    ray and the ray predicted by a hypothesis (1e-3 is about 0.5 px at a
    500 px focal length).
    """

    max_iterations: int = 500
    inlier_threshold: float = 1e-3
    min_inlier_ratio: float = 0.5
    early_exit_ratio: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise InvalidInputError("inlier_threshold must be positive")
        if not 0 < self.min_inlier_ratio <= 1:
            raise InvalidInputError("min_inlier_ratio must lie in (0, 1]")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be at least 1")


def minimal_count(mode_L, mode_K=None, rig=None, rig_K=None):
    pL = lever_param(mode_L, rig)
    pK = lever_param(mode_K, rig_K if rig_K is not None else rig) if mode_K is not None else None
    return minimal_points(pL, pK)


def sample_minimal(rng, correspondences, n):
    """Indices of a minimal sample with at least one point per observed direction."""
    idx = {d: [i for i, c in enumerate(correspondences) if c.direction is d] for d in Direction}
    dirs = [d for d in Direction if idx[d]]
    if len(dirs) == 2:
        first = [int(rng.choice(idx[d])) for d in dirs]
    else:
        first = []
    rest = np.setdiff1d(np.arange(len(correspondences)), first)
    more = rng.choice(rest, size=n - len(first), replace=False).tolist()
    return sorted(first + [int(i) for i in more])


class _PointTable:
    """Correspondences stacked into arrays for scoring many hypotheses."""

    def __init__(self, correspondences):
        cs = list(correspondences)
        self.a_sees_b = np.array([c.direction is Direction.A_SEES_B for c in cs])
        self.ray = np.array([c.world_ray for c in cs]).reshape(-1, 3)
        self.center = np.array([c.center for c in cs]).reshape(-1, 3)
        self.tgt_rot = np.array([c.target_imu_pose.rotation for c in cs]).reshape(-1, 3, 3)
        self.tgt_t = np.array([c.target_imu_pose.translation for c in cs]).reshape(-1, 3)

    def vectors(self, est):
        """Observer-to-predicted-point vectors, one row per correspondence."""
        R, t = est.rotation, est.translation
        K = est.lever_K if est.lever_K is not None else np.zeros(3)
        lever = np.where(self.a_sees_b[:, None], est.lever_L, K)
        X = np.einsum("nij,nj->ni", self.tgt_rot, lever) + self.tgt_t
        X = np.where(self.a_sees_b[:, None], X @ R.T + t, (X - t) @ R)
        return X - self.center

    def angular(self, est):
        v = self.vectors(est)
        nv = np.linalg.norm(v, axis=1)
        sine = np.linalg.norm(np.cross(self.ray, v), axis=1) / np.where(nv > 0, nv, 1.0)
        behind = (nv == 0) | (np.einsum("ni,ni->n", self.ray, v) <= 0)
        return np.where(behind, 1.0, sine)

    def algebraic(self, est):
        return np.linalg.norm(np.cross(self.ray, self.vectors(est)), axis=1)


def inlier_residual(correspondences, est, mask):
    """Root-sum-square algebraic residual over the masked correspondences."""
    table = correspondences if isinstance(correspondences, _PointTable) else _PointTable(correspondences)
    r = table.algebraic(est)[np.asarray(mask, dtype=bool)]
    return float(math.sqrt(r @ r))


def _hypotheses(sample, modes, rig, rig_K, g):
    pencil = assemble_pencil(sample, modes[0], modes[1], rig, rig_K, g)
    return filter_solutions(solve_square_qep(pencil), pencil)


def minimal_solve(correspondences, mode_L, mode_K=None, rig=None, rig_K=None, g=GRAVITY, rng=None):
    """Closed-form estimate from one random minimal sample.

    The remaining correspondences act as the holdout that picks among the
    minimal solver's candidates. Returns ``(estimate, sample_indices)``.
    """
    cs = list(correspondences)
    rng = rng if rng is not None else np.random.default_rng(0)
    n = minimal_count(mode_L, mode_K, rig, rig_K)
    if len(cs) < n + 1:
        raise UnderConstrainedError(n + 1, len(cs), "minimal sample plus a holdout point")
    pick = sample_minimal(rng, cs, n)
    cands = _hypotheses([cs[i] for i in pick], (mode_L, mode_K), rig, rig_K, g)
    hold = [c for i, c in enumerate(cs) if i not in pick]
    best = min(cands, key=lambda e: (sum(angular_residual(c, e) for c in hold), abs(e.s)))
    return best, pick


def ransac_align(correspondences, mode_L, mode_K=None, rig=None, config=None, rig_K=None, g=GRAVITY):
    """Robust closed-form alignment.

    Returns ``(estimate, inlier_mask)``. The estimate is refitted on the inliers
    of the best hypothesis with the overconstrained solver; if a refit
    candidate does not beat the hypothesis on that inlier set the hypothesis is
    kept.
    """
    cfg = config or RansacConfig()
    cs = list(correspondences)
    n_min = minimal_count(mode_L, mode_K, rig, rig_K)
    if len(cs) < n_min + 1:
        raise UnderConstrainedError(n_min + 1, len(cs), "minimal sample plus a holdout point")
    if mode_K is not None and not all(any(c.direction is d for c in cs) for d in Direction):
        raise UnderConstrainedError(n_min + 1, len(cs), "at least one point per direction")
    rng = np.random.default_rng(cfg.seed)
    N = len(cs)
    table = _PointTable(cs)
    best, best_mask, best_key = None, None, None
    for it in range(cfg.max_iterations):
        pick = sample_minimal(rng, cs, n_min)
        try:
            cands = _hypotheses([cs[i] for i in pick], (mode_L, mode_K), rig, rig_K, g)
        except EgoAlignError:
            continue
        for est in cands:
            mask = table.angular(est) < cfg.inlier_threshold
            key = (int(mask.sum()), -inlier_residual(table, est, mask))
            if best_key is None or key > best_key:
                best, best_mask, best_key = est, mask, key
        if best_key is not None and best_key[0] >= cfg.early_exit_ratio * N:
            log.debug("early exit after %d hypotheses", it + 1)
            break
    if best is None or best_key[0] < cfg.min_inlier_ratio * N:
        raise RobustFailureError("no hypothesis reached the minimum inlier ratio", best,
                                 None if best_mask is None else best_mask.tolist())

    inliers = [c for c, m in zip(cs, best_mask) if m]
    final = best
    try:
        refit = solve(inliers, mode_L, mode_K, rig, rig_K, g)
        if inlier_residual(table, refit, best_mask) <= inlier_residual(table, best, best_mask):
            final = refit
    except EgoAlignError as exc:
        log.info("refit on %d inliers failed (%s); keeping the best hypothesis", len(inliers), exc)
    return final, [bool(m) for m in best_mask]
