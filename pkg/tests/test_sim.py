import dataclasses
import math

import numpy as np
import pytest

from conftest import ALL_KINDS, exact_modes, random_config
from egoalign import sim
from egoalign.errors import InvalidInputError
from egoalign.geom import Pose6D, RigCalibration, s_from_angle
from egoalign.qepsolve import AlignmentEstimate, Direction, point_rows, solve


def test_deterministic():
    a = sim.generate(sim.ScenarioConfig(seed=5, pixel_sigma=0.4, outlier_fraction=0.2))
    b = sim.generate(sim.ScenarioConfig(seed=5, pixel_sigma=0.4, outlier_fraction=0.2))
    assert a.outlier_labels == b.outlier_labels
    for ca, cb in zip(a.correspondences, b.correspondences):
        np.testing.assert_array_equal(ca.ray, cb.ray)
    for s in "AB":
        assert a.streams[s] == b.streams[s]


def test_default_counts():
    scn = sim.generate(sim.ScenarioConfig())
    assert len(scn.streams["A"]) == len(scn.streams["B"]) == 6
    assert len(scn.correspondences) == 12
    assert sum(c.direction is Direction.A_SEES_B for c in scn.correspondences) == 6
    assert scn.cube.shape == (8, 3)


@pytest.mark.parametrize("trajectory", sim.TRAJECTORIES)
def test_noiseless_rows_vanish(trajectory):
    scn = sim.generate(sim.ScenarioConfig(seed=3, trajectory=trajectory))
    gt = scn.ground_truth
    assert len(scn.correspondences) == 12
    for c in scn.correspondences:
        A, B, C = point_rows(c)
        lever = gt.lever_L if c.direction is Direction.A_SEES_B else gt.lever_K
        M = A + B * gt.s + C * gt.s ** 2
        assert np.linalg.norm(M @ np.concatenate([lever, gt.translation, [1.0]])) < 1e-10


def test_facing_rigs_see_each_other():
    scn = sim.generate(sim.ScenarioConfig(seed=0, true_theta=180.0, true_translation=(3.0, 0, 0),
                                          trajectory="lateral"))
    assert len(scn.correspondences) == 12


def test_out_of_image_detections_dropped():
    # a very narrow field of view loses some mutual detections
    scn = sim.generate(sim.ScenarioConfig(seed=0, width=120, height=90, focal=500))
    assert len(scn.correspondences) < 12


def test_common_frame_consistency(scn):
    gt = scn.ground_truth
    for pa, pc in zip(scn.streams["B"], scn.common_poses["B"]):
        np.testing.assert_allclose(gt.rotation @ pa.translation + gt.translation, pc.translation,
                                   atol=1e-12)


def test_invalid_configs():
    with pytest.raises(InvalidInputError):
        sim.ScenarioConfig(n_keyframes=1)
    with pytest.raises(InvalidInputError):
        sim.ScenarioConfig(pixel_sigma=-1)
    with pytest.raises(InvalidInputError):
        sim.ScenarioConfig(true_theta=0.0)
    with pytest.raises(InvalidInputError):
        sim.ScenarioConfig(trajectory="zigzag")
    with pytest.raises(InvalidInputError):
        sim.ScenarioConfig.from_dict({"bogus": 1})


def test_config_dict_round_trip():
    cfg = random_config(4, pixel_sigma=0.3)
    assert sim.ScenarioConfig.from_dict(cfg.to_dict()) == cfg


def test_outlier_labels():
    scn = sim.generate(sim.ScenarioConfig(seed=2, n_keyframes=20, outlier_fraction=0.3))
    assert sum(scn.outlier_labels) == round(0.3 * len(scn.correspondences))


def test_noise_shape_independent_of_sigma():
    a = sim.generate(sim.ScenarioConfig(seed=8, pixel_sigma=0.2))
    b = sim.generate(sim.ScenarioConfig(seed=8, pixel_sigma=0.4))
    c = sim.generate(sim.ScenarioConfig(seed=8))
    for (k, pa), (_, pb), (_, pc) in zip(a.detections["A"], b.detections["A"], c.detections["A"]):
        np.testing.assert_allclose(2 * (pa - pc), pb - pc, atol=1e-9)


def test_cube_metric_zero_at_truth(scn):
    assert sim.cube_reprojection_error(scn.ground_truth, scn) == 0.0


def test_cube_metric_lateral_shift():
    # one B camera looking straight at a cube centred 1.5 m ahead of it
    rig = RigCalibration.default(0.14)
    cfg = sim.ScenarioConfig()
    imu = Pose6D(np.eye(3), -rig.camera_center)  # camera centre at the origin, looking along +y
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float)
    # B's local frame is A's turned by 180 degrees (s = 0), so the cube sits at -y in A
    cube = np.array([0.0, -1.5, 0.0]) + 0.25 * corners
    gt = AlignmentEstimate(0.0, np.zeros(3), np.zeros(3), np.zeros(3))
    scn = sim.Scenario(cfg, gt, {"A": [], "B": [imu]}, [], {}, cube, [])
    moved = gt.replace(translation=[0.01, 0.0, 0.0])
    err = sim.cube_reprojection_error(moved, scn)
    # every vertex moves 0.01 m sideways at its own depth
    oracle = np.mean([500.0 * 0.01 / (1.5 - 0.25 * y) for y in corners[:, 1]])
    assert err == pytest.approx(oracle, rel=1e-9)
    assert err == pytest.approx(500 * 0.01 / 1.5, rel=0.1)


def test_cube_metric_permutation_invariant(scn):
    est = scn.ground_truth.replace(translation=scn.ground_truth.translation + [0.02, -0.01, 0.0])
    perm = dataclasses.replace(scn, cube=scn.cube[::-1].copy())
    assert sim.cube_reprojection_error(est, scn) == pytest.approx(
        sim.cube_reprojection_error(est, perm), rel=1e-12)


def test_cube_metric_excludes_points_behind(scn):
    turned = scn.ground_truth.replace(s=s_from_angle(scn.ground_truth.theta + math.radians(40)))
    err, excluded = sim.cube_reprojection_error(turned, scn, return_excluded=True)
    assert excluded > 0 and math.isfinite(err)


def test_perturb_priors():
    scn = sim.generate(sim.ScenarioConfig(lever_L=(0, 0.05, 0.08)))
    L, K = sim.perturb_lever_priors(scn, 0.10)
    np.testing.assert_allclose(L, [0, 0.055, 0.088])
    L0, _ = sim.perturb_lever_priors(scn, 0.0)
    np.testing.assert_array_equal(L0, scn.ground_truth.lever_L)
    La, _ = sim.perturb_lever_priors(scn, 0.1, "additive")
    assert np.all(La > scn.ground_truth.lever_L)
    with pytest.raises(InvalidInputError):
        sim.perturb_lever_priors(scn, -0.1)


def test_shifted_prior_degrades_gracefully():
    scn = sim.generate(sim.ScenarioConfig(seed=6))
    exact = sim.run_variant("bidir-hard", scn, priors=(scn.ground_truth.lever_L, scn.ground_truth.lever_K))[0]
    shifted = sim.run_variant("bidir-hard", scn)[0]
    e0, e1 = sim.cube_reprojection_error(exact, scn), sim.cube_reprojection_error(shifted, scn)
    assert e0 < 1e-6 and 0 < e1 < 5.0


def test_variant_parsing():
    v = sim.Variant.parse("bidir-hard+rect+gbp")
    assert v.bidirectional and v.kind == "prior-hard" and v.rect and v.refine
    assert not sim.Variant.parse("onedir").bidirectional
    with pytest.raises(InvalidInputError):
        sim.Variant.parse("tridir")
    with pytest.raises(InvalidInputError):
        sim.Variant.parse("bidir-hard+magic")


def test_sweep_rows_and_zero_noise():
    rows = sim.sweep_noise(sim.ScenarioConfig(seed=40, lever_prior_shift=0.0), [0.0, 0.5], 3)
    assert len(rows) == 2 * 3 * len(sim.DEFAULT_VARIANTS)
    for r in rows:
        if r["sigma"] == 0.0:
            assert r["error_px"] < 1e-6
    summ = sim.summarize(rows)
    assert {c["variant"] for c in summ} == set(sim.DEFAULT_VARIANTS)


def test_sweep_records_failures():
    # 2 keyframes cannot feed the free bidirectional solver (5 points needed)
    rows = sim.sweep_noise(sim.ScenarioConfig(seed=1, n_keyframes=2), [0.1], 2, ["bidir-none"])
    assert all(r["error_px"] is None and not r["converged"] for r in rows)
    assert sim.summarize(rows)[0]["failed"] == 2


def test_sweep_rejects_negative_sigma():
    with pytest.raises(InvalidInputError):
        sim.sweep_noise(sim.ScenarioConfig(), [-0.1], 1)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_generative_round_trip(kind):
    for seed in range(3):
        scn = sim.generate(random_config(seed + 20))
        gt = scn.ground_truth
        est = solve(scn.correspondences, *exact_modes(gt, kind), rig=scn.rig)
        assert sim.cube_reprojection_error(est, scn) < 1e-6


def test_noise_monotone_small_grid():
    rows = sim.sweep_noise(sim.ScenarioConfig(seed=300), [0.2, 0.5, 1.0], 20, ["bidir-none"])
    med = {c["sigma"]: c["median"] for c in sim.summarize(rows)}
    assert med[0.2] <= med[0.5] + 1.0 and med[0.5] <= med[1.0] + 1.0
