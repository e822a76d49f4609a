"""Closed-form alignment from mutual detections.

Each detection of the other wearer's tracked head point gives two equations
that are quadratic in ``s``. Stacking them gives a quadratic eigenvalue
problem in ``s`` over the unknown lever arms and translation.
"""
# %%
import math

from egoalign import sim
from egoalign.qepsolve import (ConstraintMode, assemble_pencil, detect_critical,
                               determinant_polynomial, solve)

scn = sim.generate(sim.ScenarioConfig(seed=0, pixel_sigma=0.0, lever_prior_shift=0.0))
gt = scn.ground_truth
print("truth: theta", round(gt.theta_deg, 6), "t", gt.translation)

# %% one direction only (A sees B) with the lever arm unconstrained
one_way = [c for c in scn.correspondences if c.direction.name == "A_SEES_B"]
est = solve(one_way, ConstraintMode("free"), rig=scn.rig)
print("onedir free:", round(est.theta_deg, 6), est.translation)

# %% both directions, each lever arm restricted to the rig's symmetry plane
sym = ConstraintMode("sym-hard")
est = solve(scn.correspondences, sym, sym, rig=scn.rig)
print("bidir sym-hard:", round(est.theta_deg, 6), est.translation)

# %% the rectangular QEP refines the pan on the full overconstrained system
noisy = sim.generate(sim.ScenarioConfig(seed=0, pixel_sigma=0.5))
L, K = sim.perturb_lever_priors(noisy, 0.1)
modes = ConstraintMode.prior_hard(L), ConstraintMode.prior_hard(K)
for rect in (False, True):
    est = solve(noisy.correspondences, *modes, rig=noisy.rig, rect=rect)
    print("rect" if rect else "square", sim.cube_reprojection_error(est, noisy), "px")

# %% three one-directional points with a symmetry-plane lever: four solutions
pencil = assemble_pencil(one_way[:3], sym, None, scn.rig)
poly = determinant_polynomial(pencil)
print("roots", poly.roots(), "truth s", gt.s)

# %% a zero pan cannot be solved directly; rotating B's frame exposes it
flat = sim.generate(sim.ScenarioConfig(seed=0, true_theta=0.0, critical_ok=True))
est, critical = detect_critical(flat.correspondences, sym, sym, flat.rig)
print("critical:", critical, "recovered pan", round(math.degrees(est.theta), 6))
