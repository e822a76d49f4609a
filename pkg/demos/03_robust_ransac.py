"""RANSAC over minimal samples when some detections are wrong."""
# %%
from egoalign import robust, sim
from egoalign.qepsolve import ConstraintMode

scn = sim.generate(sim.ScenarioConfig(seed=3, n_keyframes=20, pixel_sigma=0.2,
                                      outlier_fraction=0.3))
# lever arms restricted to each rig's symmetry plane: four-point samples
modes = ConstraintMode("sym-hard"), ConstraintMode("sym-hard")
print("minimal sample size:", robust.minimal_count(*modes, rig=scn.rig))

# %%
est, mask = robust.ransac_align(scn.correspondences, *modes, rig=scn.rig)
true_pos = sum(m and not lab for m, lab in zip(mask, scn.outlier_labels))
print(f"{sum(mask)} inliers, {true_pos} of them genuine")
print("cube error:", sim.cube_reprojection_error(est, scn), "px")
