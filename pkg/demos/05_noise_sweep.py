"""Median cube reprojection error of the solver variants versus pixel noise."""
# %%
import warnings

from egoalign import sim

warnings.simplefilter("ignore")
rows = sim.sweep_noise(sim.ScenarioConfig(seed=1000), [0.0, 0.3, 0.5, 1.0], 30)
summary = sim.summarize(rows)

# %%
print("sigma  " + "  ".join(f"{v:>11s}" for v in sim.DEFAULT_VARIANTS))
for sigma in (0.0, 0.3, 0.5, 1.0):
    med = {c["variant"]: c["median"] for c in summary if c["sigma"] == sigma}
    print(f"{sigma:5.1f}  " + "  ".join(f"{med[v]:11.3f}" for v in sim.DEFAULT_VARIANTS))
