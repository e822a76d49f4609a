"""The command line round trip: simulate a session, solve it, refine it."""
# %%
import json
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp())


def egoalign(*args):
    r = subprocess.run([sys.executable, "-m", "egoalign.cli", *args], cwd=work,
                       capture_output=True, text=True)
    print("$ egoalign", " ".join(args), "->", r.returncode)
    return r.stdout


# %%
(work / "cfg.json").write_text(json.dumps({"pixel_sigma": 0.5}))
print(egoalign("simulate", "--config", "cfg.json", "--out", "session.jsonl"))
est = json.loads(egoalign("solve", "session.jsonl", "--constraint", "prior-hard",
                          "--out", "init.json"))
print("closed form pan:", est["theta_deg"])

# %%
out = json.loads(egoalign("refine", "session.jsonl", "--init", "init.json", "--reference"))
print("refined pan:", out["estimate"]["theta_deg"])
print("cube error before/after:", out["cube_error_before"], out["cube_error_after"])
