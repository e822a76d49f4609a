"""Session logs (JSON lines), ground-truth sidecars and sweep CSVs.

A session file holds one JSON object per line, each with a ``type`` field:

``intrinsics``  ``{"stream", "K" (row-major 9), "width", "height"}``
``rig``         ``{"stream", "cam_rotation" (9), "cam_translation" (3), "left_cam", "right_cam"}``
``pose``        ``{"stream", "time", "rotation" (9), "translation" (3)}`` world-from-IMU
``detection``   ``{"observer", "time", "u", "v"}`` pixel of the other rig's tracked point
``lever_prior`` ``{"stream", "lever" (3)}`` prior of the point tracked on ``stream``

Floats are written with Python's shortest round-trip representation, so
parse(serialize(x)) reproduces every value bit for bit.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputConsistencyError, InvalidInputError
from .geom import CameraIntrinsics, Pose6D, RigCalibration, backproject, check_stream
from .qepsolve import AlignmentEstimate, Direction, PointCorrespondence

STREAMS = ("A", "B")
DEFAULT_TIME_TOL = 1e-3


@dataclass(frozen=True)
class Detection:
    observer: str
    time: float
    pixel: tuple

    def __post_init__(self):
        if self.observer not in STREAMS:
            raise InvalidInputError(f"unknown observer {self.observer!r}")
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "pixel", (float(self.pixel[0]), float(self.pixel[1])))


@dataclass
class Session:
    intrinsics: dict = field(default_factory=dict)
    rigs: dict = field(default_factory=dict)
    poses: dict = field(default_factory=lambda: {"A": [], "B": []})
    detections: list = field(default_factory=list)
    lever_priors: dict = field(default_factory=dict)

    def validate(self):
        for s in STREAMS:
            if s not in self.intrinsics or s not in self.rigs:
                raise InvalidInputError(f"stream {s} lacks intrinsics or rig records")
            check_stream(self.poses[s])


def _floats(v):
    return [float(x) for x in np.asarray(v, dtype=float).ravel()]


def _check_stream_id(s):
    if s not in STREAMS:
        raise InvalidInputError(f"unknown stream id {s!r}")
    return s


def serialize_session(session):
    lines = []
    for s in sorted(session.intrinsics):
        c = session.intrinsics[s]
        lines.append({"type": "intrinsics", "stream": s, "K": _floats(c.K), "width": c.width,
                      "height": c.height})
    for s in sorted(session.rigs):
        r = session.rigs[s]
        lines.append({"type": "rig", "stream": s, "cam_rotation": _floats(r.cam_rotation),
                      "cam_translation": _floats(r.cam_translation),
                      "left_cam": _floats(r.left_cam), "right_cam": _floats(r.right_cam)})
    for s in sorted(session.lever_priors):
        lines.append({"type": "lever_prior", "stream": s, "lever": _floats(session.lever_priors[s])})
    for s in STREAMS:
        for p in session.poses.get(s, []):
            lines.append({"type": "pose", "stream": s, "time": p.time,
                          "rotation": _floats(p.rotation), "translation": _floats(p.translation)})
    for d in session.detections:
        lines.append({"type": "detection", "observer": d.observer, "time": d.time,
                      "u": d.pixel[0], "v": d.pixel[1]})
    return "".join(json.dumps(rec) + "\n" for rec in lines)


def parse_session(text):
    """Parse a session from its JSON-lines text."""
    ses = Session()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            kind = rec["type"]
            if kind == "intrinsics":
                ses.intrinsics[_check_stream_id(rec["stream"])] = CameraIntrinsics(
                    np.reshape(rec["K"], (3, 3)), rec["width"], rec["height"])
            elif kind == "rig":
                ses.rigs[_check_stream_id(rec["stream"])] = RigCalibration(
                    np.reshape(rec["cam_rotation"], (3, 3)), rec["cam_translation"],
                    rec["left_cam"], rec["right_cam"])
            elif kind == "pose":
                ses.poses[_check_stream_id(rec["stream"])].append(
                    Pose6D(np.reshape(rec["rotation"], (3, 3)), rec["translation"], rec["time"]))
            elif kind == "detection":
                ses.detections.append(Detection(rec["observer"], rec["time"], (rec["u"], rec["v"])))
            elif kind == "lever_prior":
                ses.lever_priors[_check_stream_id(rec["stream"])] = np.asarray(rec["lever"], dtype=float)
            else:
                raise InvalidInputError(f"unknown record type {kind!r}")
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidInputError(f"line {lineno}: {exc}") from exc
    ses.validate()
    return ses


def read_session(path):
    with open(path, encoding="utf-8") as fh:
        return parse_session(fh.read())


def write_session(path, session):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_session(session))


def session_equal(a, b):
    """Field-for-field equality of two sessions."""
    if set(a.intrinsics) != set(b.intrinsics) or set(a.rigs) != set(b.rigs):
        return False
    if any(a.intrinsics[k] != b.intrinsics[k] for k in a.intrinsics):
        return False
    if any(a.rigs[k] != b.rigs[k] for k in a.rigs):
        return False
    if set(a.lever_priors) != set(b.lever_priors) or any(
            not np.array_equal(a.lever_priors[k], b.lever_priors[k]) for k in a.lever_priors):
        return False
    return all(a.poses[s] == b.poses[s] for s in STREAMS) and a.detections == b.detections


def _frame_at(poses, t, tol):
    times = np.array([p.time for p in poses])
    if times.size == 0:
        return None
    k = int(np.argmin(np.abs(times - t)))
    return k if abs(times[k] - t) <= tol else None


def resolve_detections(session, tol=DEFAULT_TIME_TOL):
    """Map detections to frame indices: ``{"A": [(k, pixel)], "B": [...]}``.

    Both streams must hold a pose within ``tol`` seconds of every detection
    and share frame indexing (synchronized streams).
    """
    out = {"A": [], "B": []}
    for d in session.detections:
        other = "B" if d.observer == "A" else "A"
        k = _frame_at(session.poses[d.observer], d.time, tol)
        k2 = _frame_at(session.poses[other], d.time, tol)
        if k is None or k2 is None:
            raise InputConsistencyError(f"detection at t={d.time} has no pose within {tol} s")
        if k != k2:
            raise InputConsistencyError(f"streams are not synchronized at t={d.time}")
        out[d.observer].append((k, np.array(d.pixel)))
    return out


def session_correspondences(session, tol=DEFAULT_TIME_TOL):
    """Solver correspondences for every detection in the session."""
    cs = []
    for obs, dets in resolve_detections(session, tol).items():
        tgt = "B" if obs == "A" else "A"
        rig, intr = session.rigs[obs], session.intrinsics[obs]
        for k, px in dets:
            cs.append(PointCorrespondence(
                Direction.A_SEES_B if obs == "A" else Direction.B_SEES_A,
                backproject(px, intr), rig.camera_pose(session.poses[obs][k]),
                session.poses[tgt][k]))
    return cs


def scenario_to_session(scenario, lever_priors=None):
    """Session records for a simulated scenario (optionally with lever priors)."""
    ses = Session()
    for s in STREAMS:
        ses.intrinsics[s] = scenario.intrinsics
        ses.rigs[s] = scenario.rig
        ses.poses[s] = list(scenario.streams[s])
    for obs in STREAMS:
        for k, px in scenario.detections[obs]:
            ses.detections.append(Detection(obs, scenario.streams[obs][k].time, tuple(px)))
    ses.detections.sort(key=lambda d: (d.time, d.observer))
    if lever_priors is not None:
        ses.lever_priors = {"B": np.asarray(lever_priors[0], dtype=float),
                            "A": np.asarray(lever_priors[1], dtype=float)}
    return ses


# --------------------------------------------------------------------------
# sidecar and estimate records


def sidecar_dict(scenario):
    return {"config": scenario.config.to_dict(),
            "ground_truth": scenario.ground_truth.to_dict(),
            "cube": [_floats(v) for v in scenario.cube],
            "outlier_labels": [bool(x) for x in scenario.outlier_labels]}


def dumps(obj):
    """Deterministic JSON text used for every structured record."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def estimate_from_dict(d):
    return AlignmentEstimate.from_dict(d)


# --------------------------------------------------------------------------
# sweep CSV

SWEEP_HEADER = ("variant", "sigma", "trial", "error_px", "converged", "iterations")


def _cell(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "failed"
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(v) if isinstance(v, float) else str(v)


def format_sweep_csv(rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        failed = r["error_px"] is None
        w.writerow([r["variant"], _cell(float(r["sigma"])), r["trial"],
                    "failed" if failed else _cell(float(r["error_px"])),
                    "failed" if failed else _cell(bool(r["converged"])),
                    "failed" if failed else _cell(int(r["iterations"]))])
    return buf.getvalue()


def parse_sweep_csv(text):
    rows = []
    reader = csv.reader(_io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != SWEEP_HEADER:
        raise InvalidInputError(f"unexpected sweep header {header}")
    for rec in reader:
        v, sigma, trial, err, conv, iters = rec
        failed = err == "failed"
        rows.append(dict(variant=v, sigma=float(sigma), trial=int(trial),
                         error_px=None if failed else float(err),
                         converged=False if failed else conv == "1",
                         iterations=0 if failed else int(iters)))
    return rows


def format_summary_csv(summary):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("variant", "sigma", "n", "failed", "mean_px", "median_px"))
    for c in sorted(summary, key=lambda c: (c["variant"], c["sigma"])):
        w.writerow([c["variant"], _cell(float(c["sigma"])), c["n"], c["failed"],
                    _cell(c["mean"]), _cell(c["median"])])
    return buf.getvalue()
