"""``egoalign`` command line: simulate, solve, refine and sweep.

Exit codes: 0 success, 1 invalid input or I/O failure, 2 under-constrained,
3 no solution, 4 critical configuration, 5 refinement did not converge.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fgraph, io, qepsolve, robust, sim
from .errors import (CriticalConfigurationError, EgoAlignError, NoSolutionError,
                     RobustFailureError, SolverDegenerateError, UnderConstrainedError)
from .qepsolve import ConstraintMode, Direction

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_UNDER_CONSTRAINED = 2
EXIT_NO_SOLUTION = 3
EXIT_CRITICAL = 4
EXIT_NOT_CONVERGED = 5

SEED_ENV = "EGOALIGN_SEED"
DEFAULT_SWEEP_SIGMAS = (0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0)

log = logging.getLogger("egoalign")


def _default_seed():
    return int(os.environ.get(SEED_ENV, "0"))


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def sidecar_path(session_path):
    p = Path(session_path)
    return p.with_name(p.name + ".truth.json")


def _emit(record, out):
    text = io.dumps(record)
    sys.stdout.write(text)
    if out:
        _write_text(out, text)


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    cfg_dict = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    elif "seed" not in cfg_dict:
        cfg_dict["seed"] = _default_seed()
    cfg = sim.ScenarioConfig.from_dict(cfg_dict)
    scn = sim.generate(cfg)
    priors = sim.perturb_lever_priors(scn, cfg.lever_prior_shift, cfg.prior_shift_mode)
    io.write_session(args.out, io.scenario_to_session(scn, priors))
    _write_text(sidecar_path(args.out), io.dumps(io.sidecar_dict(scn)))
    n_det = sum(len(v) for v in scn.detections.values())
    print(f"wrote {args.out}: {cfg.n_keyframes} keyframes, {n_det} detections")
    return EXIT_OK


def _mode(kind, prior, weight):
    kind = {"none": "free"}.get(kind, kind)
    if kind.startswith("prior"):
        if prior is None:
            raise EgoAlignError(f"--constraint {kind} needs lever_prior records in the session")
        return ConstraintMode(kind, prior, weight)
    return ConstraintMode(kind, weight=weight)


def cmd_solve(args):
    ses = io.read_session(args.session)
    cs = io.session_correspondences(ses, args.time_tol)
    if args.mode == "onedir":
        cs = [c for c in cs if c.direction is Direction.A_SEES_B]
    mode_L = _mode(args.constraint, ses.lever_priors.get("B"), args.soft_weight)
    mode_K = _mode(args.constraint, ses.lever_priors.get("A"), args.soft_weight) \
        if args.mode == "bidir" else None
    # L lives on B's face, so its symmetry plane comes from B's rig (and K's from A's)
    rig_L, rig_K = ses.rigs["B"], ses.rigs["A"]
    inliers = None
    if args.ransac:
        cfg = robust.RansacConfig(seed=args.seed if args.seed is not None else _default_seed(),
                                  inlier_threshold=args.ransac_threshold)
        est, mask = robust.ransac_align(cs, mode_L, mode_K, rig_L, cfg, rig_K=rig_K)
        inliers = int(sum(mask))
        used = [c for c, m in zip(cs, mask) if m]
    else:
        est = qepsolve.solve(cs, mode_L, mode_K, rig_L, rig_K, rect=args.rect_qep)
        used = cs
    critical = False
    if not args.skip_critical_check:
        crit_est, critical = qepsolve.detect_critical(used, mode_L, mode_K, rig_L, rig_K,
                                                      rect=args.rect_qep)
        if critical:
            est = crit_est
    record = est.to_dict()
    record.update(inliers=inliers, n_correspondences=len(cs), critical=bool(critical))
    _emit(record, args.out)
    return EXIT_CRITICAL if critical else EXIT_OK


def _scenario_for_errors(ses, side):
    cfg = sim.ScenarioConfig.from_dict(side["config"])
    gt = qepsolve.AlignmentEstimate.from_dict(side["ground_truth"])
    return sim.Scenario(cfg, gt, {s: list(ses.poses[s]) for s in io.STREAMS}, [], {},
                        np.asarray(side["cube"], dtype=float), side["outlier_labels"])


def cmd_refine(args):
    ses = io.read_session(args.session)
    init = io.estimate_from_dict(_load_json(args.init))
    dets = io.resolve_detections(ses, args.time_tol)
    lever_L = init.lever_L
    lever_K = init.lever_K if init.lever_K is not None else ses.lever_priors.get("A")
    if lever_K is None:
        raise EgoAlignError("init has no lever K and the session has no prior for it")
    noise = fgraph.NoiseConfig(huber_delta=args.huber)
    graph = fgraph.build_graph(ses.poses["A"], ses.poses["B"], dets["A"], dets["B"], init, lever_K,
                               lever_L, ses.intrinsics["A"], ses.intrinsics["B"], ses.rigs["A"],
                               ses.rigs["B"], noise)
    gcfg = fgraph.GbpConfig(damping=args.damping, relin_every=args.relin_every,
                            max_iters=args.max_iters)
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            report = fgraph.gbp_iterate(graph, gcfg, dump=fh)
    else:
        report = fgraph.gbp_iterate(graph, gcfg)
    refined = init if report.iterations == 0 else fgraph.extract_relative_pose(graph)
    record = {"estimate": refined.to_dict(), "iterations": report.iterations,
              "converged": report.converged, "max_changes": report.max_changes,
              "initial_cost": report.initial_cost, "final_cost": report.final_cost}
    if args.reference:
        means, _ = fgraph.dense_map_solve(graph)
        record["reference_max_diff"] = max(float(np.max(np.abs(m - v.mean)))
                                           for m, v in zip(means, graph.variables))
    side = sidecar_path(args.session)
    if side.exists():
        scn = _scenario_for_errors(ses, _load_json(side))
        record["cube_error_before"] = sim.cube_reprojection_error(init, scn)
        record["cube_error_after"] = sim.cube_reprojection_error(refined, scn)
    _emit(record, args.out)
    if report.converged or args.max_iters == 0:
        return EXIT_OK
    return EXIT_NOT_CONVERGED


def cmd_sweep(args):
    cfg = _load_json(args.config) if args.config else {}
    unknown = set(cfg) - {"scenario", "sigmas", "trials", "variants", "soft_weight"}
    if unknown:
        raise EgoAlignError(f"unknown sweep config keys: {sorted(unknown)}")
    scen = dict(cfg.get("scenario", {}))
    if args.seed is not None:
        scen["seed"] = args.seed
    elif "seed" not in scen:
        scen["seed"] = _default_seed()
    base = sim.ScenarioConfig.from_dict(scen)
    sigmas = args.sigmas or cfg.get("sigmas", DEFAULT_SWEEP_SIGMAS)
    trials = args.trials if args.trials is not None else cfg.get("trials", 100)
    variants = args.variants or cfg.get("variants", sim.DEFAULT_VARIANTS)
    rows = sim.sweep_noise(base, sigmas, trials, variants,
                           soft_weight=cfg.get("soft_weight", sim.SWEEP_SOFT_WEIGHT))
    _write_text(args.out, io.format_sweep_csv(rows))
    summary_path = Path(args.out).with_suffix(".summary.csv")
    _write_text(summary_path, io.format_summary_csv(sim.summarize(rows)))
    print(f"wrote {args.out} ({len(rows)} rows) and {summary_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="egoalign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic session and its ground truth")
    s.add_argument("--config", help="JSON scenario config (defaults otherwise)")
    s.add_argument("--out", required=True, help="session path; sidecar is <out>.truth.json")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve", help="closed-form alignment of a session")
    s.add_argument("session")
    s.add_argument("--mode", choices=("onedir", "bidir"), default="bidir")
    s.add_argument("--constraint", default="sym-hard",
                   choices=("none", "sym-hard", "sym-soft", "prior-hard", "prior-soft"))
    s.add_argument("--soft-weight", type=float, default=1.0)
    s.add_argument("--ransac", action="store_true")
    s.add_argument("--ransac-threshold", type=float, default=1e-3)
    s.add_argument("--rect-qep", action="store_true")
    s.add_argument("--skip-critical-check", action="store_true")
    s.add_argument("--time-tol", type=float, default=io.DEFAULT_TIME_TOL)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="also write the estimate record here")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("refine", help="GBP refinement starting from a solve estimate")
    s.add_argument("session")
    s.add_argument("--init", required=True, help="estimate JSON written by 'solve --out'")
    s.add_argument("--damping", type=float, default=0.4)
    s.add_argument("--relin-every", type=int, default=5)
    s.add_argument("--max-iters", type=int, default=200)
    s.add_argument("--huber", type=float, default=None, metavar="DELTA")
    s.add_argument("--reference", action="store_true", help="compare with the dense MAP solve")
    s.add_argument("--report", help="per-iteration JSON-lines convergence report")
    s.add_argument("--time-tol", type=float, default=io.DEFAULT_TIME_TOL)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("sweep", help="noise sweep over solver variants to CSV")
    s.add_argument("--config", help="JSON with optional scenario, sigmas, trials, variants")
    s.add_argument("--out", required=True)
    s.add_argument("--sigmas", type=float, nargs="+")
    s.add_argument("--trials", type=int)
    s.add_argument("--variants", nargs="+")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UnderConstrainedError as exc:
        print(f"error: under-constrained: {exc}", file=sys.stderr)
        return EXIT_UNDER_CONSTRAINED
    except CriticalConfigurationError as exc:
        print(f"error: critical configuration: {exc}", file=sys.stderr)
        return EXIT_CRITICAL
    except (NoSolutionError, SolverDegenerateError, RobustFailureError) as exc:
        print(f"error: no solution: {exc}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    except (EgoAlignError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
