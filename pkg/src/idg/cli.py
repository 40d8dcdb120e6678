"""Command line entry point ``idg``.

Exit codes: 0 all checks pass, 1 a check failed, 2 the scenario or the
arguments are invalid, 3 a numerical stage failed at run time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .expr import DomainError, ExprError
from .game import Check, ModelError
from .offline import IdentificationError, run_offline, simulate_ground_truth, verify_parameters
from .online import LearnerDivergence, run_online
from .report import dumps, make_report, write_atomic
from .scenario import ScenarioError, load_scenario
from .sim import SimulationDivergence

log = logging.getLogger("idg")

EXIT_OK, EXIT_CHECKS, EXIT_SCENARIO, EXIT_RUNTIME = 0, 1, 2, 3


def _scenario_checks(sc) -> list:
    return [Check(f"scenario: {c.name}", c.ok, c.detail, c.hard) for c in sc.diagnostics.checks]


def _finish(out: Path, name: str, command: str, sc, stages: dict, checks: list) -> int:
    report = make_report(command, sc, stages, checks)
    write_atomic(out / name, dumps(report))
    for c in checks:
        if not c.ok:
            log.warning("check failed: %s (%s)", c.name, c.detail)
    return EXIT_OK if report["ok"] else EXIT_CHECKS


def _trajectory_figure(out: Path, name: str, trajectories: dict):
    from .plotting import plot_trajectories
    texts = {k: v.to_csv() for k, v in trajectories.items() if v is not None}
    if texts:
        plot_trajectories(texts, out / name)


# ---------------------------------------------------------------- commands

def cmd_generate(sc, out: Path, figures: bool = False) -> int:
    gt = simulate_ground_truth(sc)
    write_atomic(out / "ground_truth.csv", gt.to_csv())
    if figures:
        _trajectory_figure(out, "ground_truth.png", {"ground truth": gt})
    stages = {"generate": {"rows": len(gt.x), "segments": gt.n_segments, "h": gt.h,
                           "files": ["ground_truth.csv"]}}
    return _finish(out, "generate_report.json", "generate", sc, stages, _scenario_checks(sc))


def cmd_offline(sc, out: Path, figures: bool = False) -> int:
    gt = simulate_ground_truth(sc)
    rep = run_offline(sc, gt)
    files = {"ground_truth.csv": gt, "identified_laws.csv": rep.identified_trajectory,
             "offline_fne.csv": rep.verification.trajectory}
    written = []
    for fname, tr in files.items():
        if tr is not None:
            write_atomic(out / fname, tr.to_csv())
            written.append(fname)
    if figures:
        _trajectory_figure(out, "offline_trajectories.png", {"ground truth": gt, "identified laws":
                                                              rep.identified_trajectory, "IDG FNE": rep.verification.trajectory})
    stage = rep.to_dict()
    stage["files"] = written
    stage["partial"] = len(written) < len(files)
    return _finish(out, "offline_report.json", "offline", sc, {"offline": stage},
                   _scenario_checks(sc) + rep.checks)


def cmd_online(sc, out: Path, figures: bool = False) -> int:
    gt = simulate_ground_truth(sc)
    off = run_offline(sc, gt)
    rep = run_online(sc, off)
    write_atomic(out / "learning_trace.csv", rep.trace_csv)
    written = ["learning_trace.csv"]
    traj = rep.verification.trajectory if rep.verification else None
    if traj is not None:
        write_atomic(out / "online_fne.csv", traj.to_csv())
        written.append("online_fne.csv")
    if figures:
        from .plotting import plot_trace
        plot_trace(rep.trace_csv, out / "learning_trace_eta.png", "eta")
        plot_trace(rep.trace_csv, out / "learning_trace_theta_bar.png", "theta_bar")
        _trajectory_figure(out, "online_trajectories.png", {"ground truth": gt, "online FNE": traj})
    stage = rep.to_dict()
    stage["files"] = written
    stage["partial"] = traj is None
    # offline solution sets travel with the report so membership can be recomputed from it alone
    stage["offline_solution_sets"] = [p.sset.to_dict() for p in off.players]
    return _finish(out, "online_report.json", "online", sc, {"online": stage},
                   _scenario_checks(sc) + rep.checks)


def _params_from_file(path: Path, N: int):
    """Cost parameters from a parameter file or from an offline/online report."""
    d = json.loads(path.read_text(encoding="utf-8"))
    stages = d.get("stages", {})
    if "alpha" in d and "beta" in d:
        return d["alpha"], d["beta"]
    if "online" in stages:
        return stages["online"]["alpha"], stages["online"]["beta"]
    if "offline" in stages:
        sels = [p["selection"] for p in stages["offline"]["players"]]
        if any(s is None for s in sels):
            raise ScenarioError(str(path), "report has players without selected parameters")
        return [s["alpha"] for s in sels], [s["beta"] for s in sels]
    raise ScenarioError(str(path), "expected 'alpha' and 'beta' lists or an offline/online report")


def cmd_verify(sc, out: Path, figures: bool = False, params: Optional[Path] = None) -> int:
    model = sc.model
    N = model.N
    if params is not None:
        alphas, betas = _params_from_file(params, N)
    else:
        alphas = [pl.alpha for pl in model.players]
        betas = [pl.beta for pl in model.players]
    if len(alphas) != N or len(betas) != N or any(a is None for a in alphas) or any(b is None for b in betas):
        raise ScenarioError("players", f"need alpha and beta for all {N} players")
    gt = simulate_ground_truth(sc)
    checks = _scenario_checks(sc)
    ver = verify_parameters(sc, alphas, betas, model.gt_strategies(), gt, checks, "verify")
    written = []
    if ver.trajectory is not None:
        write_atomic(out / "verified_fne.csv", ver.trajectory.to_csv())
        written.append("verified_fne.csv")
        if figures:
            _trajectory_figure(out, "verified_trajectories.png", {"ground truth": gt, "verified FNE": ver.trajectory})
    stage = {"alpha": [np.asarray(a, dtype=float) for a in alphas],
             "beta": [np.asarray(b, dtype=float) for b in betas],
             "verification": ver.to_dict(), "files": written, "partial": ver.trajectory is None}
    return _finish(out, "verify_report.json", "verify", sc, {"verify": stage}, checks)


def cmd_repro(scenario_dir: Optional[Path], out: Path, seed=None, overrides=None, figures: bool = False) -> int:
    from .repro import load_bundled, run_repro
    scenarios = load_bundled(scenario_dir, seed, overrides)
    res = run_repro(scenarios)
    write_atomic(out / "repro_table.csv", res.table_csv())
    for name, run in res.runs.items():
        if run.online is not None:
            write_atomic(out / f"{name}_learning_trace.csv", run.online.trace_csv)
        if run.offline.verification.trajectory is not None:
            write_atomic(out / f"{name}_offline_fne.csv", run.offline.verification.trajectory.to_csv())
    if figures:
        from .plotting import plot_trace
        for name, run in res.runs.items():
            if run.online is not None:
                plot_trace(run.online.trace_csv, out / f"{name}_learning_trace.png")
    report = make_report("repro-paper", None, {"repro": res.to_dict()}, [])
    report["ok"] = res.ok
    report["seed"] = seed
    report["scenarios"] = {k: v.to_dict() for k, v in scenarios.items()}
    write_atomic(out / "repro_report.json", dumps(report))
    for r in res.rows:
        print(f"[{'PASS' if r.ok else 'FAIL'}] {r.criterion} {r.name}: computed {r.computed} "
              f"(reference {r.reference}, tol {r.tolerance}) {r.detail} {r.volatile}".rstrip())
    return EXIT_OK if res.ok else EXIT_CHECKS


COMMANDS = {"generate": cmd_generate, "offline": cmd_offline, "online": cmd_online, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idg", description="Inverse differential games: identify player costs "
                                 "from feedback Nash equilibrium trajectories.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=list(COMMANDS) + ["repro-paper"])
    ap.add_argument("--scenario", type=Path,
                    help="scenario JSON file (repro-paper: optional directory holding the bundled scenario names)")
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a scenario field by dotted path; VALUE is parsed as JSON when possible")
    ap.add_argument("--params", type=Path, default=None,
                    help="verify: parameter file or offline/online report supplying alpha and beta")
    ap.add_argument("--figures", action="store_true", help="also render PNG figures next to the data files")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = args.overrides
        if args.command == "repro-paper":
            return cmd_repro(args.scenario, args.out, args.seed, overrides, args.figures)
        if args.scenario is None:
            raise ScenarioError("--scenario", "required for this command")
        sc = load_scenario(args.scenario, overrides, args.seed)
        hard = sc.diagnostics.hard_failures
        if hard:
            for c in hard:
                print(f"scenario error: {c.name}: {c.detail}", file=sys.stderr)
            return EXIT_SCENARIO
        if args.command == "verify":
            return cmd_verify(sc, args.out, args.figures, args.params)
        if args.params is not None:
            raise ScenarioError("--params", "only valid with verify")
        return COMMANDS[args.command](sc, args.out, args.figures)
    except (ScenarioError, ModelError, ExprError, FileNotFoundError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (SimulationDivergence, LearnerDivergence, IdentificationError, DomainError,
            np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
