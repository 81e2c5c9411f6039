"""Command-line front end: design, simulate, tune and stability pipelines.

Every verb reads one config file and writes plain-text artifacts (CSV and
JSON) into the output directory.  All floating-point output is printed
with nine significant digits so repeated runs diff clean.

Exit codes: 0 success, 1 usage or config error, 2 unstable design,
3 numerical divergence during simulation.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .errors import RatioPidError
from .simulator import (
    DesignSpec,
    PredictivePid,
    Scenario,
    SimResult,
    _PredictiveRuntime,
    run,
)
from .stability import StabilityReport, check_stability
from .config import RunConfig, load_config, tuning_context
from .tuning import TuningResult, tune

_EXIT_OK = 0
_EXIT_CONFIG = 1
_EXIT_UNSTABLE = 2
_EXIT_DIVERGED = 3


def _fmt(value: float) -> str:
    return format(float(value), ".9g")


def _nine(node):
    """Copy of a JSON tree with floats rounded to nine significant digits."""
    if isinstance(node, dict):
        return {k: _nine(v) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_nine(v) for v in node]
    if isinstance(node, bool) or node is None or isinstance(node, (int, str)):
        return node
    value = float(node)
    return float(_fmt(value)) if math.isfinite(value) else None


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_nine(payload), fh, indent=2, sort_keys=False)
        fh.write("\n")


def _write_csv(path: str, header: list, rows, footer: list | None = None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row) + "\n")
        for line in footer or []:
            fh.write(line + "\n")


def _safe_name(label: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "-" for c in label)


def _design_runtime(scenario: Scenario, design: DesignSpec) -> _PredictiveRuntime:
    return _PredictiveRuntime(scenario, PredictivePid(design=design), scenario.samples)


def _stability_of(rt: _PredictiveRuntime) -> StabilityReport:
    return check_stability(rt.ss, rt.gains, rt.dp.h1, rt.dp.h2)


def _write_eigenvalues(report: StabilityReport, out_dir: str):
    rows = [(ev.real, ev.imag) for ev in report.eigenvalues]
    _write_csv(os.path.join(out_dir, "eigenvalues.csv"), ["re", "im"], rows)


def _report_payload(report: StabilityReport) -> dict:
    return {
        "stable": bool(report.stable),
        "spectral_radius": report.spectral_radius,
        "margin": report.margin,
        "corollary_radius": report.corollary_radius,
        "eigenvalue_count": int(report.eigenvalues.size),
    }


def _write_design(cfg: RunConfig, design: DesignSpec, out_dir: str) -> StabilityReport:
    """Schedule CSV, eigenvalue map and summary for one design; returns the verdict."""
    rt = _design_runtime(cfg.scenario, design)
    report = _stability_of(rt)

    header = ["step"]
    for side in ("k1", "k2"):
        header += [f"{side}_{tap}" for tap in
                   ("e1", "e1_prev", "sum1", "e2", "e2_prev", "sum2", "u1", "u2")]
    header += ["s1", "s2"]
    rows = []
    sched = rt.schedule
    for k, entry in enumerate(list(sched.entries) + [sched.tail]):
        tag = str(k) if k < len(sched.entries) else "tail"
        rows.append([tag, *entry.k1_pid, *entry.k1_u,
                     *entry.k2_pid, *entry.k2_u, entry.s1, entry.s2])
    _write_csv(os.path.join(out_dir, "schedule.csv"), header, rows)

    _write_eigenvalues(report, out_dir)
    _write_json(os.path.join(out_dir, "stability_report.json"), _report_payload(report))
    _write_json(os.path.join(out_dir, "design_summary.json"), {
        "horizon": design.horizon,
        "q1_diag": list(design.q1_diag),
        "epsilon": design.epsilon,
        "beta": design.beta,
        "gamma": design.gamma,
        "alpha": cfg.scenario.alpha,
        "delay_samples": [rt.dp.h1, rt.dp.h2],
        "channels_swapped": bool(rt.dp.swapped),
        "stable": bool(report.stable),
        "spectral_radius": report.spectral_radius,
    })
    return report


def cmd_design(cfg: RunConfig, out_dir: str) -> int:
    report = _write_design(cfg, cfg.design, out_dir)
    verdict = "stable" if report.stable else "UNSTABLE"
    print(f"design {verdict}: spectral radius {_fmt(report.spectral_radius)}")
    return _EXIT_OK if report.stable else _EXIT_UNSTABLE


def _simulate_one(cfg: RunConfig, spec) -> tuple[SimResult, StabilityReport | None]:
    result = run(cfg.scenario, spec)
    rt = result.extras.get("runtime")
    return result, (_stability_of(rt) if rt is not None else None)


def _write_run(result: SimResult, report: StabilityReport | None, out_dir: str):
    name = _safe_name(result.label)
    rows = zip(result.time, result.r1, result.r2, result.y1, result.y2,
               result.u1, result.u2, result.e_m)
    footer = ["# metrics"]
    for key in ("abs_peak", "mean", "rms"):
        footer.append(f"# {key},{_fmt(result.metrics[key])}")
    _write_csv(os.path.join(out_dir, f"{name}.csv"),
               ["time", "r1", "r2", "y1", "y2", "u1", "u2", "e_m"], rows, footer)
    _write_json(os.path.join(out_dir, f"{name}_metrics.json"), {
        "controller": result.label,
        "abs_peak": result.metrics["abs_peak"],
        "mean": result.metrics["mean"],
        "rms": result.metrics["rms"],
        "stable": None if report is None else bool(report.stable),
        "spectral_radius": None if report is None else report.spectral_radius,
    })


def cmd_simulate(cfg: RunConfig, out_dir: str, parallel: bool = False) -> int:
    if parallel:
        with ThreadPoolExecutor(max_workers=len(cfg.controllers)) as pool:
            outcomes = list(pool.map(lambda s: _simulate_one(cfg, s), cfg.controllers))
    else:
        outcomes = [_simulate_one(cfg, spec) for spec in cfg.controllers]

    comparison = []
    diverged = False
    for result, report in outcomes:
        _write_run(result, report, out_dir)
        comparison.append((result.label, result.metrics["abs_peak"],
                           result.metrics["mean"], result.metrics["rms"]))
        diverged = diverged or result.diverged
    _write_csv(os.path.join(out_dir, "comparison.csv"),
               ["controller", "abs_peak", "mean", "rms"], comparison)

    width = max(len(label) for label, *_ in comparison)
    print(f"{'controller':<{width}}  {'abs_peak':>14}  {'mean':>14}  {'rms':>14}")
    for label, peak, mean, rms in comparison:
        print(f"{label:<{width}}  {_fmt(peak):>14}  {_fmt(mean):>14}  {_fmt(rms):>14}")
    if diverged:
        print("warning: at least one run diverged; series truncated", file=sys.stderr)
        return _EXIT_DIVERGED
    return _EXIT_OK


def cmd_tune(cfg: RunConfig, out_dir: str) -> int:
    result: TuningResult = tune(tuning_context(cfg))
    _write_json(os.path.join(out_dir, "tuning_result.json"), {
        "p1": result.p1, "p2": result.p2,
        "i1": result.i1, "i2": result.i2,
        "epsilon": result.epsilon, "beta": result.beta, "gamma": result.gamma,
        "q1_diag": list(result.q1_diag),
        "trace": list(result.trace),
    })
    tuned = DesignSpec(
        horizon=cfg.tuning.get("horizon", DesignSpec.horizon),
        q1_diag=result.q1_diag, epsilon=result.epsilon,
        beta=result.beta, gamma=result.gamma,
    )
    report = _write_design(cfg, tuned, out_dir)
    verdict = "stable" if report.stable else "UNSTABLE"
    print(f"tuned design {verdict}: epsilon {_fmt(result.epsilon)}, "
          f"beta {_fmt(result.beta)}, gamma {_fmt(result.gamma)}, "
          f"spectral radius {_fmt(report.spectral_radius)}")
    return _EXIT_OK if report.stable else _EXIT_UNSTABLE


def cmd_stability(cfg: RunConfig, out_dir: str) -> int:
    rt = _design_runtime(cfg.scenario, cfg.design)
    report = _stability_of(rt)
    _write_eigenvalues(report, out_dir)
    _write_json(os.path.join(out_dir, "stability_report.json"), _report_payload(report))
    verdict = "stable" if report.stable else "UNSTABLE"
    print(f"{verdict}: spectral radius {_fmt(report.spectral_radius)}, "
          f"margin {_fmt(report.margin)}, "
          f"undelayed-loop radius {_fmt(report.corollary_radius)}")
    return _EXIT_OK if report.stable else _EXIT_UNSTABLE


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to a YAML run config")
    common.add_argument("--out", default=None,
                        help="output directory (default: config's output.directory or cwd)")
    common.add_argument("--parallel", action="store_true",
                        help="run independent controller simulations in worker threads")
    common.add_argument("--seed", type=int, default=None,
                        help="reserved; every pipeline is deterministic")

    parser = argparse.ArgumentParser(
        prog="ratiopid",
        description="Design, certify, simulate and tune ratio controllers "
                    "for two-input two-output processes with input delays.")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("design", parents=[common],
                   help="solve the gain schedule and certify stability")
    sub.add_parser("simulate", parents=[common],
                   help="run every configured controller and compare metrics")
    sub.add_parser("tune", parents=[common],
                   help="run the staged tuning procedure, then design")
    sub.add_parser("stability", parents=[common],
                   help="eigenvalue map and verdict for the configured design")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; remap onto this tool's codes
        return _EXIT_CONFIG if exc.code else _EXIT_OK

    try:
        cfg = load_config(args.config)
    except RatioPidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG

    out_dir = args.out or cfg.output_dir or "."
    os.makedirs(out_dir, exist_ok=True)

    try:
        if args.verb == "design":
            return cmd_design(cfg, out_dir)
        if args.verb == "simulate":
            return cmd_simulate(cfg, out_dir, parallel=args.parallel)
        if args.verb == "tune":
            return cmd_tune(cfg, out_dir)
        return cmd_stability(cfg, out_dir)
    except RatioPidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
