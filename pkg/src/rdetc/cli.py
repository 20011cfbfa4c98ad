"""Command line entry point: ``rdetc {kernels,validate,analyze,simulate,sweep}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .harness import (
    SimConfig,
    cached_design,
    certificate_summary,
    export_report,
    export_sweep,
    jsonable,
    prepare,
    run_simulation,
    run_sweep,
)
from .kernels import (
    SystemParams,
    apply_volterra,
    build_table,
    control_kernel,
    kernel_pde_residual,
    trapezoid_weights,
    uniform_nodes,
)
from .trigger import TriggerInvariantError


def _load_config(path: str | None) -> SimConfig:
    return SimConfig.load(path) if path else SimConfig()


def _print_checks(checks: list[tuple[str, bool, str]]) -> bool:
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all(ok for _, ok, _ in checks)


def kernel_checks(params: SystemParams, grid_n: int = 161) -> list[tuple[str, bool, str]]:
    """Diagonal traces, PDE residual order, inverse pairs and ``k'(0)``."""
    c = params.lam / (2 * params.eps)
    x = uniform_nodes(grid_n)
    tables = {kind: build_table(kind, params, grid_n) for kind in "PQKL"}
    checks = []
    diag_K = np.max(np.abs(np.diag(tables["K"].values) + c * x))
    diag_P = np.max(np.abs(np.diag(tables["P"].values) - c * (x - 1)))
    checks.append(("diagonal traces", max(diag_K, diag_P) <= 1e-10, f"K {diag_K:.2e}, P {diag_P:.2e}"))
    coarse_n = (grid_n - 1) // 2 + 1
    for kind in ("K", "P"):
        fine = kernel_pde_residual(kind, params, grid_n)
        coarse = kernel_pde_residual(kind, params, coarse_n)
        ratio = coarse.interior / fine.interior
        checks.append((f"{kind} residual order", 3 <= ratio <= 5,
                       f"interior {coarse.interior:.2e} -> {fine.interior:.2e} (ratio {ratio:.2f})"))
        if kind == "P":
            checks.append(("P Robin condition", fine.boundary < 1e-4, f"{fine.boundary:.2e}"))
    rng = np.random.default_rng(0)
    worst = {"K/L": 0.0, "P/Q": 0.0}
    w = trapezoid_weights(grid_n)
    for _ in range(8):
        coeffs = rng.normal(size=6) / (1 + np.arange(6)) ** 2
        f = sum(a * np.cos(j * np.pi * x) for j, a in enumerate(coeffs))
        f /= np.sqrt(w @ f**2)
        for pair, (fwd, inv) in {"K/L": ("K", "L"), "P/Q": ("P", "Q")}.items():
            back = apply_volterra("add", tables[inv], apply_volterra("subtract", tables[fwd], f))
            worst[pair] = max(worst[pair], float(np.sqrt(w @ (back - f) ** 2)))
    for pair, err in worst.items():
        checks.append((f"{pair} inverse pair", err <= 1e-5, f"{err:.2e}"))
    dk0 = control_kernel(params, grid_n).dk0
    checks.append(("k'(0) = 0", abs(dk0) <= 1e-8, f"{dk0:.2e}"))
    return checks


def trigger_checks(config: SimConfig) -> list[tuple[str, bool, str]]:
    """Short event-triggered run checking the trigger invariants."""
    try:
        traj = run_simulation(config.replace(mode="etc"))
    except TriggerInvariantError as exc:
        return [("trigger invariants", False, str(exc))]
    s = traj.series
    gaps = traj.gaps
    l2 = traj.lemma2()
    ly = traj.lyapunov()
    return [
        ("trigger invariants", bool(np.all(s["m"] < 0) and np.all(s["d"] ** 2 <= -s["m"])),
         f"max m {np.max(s['m']):.2e}"),
        ("dwell-time", bool(np.all(gaps >= traj.controller.tau)),
         f"min gap {gaps.min() if gaps.size else float('nan'):.3g} s vs tau {traj.controller.tau:.3g} s"),
        ("holding-error bound", l2.ok, f"{l2.n_violations} violations, worst ratio {l2.worst_ratio:.3g}"),
        ("Lyapunov decay", ly.ok, f"worst ratio {ly.worst_ratio:.4f}"),
    ]


def cmd_kernels(args) -> int:
    params = SystemParams(eps=args.eps, lam=args.lam, q=args.q)
    params.require_assumption()
    x = uniform_nodes(args.grid)
    i, j = np.tril_indices(args.grid)
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "x", "y", "value"])
        for kind in "PQKL":
            values = build_table(kind, params, args.grid).values
            for a, b in zip(i, j):
                writer.writerow([kind, format(x[a], ".17g"), format(x[b], ".17g"), format(values[a, b], ".17g")])
    print(f"wrote {out}")
    return 0


def cmd_validate(args) -> int:
    config = _load_config(args.config)
    run_all = args.all or not (args.kernels or args.trigger)
    ok = True
    if args.kernels or run_all:
        ok &= _print_checks(kernel_checks(config.params, args.grid))
    if args.trigger or run_all:
        ok &= _print_checks(trigger_checks(config.replace(t_final=args.t_final)))
    return 0 if ok else 1


def cmd_analyze(args) -> int:
    config = _load_config(args.config)
    controller = prepare(config)
    cert = controller.certificates
    configured = analysis.lyapunov_feasibility(config.params, cert.trigger.betas, cert.g_norm_sq,
                                               config.candidate, config.eta)
    report = {"config": config.to_dict(), "certificates": certificate_summary(controller),
              "configured_candidate": dataclasses.asdict(configured)}
    status = 0
    if args.check_paper:
        rows = analysis.compare_with_reference(config.params, sigma=config.sigma, candidate=config.candidate,
                                               kernels=cached_design(config.params, config.n_nodes))
        report["paper_check"] = rows
        status = 0 if all(r["ok"] for r in rows) else 1
    print(json.dumps(jsonable(report), indent=2, sort_keys=True))
    if args.check_paper:
        for r in rows:
            if not r["ok"]:
                print(f"mismatch: {r['name']} computed {r['computed']:.4g}, reference {r['reference']:.4g} "
                      f"(rel. error {r['rel_error']:.1%} > {r['tolerance']:.0%})", file=sys.stderr)
    return status


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if args.mode:
        config = config.replace(mode=args.mode)
    if args.t_final:
        config = config.replace(t_final=args.t_final)
    try:
        traj = run_simulation(config)
    except TriggerInvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2
    out = args.out or config.output_dir or "."
    paths = export_report(traj, out)
    summary = traj.summary()
    print(json.dumps(jsonable(summary), indent=2, sort_keys=True))
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    if config.mode == "etc":
        ok = summary["gaps_ok"] and summary["lemma2"]["n_violations"] == 0 and summary["lyapunov"]["n_violations"] == 0
        return 0 if ok else 1
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    if args.t_final:
        config = config.replace(t_final=args.t_final)
    etas = [float(e) for e in args.eta.split(",") if e.strip()]
    results = []
    try:
        for eta in etas:
            results.append(run_sweep(config.replace(eta=eta), args.n, workers=args.workers))
    except TriggerInvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2
    out = args.out or config.output_dir or "."
    paths = export_sweep(results, config, out)
    for r in results:
        print(json.dumps(jsonable(r.stats()), sort_keys=True))
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return 0 if all(r.stats()["gaps_ok"] for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdetc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernels", help="dump P, Q, K, L on the triangle as CSV")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=0.25)
    p.add_argument("--q", type=float, default=2.3)
    p.add_argument("--grid", type=int, default=162)
    p.add_argument("--out", default="kernels.csv")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("validate", help="kernel and trigger self-checks")
    p.add_argument("--config")
    p.add_argument("--kernels", action="store_true")
    p.add_argument("--trigger", action="store_true")
    p.add_argument("--all", action="store_true")
    p.add_argument("--grid", type=int, default=161, help="grid for the kernel checks")
    p.add_argument("--t-final", type=float, default=50.0, help="horizon of the trigger run (s)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", help="certificate constants as JSON")
    p.add_argument("--config")
    p.add_argument("--check-paper", action="store_true", help="compare with the published constants")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run one experiment and export CSV/JSON")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["open_loop", "continuous", "etc"])
    p.add_argument("--t-final", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="inter-execution statistics over the sine initial conditions")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--eta", default="1,100", help="comma-separated eta values")
    p.add_argument("--t-final", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
