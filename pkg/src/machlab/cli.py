"""Command line entry point: ``machlab <command> ...``.

Every command writes under a run directory; sweeps use the manifest hash as
the directory name so identical manifests land in the same place.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import Tolerances
from .constraints import TimeWindow, state_from_lift
from .errors import MachlabError
from .harness import (
    RunManifest,
    emit_report,
    load_manifest,
    report_csv,
    report_json,
    run_sweep,
    schedule_manifest,
    write_manifest,
)
from .lift import lift
from .perturb import run_iteration
from .regularize import regularize
from .scenarios import list_scenarios, make_analytic
from .spectral import GridSpec, save_field


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _tolerances(pairs) -> dict:
    out = {}
    for p in pairs or ():
        key, _, value = p.partition("=")
        if not value:
            raise argparse.ArgumentTypeError(f"tolerance override {p!r} is not key=value")
        out[key] = int(value) if key in ("fd_order", "l1_oversample") else float(value)
    Tolerances.from_dict(out)
    return out


def _grid_args(p: argparse.ArgumentParser, steps: int = 64, T: float = 0.8) -> None:
    g = p.add_argument_group("grid")
    g.add_argument("--n", type=int, default=2, help="spatial dimension")
    g.add_argument("--modes", type=int, default=64, help="grid points per axis")
    g.add_argument("--T", type=float, default=T, help="final time")
    g.add_argument("--steps", type=int, default=steps, help="time steps")


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="taylor_green_2d")
    p.add_argument("--params", type=json.loads, default={}, help="scenario parameters as JSON")
    p.add_argument("--tol", action="append", metavar="KEY=VALUE", help="tolerance override")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")


def _grid(args) -> GridSpec:
    return GridSpec(n=args.n, modes_per_axis=args.modes, T=args.T, time_steps=args.steps)


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_scenario(args) -> int:
    if args.action == "list":
        for name in list_scenarios():
            print(name)
        return 0
    sc = make_analytic(args.scenario, _grid(args), args.params)
    args.out.mkdir(parents=True, exist_ok=True)
    save_field(sc.u, args.out / "u.bin")
    save_field(sc.pi, args.out / "pi.bin")
    _write_json(args.out / "scenario.json", {"name": sc.name, "params": sc.params, "grid": sc.grid.to_dict()})
    print(args.out)
    return 0


def _regularized(args):
    return regularize(make_analytic(args.scenario, _grid(args), args.params), args.epsilon)


def cmd_regularize(args) -> int:
    reg = _regularized(args)
    reg.save(args.out)
    print(json.dumps({"alpha_eps": reg.alpha_eps, "out": str(args.out)}))
    return 0


def cmd_lift(args) -> int:
    tol = Tolerances.from_dict(_tolerances(args.tol))
    L = lift(_regularized(args), args.delta, args.gamma, tol)
    L.save(args.out)
    print(args.out)
    return 0


def cmd_perturb(args) -> int:
    tol = Tolerances.from_dict(_tolerances(args.tol))
    L = lift(_regularized(args), args.delta, args.gamma, tol)
    P = None if args.window is None else TimeWindow(0, L.grid.steps_until(args.window))
    state = state_from_lift(L, P)
    args.out.mkdir(parents=True, exist_ok=True)
    _, log = run_iteration(state, args.budget, args.target, args.seed, tuple(args.levels), args.out / "iterate.jsonl", tol)
    last = log.accepted[-1] if log.accepted else {}
    summary = {"steps": len(log.steps), "accepted": len(log.accepted),
               "trace_fraction": last.get("trace_fraction", 1.0), "measured_c0": log.measured_c0,
               "energy_ratio": log.energy_ratio}
    _write_json(args.out / "perturb.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _manifest(args) -> RunManifest:
    kw = {"gamma": args.gamma, "seeds": tuple(args.seed), "params": args.params,
          "tolerances": _tolerances(args.tol), "budget": args.budget, "target": args.target,
          "levels": tuple(args.levels), "output_root": str(args.out)}
    grid = _grid(args).to_dict()
    grid.pop("dealias_fraction", None)
    if args.schedule:
        return schedule_manifest(args.scenario, args.schedule, args.eps0, grid, **kw)
    eps = _floats(args.epsilons)
    deltas = tuple(tuple(_floats(args.deltas)) for _ in eps) if args.deltas else tuple(() for _ in eps)
    return RunManifest(scenario=args.scenario, grid=grid, epsilons=tuple(eps), deltas=deltas, **kw)


def cmd_sweep(args) -> int:
    m = _manifest(args)
    write_manifest(m)
    report = run_sweep(m)
    emit_report(report, m.run_dir)
    print(m.run_dir)
    return 0


def cmd_verify(args) -> int:
    """Re-run a stored manifest and compare the report bytes."""
    run = Path(args.run_dir)
    m = load_manifest(run / "manifest.json")
    report = run_sweep(m)
    fresh = {"report.json": report_json(report), "report.csv": report_csv(report)}
    ok = True
    for name, text in fresh.items():
        stored = run / name
        same = stored.exists() and stored.read_text() == text
        ok &= same
        print(f"{name}: {'identical' if same else 'DIFFERS'}")
    return 0 if ok else 1


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    report = json.loads((run / "report.json").read_text())
    sys.stdout.write(report_csv(report) if args.format == "csv" else report_json(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="machlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="list or sample analytic scenarios")
    p.add_argument("action", choices=["list", "build"])
    _scenario_args(p)
    _grid_args(p)
    p.set_defaults(func=cmd_scenario)

    for name, func, help_ in (("regularize", cmd_regularize, "mollify a scenario at one epsilon"),
                              ("lift", cmd_lift, "build the compressible lift"),
                              ("perturb", cmd_perturb, "run the greedy perturbation on one lift")):
        p = sub.add_parser(name, help=help_)
        _scenario_args(p)
        _grid_args(p)
        p.add_argument("--epsilon", type=float, default=0.2)
        if name != "regularize":
            p.add_argument("--delta", type=float, default=0.05)
            p.add_argument("--gamma", type=float, default=1.4)
        if name == "perturb":
            p.add_argument("--budget", type=int, default=40)
            p.add_argument("--target", type=float, default=0.5)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--levels", type=int, nargs="+", default=[0, 1, 2])
            p.add_argument("--window", type=float, default=None, help="end time of the working window")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="run an (epsilon, delta) sweep")
    _scenario_args(p)
    _grid_args(p)
    p.add_argument("--epsilons", default="0.2,0.1,0.05", help="comma separated")
    p.add_argument("--deltas", default="", help="comma separated, shared by every epsilon; empty for automatic")
    p.add_argument("--schedule", type=int, default=0, help="use eps_k = eps0 2^-k for this many k")
    p.add_argument("--eps0", type=float, default=0.2)
    p.add_argument("--gamma", type=float, default=1.4)
    p.add_argument("--seed", type=int, nargs="+", default=[0])
    p.add_argument("--budget", type=int, default=10)
    p.add_argument("--target", type=float, default=0.5)
    p.add_argument("--levels", type=int, nargs="+", default=[0, 1, 2])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="re-run a stored sweep and compare bytes")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="print a stored report")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=["json", "csv"], default="csv")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MachlabError, ValueError, KeyError, argparse.ArgumentTypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
