"""Sweeps over (epsilon, delta), rate fits, weak-form verification and reports.

A sweep row runs the whole pipeline for one (epsilon, delta): regularize, lift,
build the subsolution state, run the greedy perturbation and record the norms
of the resulting pair (rho, rho v_hat) together with its constraint margins
and weak-form residuals.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .config import Tolerances
from .constraints import (
    TimeWindow,
    check_l2,
    check_strict,
    compute_M,
    energy_ratio,
    linear_residuals,
    state_from_lift,
)
from .errors import InsufficientSpan, MachlabError
from .lift import bound_check_2_6, delta0_threshold, lift, positive
from .perturb import run_iteration
from .regularize import regularize
from .scenarios import make_analytic
from .spectral import GridSpec, fft
from .weakform import default_profiles, directions, lattice, weak_defects

WORKERS_ENV = "MACHLAB_WORKERS"
WEAK_KMAX = 4
WEAK_ABS = 1e-3
# pairings below this fraction of the largest first-row entry count as zero
PAIRING_FLOOR = 1e-10


def fit_rate(x, y) -> dict:
    """Least-squares slope of log y against log x.

    Raises
    ------
    InsufficientSpan
        With fewer than three points or when x spans less than a factor 4.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.max() / x.min() < 4:
        raise InsufficientSpan(f"need >= 3 points over a factor 4 in x, got {x.size} over {x.max() / x.min():.2f}")
    if np.any(y <= 0):
        raise ValueError("fit_rate needs positive y values")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(ly) == 0:
        return {"slope": 0.0, "intercept": float(ly[0]), "r2": 1.0}
    fit = stats.linregress(lx, ly)
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "r2": float(fit.rvalue**2)}


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    """Everything that determines a sweep.

    ``deltas[i]`` lists the deltas run at ``epsilons[i]``, and delta0 is then
    measured over that list. An empty entry asks for the automatic choice
    ``min(delta0, epsilon) / 2`` with delta0 measured over ``delta0_fractions``
    times epsilon. ``T_window`` defaults to
    ``T - 2 max(epsilons)`` so every row shares one working window.
    """

    scenario: str
    grid: dict
    epsilons: tuple
    deltas: tuple
    gamma: float = 1.4
    seeds: tuple = (0,)
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    budget: int = 10
    target: float = 0.5
    levels: tuple = (0, 1, 2)
    delta0_fractions: tuple = (1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0)
    T_window: float | None = None
    output_root: str = "runs"

    def __post_init__(self):
        if len(self.deltas) != len(self.epsilons):
            raise ValueError("deltas needs one list per epsilon")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "deltas", tuple(tuple(float(d) for d in ds) for ds in self.deltas))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        object.__setattr__(self, "delta0_fractions", tuple(float(f) for f in self.delta0_fractions))

    @property
    def grid_spec(self) -> GridSpec:
        return GridSpec(**self.grid)

    @property
    def window(self) -> float:
        T = self.grid_spec.T
        Tw = T - 2 * max(self.epsilons) if self.T_window is None else float(self.T_window)
        if not all(Tw < T - e for e in self.epsilons):
            raise ValueError(f"window end {Tw} must lie below T - epsilon for every epsilon")
        if Tw <= 0:
            raise ValueError(f"window end {Tw} is not positive")
        return Tw

    def content(self) -> dict:
        """Inputs that enter the hash (everything but the output location)."""
        d = asdict(self)
        d.pop("output_root")
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        for key in ("epsilons", "seeds", "levels", "delta0_fractions"):
            if key in d:
                d[key] = tuple(d[key])
        if "deltas" in d:
            d["deltas"] = tuple(tuple(x) for x in d["deltas"])
        return cls(**d)

    @property
    def hash(self) -> str:
        """Git blob hash of the canonical JSON content."""
        data = json.dumps(self.content(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

    @property
    def run_dir(self) -> Path:
        return Path(self.output_root) / self.hash[:12]


def schedule_manifest(scenario: str = "taylor_green_2d", steps: int = 4, eps0: float = 0.2,
                      grid: dict | None = None, **kw) -> RunManifest:
    """eps_k = eps0 2^-k with automatic deltas, k = 0 .. steps-1."""
    grid = grid or {"n": 2, "modes_per_axis": 64, "T": 0.8, "time_steps": 64}
    eps = tuple(eps0 * 2.0**-k for k in range(steps))
    return RunManifest(scenario=scenario, grid=grid, epsilons=eps, deltas=tuple(() for _ in eps), **kw)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


# ---------------------------------------------------------------------------
# per-row measurements
# ---------------------------------------------------------------------------

def initial_pairings(f0: np.ndarray, grid: GridSpec, kmax: int = WEAK_KMAX) -> list[dict]:
    """|int f0 . a cos(k.x) dx| and |int f0 . a sin(k.x) dx| for |k|_inf <= kmax."""
    n = grid.n
    ks = lattice(n, kmax)
    fh = fft(f0, n) * (grid.torus_volume / grid.modes_per_axis**n)
    N = grid.modes_per_axis
    out = []
    for k in ks:
        # int f exp(-i k.x) sits at index k; the pairing with exp(i k.x) is its conjugate
        c = fh[(slice(None),) + tuple(kk % N for kk in k)]
        for j, a in enumerate(directions(k, solenoidal=False)):
            z = complex(a @ c)
            out.append({"k": list(k), "dir": j, "part": "cos", "value": abs(z.real)})
            if any(k):
                out.append({"k": list(k), "dir": j, "part": "sin", "value": abs(z.imag)})
    return out


def weak_residuals(state, L, pair, P: TimeWindow) -> dict:
    """Weak mass and momentum defects of (rho, rho v_hat) over the window.

    Test fields are trigonometric with |k|_inf <= 4, scaled by 1/max(1, |k|),
    times three time profiles vanishing before the window end. The pressure
    uses rho^gamma / delta^2 = pi_eps + K_star / delta^2, whose spatially
    constant part pairs to zero with every test gradient.
    """
    g = state.grid
    n = g.n
    gP = g.truncated(P.stop)
    upto = slice(0, P.stop + 1)
    rho = state.rho0[upto]
    m = (state.V0 + pair.V_tilde)[:, upto]
    pi = L.pi_eps.values[upto]
    flux = m[:, None] * m[None, :] / rho + pi * np.eye(n).reshape((n, n) + (1,) * (n + 1))
    profiles = default_profiles(gP.T, 3)
    mass = weak_defects(rho, m, gP, WEAK_KMAX, profiles, normalize_gradient=True)
    mom = weak_defects(m, flux, gP, WEAK_KMAX, profiles, normalize_gradient=True)
    return {"weak_mass": float(mass.max()), "weak_momentum": float(mom.max())}


def _norms(state, pair, u_ref) -> dict:
    rho = state.rho0
    W = state.V0 + pair.V_tilde

    def sq(a):
        return state.integral((a**2).sum(axis=0))

    return {
        "rho_c0": float(np.abs(state.restrict(rho) - 1).max()),
        "momentum_l2": float(np.sqrt(sq(W - u_ref))),
        "sqrt_rho_l2": float(np.sqrt(sq(W / np.sqrt(rho) - u_ref))),
        "vhat_minus_v_sq": float(sq(pair.V_tilde / rho)),
    }


def run_row(manifest: RunManifest, index: int, epsilon: float, delta: float, delta0: float | None,
            seed: int) -> dict:
    """One (epsilon, delta) row. Stage errors are recorded, never raised."""
    tol = Tolerances.from_dict(manifest.tolerances)
    grid = manifest.grid_spec
    row = {"index": index, "epsilon": epsilon, "delta": delta, "delta0": delta0, "seed": seed,
           "error": None}
    stage = "scenario"
    try:
        sc = make_analytic(manifest.scenario, grid, manifest.params)
        stage = "regularize"
        reg = regularize(sc, epsilon)
        stage = "lift"
        L = lift(reg, delta, manifest.gamma, tol)
        b = bound_check_2_6(L)
        row.update({"alpha_eps": reg.alpha_eps, "bound_2_6_sum": b["sum"], "bound_2_6_pass": b["pass"],
                    "m_linf": b["m_linf"], "R_tilde_remainder_linf": b["R_tilde_remainder_linf"],
                    "lift_positive": positive(L),
                    "below_delta0": None if delta0 is None else bool(delta <= delta0)})
        stage = "state"
        P = TimeWindow(0, L.grid.steps_until(manifest.window))
        state = state_from_lift(L, P)
        stage = "perturb"
        pair, log = run_iteration(state, manifest.budget, manifest.target, seed, manifest.levels, tol=tol)
        stage = "measure"
        d = compute_M(state, pair)
        trR0 = state.tr_R0_integral
        strict = check_strict(state, pair, tol, d)
        l2 = check_l2(state, pair, tol)
        lin = linear_residuals(state.grid, pair, tol)
        er = energy_ratio(state, pair, tol)
        row.update(_norms(state, pair, reg.u_ref.values))
        row.update(weak_residuals(state, L, pair, P))
        fraction = d.trace_integral / trR0
        row.update({
            "window_steps": P.stop,
            "tr_R0_integral": trR0,
            "tr_M_integral": d.trace_integral,
            "trace_fraction": fraction,
            "weak_bound": WEAK_ABS + 2 * fraction * trR0,
            "energy_ratio": er["ratio"],
            "energy_sharp_ok": er["sharp_ok"],
            "min_margin": strict["min_margin"],
            "strict_ok": strict["ok"],
            "l2_lhs": l2["lhs"],
            "l2_rhs": l2["rhs"],
            "l2_ok": l2["ok"],
            "linear_div": lin["div"],
            "linear_momentum": lin["momentum"],
            "greedy_steps": len(log.steps),
            "greedy_accepted": len(log.accepted),
            "measured_c0": log.measured_c0,
        })
        row["weak_ok"] = bool(max(row["weak_mass"], row["weak_momentum"]) <= row["weak_bound"])
        m0 = state.V0[:, 0] + pair.V_tilde[:, 0]
        row["initial_pairings"] = initial_pairings(m0 - reg.u_ref.values[:, 0], grid)
    except MachlabError as exc:
        row["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    return _jsonable(row)


def _row_task(args):
    return run_row(*args)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def plan_rows(manifest: RunManifest) -> list[tuple]:
    """(index, epsilon, delta, delta0, seed) for every row, measuring delta0 where needed."""
    tol = Tolerances.from_dict(manifest.tolerances)
    rows = []
    grid = manifest.grid_spec
    for eps, ds in zip(manifest.epsilons, manifest.deltas):
        cands = list(ds) if ds else [f * eps for f in manifest.delta0_fractions]
        try:
            reg = regularize(make_analytic(manifest.scenario, grid, manifest.params), eps)
            d0 = delta0_threshold(reg, cands, manifest.gamma, tol)
        except MachlabError:
            d0 = None
        chosen = ds if ds else ((min(d0, eps) / 2,) if d0 else ())
        for d in chosen:
            i = len(rows)
            rows.append((i, eps, float(d), d0, manifest.seeds[i % len(manifest.seeds)]))
    return rows


def _fits(rows: list[dict]) -> dict:
    ok = [r for r in rows if r.get("error") is None]
    out = {}

    def attempt(name, xs, ys):
        try:
            out[name] = fit_rate(xs, ys)
        except (InsufficientSpan, ValueError):
            out[name] = None

    attempt("rho_c0_vs_delta", [r["delta"] for r in ok], [r["rho_c0"] for r in ok])
    attempt("m_linf_vs_delta", [r["delta"] for r in ok], [r["m_linf"] for r in ok])
    attempt("vhat_minus_v_sq_vs_epsilon", [r["epsilon"] for r in ok], [r["vhat_minus_v_sq"] for r in ok])
    if ok and ok[0]["epsilon"] > 0:
        C = ok[0]["vhat_minus_v_sq"] / ok[0]["epsilon"]
        ratios = [r["vhat_minus_v_sq"] / (C * r["epsilon"]) if C > 0 else None for r in ok]
        out["limit_constant"] = {"C": C, "ratios": ratios}
    return out


def run_sweep(manifest: RunManifest) -> dict:
    """Run every row (in parallel when MACHLAB_WORKERS > 1) and assemble the report."""
    plan = plan_rows(manifest)
    tasks = [(manifest,) + p for p in plan]
    workers = min(_workers(), max(1, len(tasks)))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_row_task, tasks))
    else:
        rows = [_row_task(t) for t in tasks]
    report = {
        "manifest_hash": manifest.hash,
        "manifest": manifest.content(),
        "window": manifest.window,
        "rows": rows,
        "fits": _fits(rows),
        "initial_convergence": weak_convergence_initial(rows),
    }
    return _jsonable(report)


def weak_convergence_initial(rows: list[dict]) -> dict:
    """Per-mode table of |int (m0 - u0) . phi_k| along the rows.

    Entries whose first-row value is below ``PAIRING_FLOOR`` times the largest
    first-row value are dropped as numerically zero. ``halved`` flags entries
    whose last value is at most half the first.
    """
    ok = [r for r in rows if r.get("error") is None and r.get("initial_pairings")]
    if not ok:
        return {"modes": [], "values": [], "halved": [], "all_halved": None}
    first = ok[0]["initial_pairings"]
    top = max((e["value"] for e in first), default=0.0)
    floor = PAIRING_FLOOR * top
    modes, values, halved = [], [], []
    for j, e in enumerate(first):
        if e["value"] <= floor or e["value"] == 0:
            continue
        series = [r["initial_pairings"][j]["value"] for r in ok]
        modes.append({"k": e["k"], "dir": e["dir"], "part": e["part"]})
        values.append(series)
        halved.append(bool(series[-1] <= 0.5 * series[0]))
    return {"modes": modes, "values": values, "halved": halved,
            "all_halved": bool(all(halved)) if halved else None}


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

CSV_COLUMNS = [
    ("index", "row number"),
    ("epsilon", "regularization scale"),
    ("delta", "Mach number parameter"),
    ("delta0", "measured positivity threshold at this epsilon"),
    ("seed", "greedy seed"),
    ("rho_c0", "sup |rho - 1| over the window"),
    ("momentum_l2", "L2 norm of rho v_hat - u over the window"),
    ("sqrt_rho_l2", "L2 norm of sqrt(rho) v_hat - u over the window"),
    ("vhat_minus_v_sq", "squared L2 norm of v_hat - v over the window"),
    ("m_linf", "sup |m| of the momentum corrector"),
    ("trace_fraction", "int tr M over int tr R0 after the greedy run"),
    ("energy_ratio", "int |Vt|^2/rho0 over int tr R0"),
    ("min_margin", "min lambda_min(M) over the window"),
    ("l2_lhs", "|int V0.Vt/rho0|"),
    ("l2_rhs", "(1/8) int |Vt|^2/rho0"),
    ("weak_mass", "largest weak mass defect"),
    ("weak_momentum", "largest weak momentum defect"),
    ("weak_bound", "1e-3 + 2 trace_fraction int tr R0"),
    ("below_delta0", "delta <= delta0"),
    ("error", "stage:type of a failed row, empty otherwise"),
]


def _csv_value(row: dict, key: str) -> str:
    v = row.get(key)
    if key == "error":
        return "" if v is None else f"{v['stage']}:{v['type']}"
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    for name, doc in CSV_COLUMNS:
        buf.write(f"# {name}: {doc}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([c for c, _ in CSV_COLUMNS])
    for r in report.get("rows", []):
        w.writerow([_csv_value(r, c) for c, _ in CSV_COLUMNS])
    return buf.getvalue()


def parse_csv(text: str) -> list[dict]:
    """Rows of a report CSV with numbers and booleans restored."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        row = {}
        for k, v in rec.items():
            if v == "":
                row[k] = None
            elif v in ("true", "false"):
                row[k] = v == "true"
            elif k in ("index", "seed"):
                row[k] = int(v)
            elif k == "error":
                row[k] = v
            else:
                row[k] = float(v)
        out.append(row)
    return out


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def emit_report(report: dict, directory, formats=("json", "csv")) -> list[Path]:
    """Write report.json and/or report.csv into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "json":
            p = d / "report.json"
            p.write_text(report_json(report))
        elif fmt == "csv":
            p = d / "report.csv"
            p.write_text(report_csv(report))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        paths.append(p)
    return paths


def write_manifest(manifest: RunManifest, directory=None) -> Path:
    d = Path(directory) if directory is not None else manifest.run_dir
    d.mkdir(parents=True, exist_ok=True)
    p = d / "manifest.json"
    p.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return p


def load_manifest(path) -> RunManifest:
    return RunManifest.from_dict(json.loads(Path(path).read_text()))
