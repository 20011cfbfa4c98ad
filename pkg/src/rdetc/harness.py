"""Configuration, closed-loop simulation, initial-condition sweeps and CSV/JSON export."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np

from .analysis import (
    CertificateSet,
    LyapunovCandidate,
    LyapunovCertificate,
    TriggerParams,
    certify,
    dwell_time,
    lyapunov_feasibility,
    trigger_params,
)
from .kernels import BacksteppingDesign, SystemParams, design, trapezoid_weights
from .solver import Grid, ObserverStepper, PlantStepper, build_grid, init_profile
from .trigger import (
    Event,
    TriggerInvariantError,
    control_weights,
    lemma2_check,
    lyapunov_decay_check,
    should_fire,
    step_m,
)

log = logging.getLogger(__name__)

MODES = ("open_loop", "continuous", "etc")
_MODE_ALIASES = {"event_triggered": "etc"}


@dataclass(frozen=True)
class SimConfig:
    """One experiment.  Serialized as a flat JSON object; unknown keys are rejected.

    ``u0`` and ``uhat0`` are either a kind understood by
    :func:`rdetc.solver.init_profile`, a mapping such as
    ``{"kind": "sweep", "n": 3, "scale": 2.0}``, or an explicit list of
    samples.  ``dt = None`` means ``dt = h``.
    """

    eps: float = 0.1
    lam: float = 0.25
    q: float = 2.3
    eta: float = 1.0
    sigma: float = 0.1
    m0: float = -1e-4
    kappa1: float = 2.1
    kappa2: float = 312.5
    kappa3: float = 59.4
    B: float = 460.0
    n_nodes: int = 162
    dt: float | None = None
    t_final: float = 150.0
    mode: str = "etc"
    u0: Any = "paper_u0"
    uhat0: Any = "paper_uhat0"
    output_dir: str | None = None
    decimation: int = 10

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not (self.t_final > 0 and math.isfinite(self.t_final)):
            raise ValueError("t_final must be positive")
        if int(self.decimation) != self.decimation or self.decimation < 1:
            raise ValueError("decimation must be a positive integer")
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        if not self.m0 < 0:
            raise ValueError("m0 must be negative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        for name in ("u0", "uhat0"):
            value = getattr(self, name)
            if isinstance(value, (list, tuple)):
                object.__setattr__(self, name, [float(v) for v in value])
            elif isinstance(value, dict):
                object.__setattr__(self, name, dict(value))
        self.params  # validates eps, lam, q
        self.grid

    @property
    def params(self) -> SystemParams:
        return SystemParams(eps=self.eps, lam=self.lam, q=self.q)

    @property
    def grid(self) -> Grid:
        return build_grid(self.n_nodes, self.dt)

    @property
    def candidate(self) -> LyapunovCandidate:
        return LyapunovCandidate(B=self.B, kappa1=self.kappa1, kappa2=self.kappa2, kappa3=self.kappa3)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> SimConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | os.PathLike) -> SimConfig:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> SimConfig:
        return dataclasses.replace(self, **changes)


def initial_profile(spec, grid: Grid) -> np.ndarray:
    if isinstance(spec, str):
        return init_profile(spec, grid)
    if isinstance(spec, dict):
        spec = dict(spec)
        kind = spec.pop("kind", None)
        if kind is None:
            raise ValueError("initial condition mapping needs a 'kind'")
        return init_profile(kind, grid, **spec)
    return init_profile("samples", grid, samples=spec)


@lru_cache(maxsize=4)
def cached_design(params: SystemParams, n_nodes: int) -> BacksteppingDesign:
    return design(params, n_nodes)


@dataclass(frozen=True)
class Controller:
    """Everything a closed-loop run needs besides the initial state.

    ``candidate`` is the Lyapunov candidate actually used: the configured
    one when it passes, otherwise the same kappas with the smallest
    admissible ``B``.  The trigger's ``rho`` follows that candidate.
    """

    design: BacksteppingDesign
    certificates: CertificateSet
    candidate: LyapunovCandidate
    lyap: LyapunovCertificate
    trigger: TriggerParams
    tau: float


def prepare(config: SimConfig, kernels: BacksteppingDesign | None = None) -> Controller:
    params = config.params
    if kernels is None:
        kernels = cached_design(params, config.n_nodes)
    cert = certify(params, sigma=config.sigma, eta=config.eta, m0=config.m0,
                   candidate=config.candidate, kernels=kernels)
    candidate = config.candidate
    lyap = cert.lyap
    if not lyap.ok:
        if cert.feasible_candidate is None:
            raise ValueError(f"no feasible Lyapunov candidate: {lyap.violated}")
        log.warning("configured candidate fails (%s); using B=%.6g", lyap.violated, cert.feasible_candidate.B)
        candidate = cert.feasible_candidate
    rho = params.eps * candidate.kappa1 * candidate.B / 2
    tp = trigger_params(cert.alphas, config.sigma, config.eta, config.m0, rho)
    lyap = lyapunov_feasibility(params, tp.betas, cert.g_norm_sq, candidate, config.eta)
    _, _, _, tau = dwell_time(cert.rho1, rho, config.sigma, config.eta)
    dt = config.grid.dt
    if dt > tau / 2:
        log.warning("time step %.3g exceeds half the dwell-time bound %.3g; "
                    "events are detected at step resolution", dt, tau)
    return Controller(design=kernels, certificates=cert, candidate=candidate, lyap=lyap, trigger=tp, tau=tau)


# per-step series recorded by a single run
SERIES = ("u_norm", "uhat_norm", "utilde_norm", "u0", "uhat1", "U", "U_ct", "d", "m",
          "what_norm_sq", "what1_sq", "wtilde0_sq", "wtilde_norm_sq", "V")


@dataclass
class BatchOutcome:
    """Raw result of :func:`simulate_batch`; series have shape ``(steps + 1, b)``."""

    t: np.ndarray
    series: dict[str, np.ndarray]
    event_steps: list[np.ndarray]
    event_U: list[np.ndarray]
    event_m: list[np.ndarray]
    initial: dict[str, np.ndarray]
    final: dict[str, np.ndarray]


def simulate_batch(controller: Controller, config: SimConfig, u0: np.ndarray, uhat0: np.ndarray,
                   record: bool = True) -> BatchOutcome:
    """Advance ``b`` closed loops that share parameters; ``u0`` and ``uhat0`` are ``(n, b)``.

    Per step: the plant moves with the held input, the observer takes the
    new measurement ``u(0)``, the holding error is formed, and an event
    refreshes the input when ``d**2 > -m``.  ``m`` is advanced from the
    quantities at the start of the step.  In event-triggered mode ``m < 0``
    and ``d**2 <= -m`` are checked every step.
    """
    grid = config.grid
    params = config.params
    kernels = controller.design
    if kernels.grid_n != grid.n_nodes:
        raise ValueError("controller was designed on a different grid")
    u = np.array(u0, dtype=float, copy=True)
    uh = np.array(uhat0, dtype=float, copy=True)
    if u.ndim != 2 or u.shape != uh.shape or u.shape[0] != grid.n_nodes:
        raise ValueError("initial states must both have shape (n_nodes, b)")
    b = u.shape[1]
    plant = PlantStepper(grid, params)
    observer = ObserverStepper(grid, params, kernels.gains)
    cw = control_weights(kernels.control)
    tw = trapezoid_weights(grid.n_nodes)
    K_op = kernels.K.operator
    P_op = kernels.P.operator
    tp = controller.trigger
    A, B = controller.lyap.A, controller.lyap.B
    mode = config.mode
    dt = grid.dt
    steps = int(round(config.t_final / dt))
    t = dt * np.arange(steps + 1)

    def stats(u, uh):
        wh = uh - K_op @ uh
        return tw @ (wh * wh), wh[-1] ** 2, (u[0] - uh[0]) ** 2

    def norm(f):
        return np.sqrt(tw @ (f * f))

    series = {name: np.empty((steps + 1, b)) for name in SERIES} if record else {}

    def store(n, U, Uct, d, m, s):
        if not record:
            return
        ut = u - uh
        wt = ut - P_op @ ut
        wt2 = tw @ (wt * wt)
        row = {
            "u_norm": norm(u), "uhat_norm": norm(uh), "utilde_norm": norm(ut), "u0": u[0], "uhat1": uh[-1],
            "U": U, "U_ct": Uct, "d": d, "m": m, "what_norm_sq": s[0], "what1_sq": s[1], "wtilde0_sq": s[2],
            "wtilde_norm_sq": wt2,
            "V": 0.5 * A * wt2 + 0.5 * B * s[0] - m if mode == "etc" else np.full(b, np.nan),
        }
        for name, value in row.items():
            series[name][n] = value

    Uct = cw @ uh
    U = Uct.copy() if mode != "open_loop" else np.zeros(b)
    d = U - Uct
    m = np.full(b, config.m0) if mode == "etc" else np.full(b, np.nan)
    s = stats(u, uh)
    event_steps: list[list[int]] = [[0] for _ in range(b)] if mode == "etc" else [[] for _ in range(b)]
    event_U: list[list[float]] = [[float(U[i])] for i in range(b)] if mode == "etc" else [[] for _ in range(b)]
    event_m: list[list[float]] = [[float(m[i])] for i in range(b)] if mode == "etc" else [[] for _ in range(b)]
    initial = {"u_norm": norm(u), "uhat_norm": norm(uh), "utilde_norm": norm(u - uh)}
    store(0, U, Uct, d, m, s)

    for n in range(1, steps + 1):
        if mode == "etc":
            m = step_m(m, d, s[0], s[1], s[2], dt, tp)
        u = plant.step(u, U)
        uh = observer.step(uh, U, u[0])
        Uct = cw @ uh
        if mode == "continuous":
            U = Uct
            d = np.zeros(b)
        else:
            d = U - Uct
        if mode == "etc":
            fire = should_fire(d, m)
            if fire.any():
                U = np.where(fire, Uct, U)
                d = np.where(fire, 0.0, d)
                for i in np.flatnonzero(fire):
                    event_steps[i].append(n)
                    event_U[i].append(float(U[i]))
                    event_m[i].append(float(m[i]))
            if np.any(d * d > -m):
                raise TriggerInvariantError(f"d^2 > -m after the event check at t={t[n]:.6g}")
        s = stats(u, uh)
        store(n, U, Uct, d, m, s)
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(uh)):
            raise FloatingPointError(f"state became non-finite at t={t[n]:.6g}")

    final = {"u_norm": norm(u), "uhat_norm": norm(uh), "utilde_norm": norm(u - uh)}
    return BatchOutcome(
        t=t, series=series,
        event_steps=[np.asarray(e, dtype=int) for e in event_steps],
        event_U=[np.asarray(e) for e in event_U],
        event_m=[np.asarray(e) for e in event_m],
        initial=initial, final=final,
    )


@dataclass
class Trajectory:
    """A single recorded run with its event log and certificate context."""

    config: SimConfig
    controller: Controller
    t: np.ndarray
    series: dict[str, np.ndarray]
    events: list[Event]

    @property
    def event_mask(self) -> np.ndarray:
        mask = np.zeros(self.t.shape[0], dtype=bool)
        steps = np.rint(np.array([e.t for e in self.events]) / self.config.grid.dt).astype(int)
        mask[steps] = True
        return mask

    @property
    def gaps(self) -> np.ndarray:
        return np.array([e.gap for e in self.events[1:]])

    def lemma2(self):
        c = self.controller.certificates
        s = self.series
        return lemma2_check(self.t, s["d"], s["what_norm_sq"], s["what1_sq"], s["wtilde0_sq"],
                            self.event_mask, (c.rho1, c.alpha1, c.alpha2, c.alpha3))

    def lyapunov(self, tol: float = 0.05):
        return lyapunov_decay_check(self.t, self.series["V"], self.controller.lyap.varrho, tol)

    def summary(self) -> dict:
        s = self.series
        gaps = self.gaps
        out = {
            "mode": self.config.mode,
            "steps": int(self.t.shape[0] - 1),
            "n_events": len(self.events),
            "tau": self.controller.tau,
            "min_gap": float(gaps.min()) if gaps.size else None,
            "initial": {k: float(s[k][0]) for k in ("u_norm", "uhat_norm", "utilde_norm")},
            "final": {k: float(s[k][-1]) for k in ("u_norm", "uhat_norm", "utilde_norm")},
        }
        if self.config.mode == "etc":
            l2 = self.lemma2()
            ly = self.lyapunov()
            out["lemma1"] = {"max_m": float(np.max(s["m"])),
                             "max_d_sq_plus_m": float(np.max(s["d"] ** 2 + s["m"]))}
            out["lemma2"] = dataclasses.asdict(l2)
            out["lyapunov"] = dataclasses.asdict(ly)
            out["gaps_ok"] = bool(np.all(gaps >= self.controller.tau))
        return out


def run_simulation(config: SimConfig, controller: Controller | None = None) -> Trajectory:
    """Run one experiment from the configured initial conditions."""
    if controller is None:
        controller = prepare(config)
    grid = config.grid
    u0 = initial_profile(config.u0, grid)[:, None]
    uh0 = initial_profile(config.uhat0, grid)[:, None]
    out = simulate_batch(controller, config, u0, uh0, record=True)
    series = {k: v[:, 0] for k, v in out.series.items()}
    steps = out.event_steps[0]
    times = out.t[steps]
    gaps = np.diff(times, prepend=times[:1]) if steps.size else times
    events = [Event(index=j, t=float(times[j]), U=float(out.event_U[0][j]), gap=float(gaps[j]),
                    m=float(out.event_m[0][j])) for j in range(steps.size)]
    return Trajectory(config=config, controller=controller, t=out.t, series=series, events=events)


# ---------------------------------------------------------------------------
# sweeps

HIST_BINS = 40


def gap_histogram(gaps: np.ndarray, tau: float, t_final: float, bins: int = HIST_BINS):
    """Counts and density of gaps over log10-spaced bins spanning ``[tau/10, t_final]``.

    The density is per unit of ``log10(gap)`` and integrates to one over the bins.
    """
    edges = np.logspace(math.log10(tau / 10), math.log10(t_final), bins + 1)
    counts, _ = np.histogram(np.asarray(gaps, dtype=float), bins=edges)
    total = counts.sum()
    widths = np.diff(np.log10(edges))
    density = counts / (total * widths) if total else np.zeros(bins)
    return edges, counts, density


@dataclass
class SweepResult:
    eta: float
    tau: float
    n_ics: int
    t_final: float
    gaps_per_run: list[np.ndarray] = field(repr=False)
    events_per_run: np.ndarray = field(repr=False)
    final_ratio: np.ndarray = field(repr=False)

    @property
    def gaps(self) -> np.ndarray:
        return np.concatenate(self.gaps_per_run) if self.gaps_per_run else np.empty(0)

    @property
    def total_events(self) -> int:
        return int(self.events_per_run.sum())

    def histogram(self, bins: int = HIST_BINS):
        return gap_histogram(self.gaps, self.tau, self.t_final, bins)

    def fraction_within(self, lo: float = 0.1, hi: float = 10.0) -> float:
        g = self.gaps
        return float(np.mean((g >= lo) & (g <= hi))) if g.size else 0.0

    def stats(self) -> dict:
        g = self.gaps
        return {
            "eta": self.eta, "tau": self.tau, "n_ics": self.n_ics, "total_events": self.total_events,
            "n_gaps": int(g.size),
            "min_gap": float(g.min()) if g.size else None,
            "median_gap": float(np.median(g)) if g.size else None,
            "max_gap": float(g.max()) if g.size else None,
            "fraction_0.1_to_10": self.fraction_within(),
            "max_final_ratio": float(self.final_ratio.max()) if self.final_ratio.size else None,
            "gaps_ok": bool(np.all(g >= self.tau)),
        }


def _sweep_chunk(controller: Controller, config: SimConfig, indices: list[int]):
    grid = config.grid
    u0 = np.stack([init_profile("sweep", grid, n=n) for n in indices], axis=1)
    out = simulate_batch(controller, config, u0, 2.0 * u0, record=False)
    gaps = [np.diff(out.t[steps]) for steps in out.event_steps]
    ratio = out.final["u_norm"] / out.initial["u_norm"]
    return indices, gaps, ratio


def sweep_workers() -> int:
    raw = os.environ.get("ETC_SIM_WORKERS")
    if raw is None:
        return max(1, min(os.cpu_count() or 1, 8))
    workers = int(raw)
    if workers < 1:
        raise ValueError("ETC_SIM_WORKERS must be a positive integer")
    return workers


def run_sweep(base: SimConfig, n_ics: int = 100, workers: int | None = None) -> SweepResult:
    """Run ``u0 = x^2 (x-1)^2 sin(n pi x)``, ``uhat0 = 2 u0`` for ``n = 1..n_ics`` in event-triggered mode.

    Initial conditions are batched; ``workers`` processes (default from
    ``ETC_SIM_WORKERS``) each take a contiguous block.  Any invariant
    failure aborts the sweep.
    """
    if n_ics < 1:
        raise ValueError("n_ics must be positive")
    config = base.replace(mode="etc")
    controller = prepare(config)
    workers = sweep_workers() if workers is None else workers
    indices = list(range(1, n_ics + 1))
    blocks = [list(b) for b in np.array_split(indices, min(workers, n_ics)) if len(b)]
    blocks = [[int(i) for i in b] for b in blocks]
    if len(blocks) == 1:
        results = [_sweep_chunk(controller, config, blocks[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(blocks)) as pool:
            results = list(pool.map(_sweep_chunk, [controller] * len(blocks), [config] * len(blocks), blocks))
    gaps: list[np.ndarray] = []
    ratios: list[float] = []
    for _, block_gaps, block_ratio in results:
        gaps.extend(block_gaps)
        ratios.extend(block_ratio.tolist())
    return SweepResult(
        eta=config.eta, tau=controller.tau, n_ics=n_ics, t_final=config.t_final,
        gaps_per_run=gaps, events_per_run=np.array([g.size + 1 for g in gaps]),
        final_ratio=np.array(ratios),
    )


# ---------------------------------------------------------------------------
# export

def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def jsonable(value):
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def certificate_summary(controller: Controller) -> dict:
    c = controller.certificates
    return {
        "r": c.r, "mu": c.mu, "open_loop_rate": c.params.lam - c.params.eps * c.mu**2,
        "g_norm_sq": c.g_norm_sq, "rho1": c.rho1,
        "alpha": list(c.alphas), "beta": list(controller.trigger.betas), "rho": controller.trigger.rho,
        "tau": controller.tau, "k0": c.k0, "k1": c.k1, "dk0": c.dk0, "dk1": c.dk1,
        "P_tilde": c.P_tilde, "L_tilde": c.L_tilde,
        "lyapunov": dataclasses.asdict(controller.lyap),
        "continuous": dataclasses.asdict(c.ct),
    }


def write_summary(path: Path, payload: dict) -> None:
    try:
        path.write_text(json.dumps(jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_report(result: Trajectory, output_dir: str | os.PathLike | None = None) -> dict[str, Path]:
    """Write ``trajectory.csv``, ``events.csv``, ``trigger.csv`` and ``summary.json``.

    Trajectory and trigger files keep every ``decimation``-th step; the
    event log is complete.  Returns the written paths by name.
    """
    cfg = result.config
    out = Path(output_dir if output_dir is not None else (cfg.output_dir or "."))
    out.mkdir(parents=True, exist_ok=True)
    s = result.series
    keep = np.arange(0, result.t.shape[0], cfg.decimation)
    paths = {
        "trajectory": out / "trajectory.csv",
        "events": out / "events.csv",
        "trigger": out / "trigger.csv",
        "summary": out / "summary.json",
    }
    cols = ("u_norm", "uhat_norm", "utilde_norm", "u0", "uhat1", "U", "U_ct", "d", "m")
    _write_csv(paths["trajectory"], ["t", *cols], ([result.t[i], *(s[c][i] for c in cols)] for i in keep))
    _write_csv(paths["events"], ["j", "t_j", "U_j", "gap", "m"],
               ([e.index, e.t, e.U, e.gap, e.m] for e in result.events))
    _write_csv(paths["trigger"], ["t", "d_sq", "neg_m"],
               ([result.t[i], s["d"][i] ** 2, -s["m"][i]] for i in keep))
    write_summary(paths["summary"], {
        "config": cfg.to_dict(),
        "certificates": certificate_summary(result.controller),
        "run": result.summary(),
    })
    return paths


def export_sweep(results: list[SweepResult], base: SimConfig, output_dir: str | os.PathLike) -> dict[str, Path]:
    """Write one histogram and one gap file per ``eta`` plus ``sweep_summary.json``."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for res in results:
        tag = _fmt(res.eta)
        edges, counts, density = res.histogram()
        hp = out / f"histogram_eta{tag}.csv"
        _write_csv(hp, ["bin_lo", "bin_hi", "count", "density"],
                   ([edges[i], edges[i + 1], counts[i], density[i]] for i in range(counts.size) if counts.sum()))
        paths[f"histogram_eta{tag}"] = hp
        gp = out / f"gaps_eta{tag}.csv"
        _write_csv(gp, ["run", "gap"], ([n + 1, g] for n, run in enumerate(res.gaps_per_run) for g in run))
        paths[f"gaps_eta{tag}"] = gp
    sp = out / "sweep_summary.json"
    write_summary(sp, {"config": base.to_dict(), "sweeps": [r.stats() for r in results]})
    paths["summary"] = sp
    return paths
