"""Config-driven experiment runner.

Wires topology, losses, update rule, oracle and ledger; runs seed
ensembles and horizon sweeps; writes per-round CSV traces (17 significant
digits, so identical runs produce byte-identical files) and flat key-value
summary reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend
from .algorithms import (DinocoResult, StepSchedule, build_schedule, run_congd,
                         run_dinoco, run_ocgd)
from .config import ConfigError, ExperimentConfig, serialize_flat
from .losses import (Domain, LossSequence, auto_comparator_grid,
                     best_fixed_strategy, make_drifting_sequence)
from .oracle import OracleSpec
from .regret import RegretLedger, build_ledger, loglog_slope, zeta_surrogate
from .topology import (Graph, MixingMatrix, build_graph, metropolis_mixing,
                       read_edge_list, uniform_mixing)

TRACE_COLUMNS = (
    "k", "agent", "x", "f_loss", "network_loss", "v", "sc_regret", "dc_regret",
    "consensus_residual", "consensus_envelope", "composite_grad_norm",
    "composite_grad_envelope",
)


def resolve_topology(cfg: ExperimentConfig) -> tuple[Graph, MixingMatrix]:
    kind = cfg.topology_kind
    if kind.startswith("file:"):
        edges = read_edge_list(kind[5:])
        graph = build_graph("custom", cfg.n_agents, edges)
    else:
        graph = build_graph(kind, cfg.n_agents)
    if cfg.mixing_scheme == "uniform":
        return graph, uniform_mixing(graph)
    return graph, metropolis_mixing(graph)


def build_sequence(cfg: ExperimentConfig, run_seed: int) -> LossSequence:
    seed = cfg.loss_seed if cfg.loss_seed is not None else run_seed
    domain = Domain(np.full(cfg.dim, cfg.domain_lower),
                    np.full(cfg.dim, cfg.domain_upper))
    return make_drifting_sequence(
        cfg.family, cfg.n_agents, cfg.horizon, drift=cfg.drift,
        heterogeneity=cfg.heterogeneity, seed=seed, dim=cfg.dim, domain=domain,
        mu=cfg.mu, knee=cfg.knee, slope=cfg.slope, amp=cfg.amp, freq=cfg.freq,
        drift_step=cfg.drift_step, drift_amplitude=cfg.drift_amplitude,
        drift_period=cfg.drift_period)


def resolve_eta(cfg: ExperimentConfig) -> float:
    if cfg.eta is not None:
        return cfg.eta
    if cfg.eta_scheme == "sqrt_k":
        return 1.0 / math.sqrt(cfg.horizon)
    if cfg.eta_scheme == "sqrt_nk":
        return 1.0 / math.sqrt(cfg.n_agents * cfg.horizon)
    raise ConfigError("eta_scheme 'explicit' needs oracle.eta")


def resolve_oracle_spec(cfg: ExperimentConfig, seq: LossSequence) -> OracleSpec:
    # per-round own-loss Lipschitz bound certifies the grid
    bounds = [seq.loss(0, i).gradient_bound() for i in range(seq.n_agents)]
    lip = max(bounds)
    if cfg.oracle_grid_points is not None:
        return OracleSpec.certified(seq.domain, lip, cfg.oracle_grid_points)
    return OracleSpec.for_horizon(seq.domain, cfg.horizon, lip,
                                  scale=cfg.oracle_scale)


def resolve_schedule(cfg: ExperimentConfig, seq: LossSequence, lam: float,
                     comparator_grid: int) -> StepSchedule:
    if cfg.alpha is not None:
        return StepSchedule("constant", cfg.alpha, "explicit config value")
    constants = {
        "mu": float(np.min(seq.mu)),
        "g": seq.stacked_gradient_bound(),
        "lam": lam,
        "n_agents": seq.n_agents,
        "diameter": seq.domain.diameter_inf,
        "horizon": seq.horizon,
    }
    if cfg.schedule_name in ("ocgd_convex_dynamic", "congd_dynamic"):
        constants["path_variation"] = seq.path_variation(comparator_grid)
    return build_schedule(cfg.schedule_name, **constants)


@dataclass
class SeedRun:
    seed: int
    ledger: RegretLedger | None
    seq: LossSequence
    schedule: StepSchedule | None = None
    dinoco: "DinocoResult | None" = None


def run_single(cfg: ExperimentConfig, run_seed: int, *, _seq=None,
               _mixing=None) -> SeedRun:
    """One seed: build the sequence, play the rule, account everything.

    ``_seq``/``_mixing`` let an ensemble share one sequence instance (and its
    cached comparators) when the loss seed is pinned.
    """
    cfg.validate()
    if cfg.algorithm == "dsgd":
        raise ConfigError("use dsgd_preset for sampled-loss runs")
    mixing = _mixing
    if mixing is None:
        _, mixing = resolve_topology(cfg)
    seq = _seq if _seq is not None else build_sequence(cfg, run_seed)
    grid = cfg.comparator_grid or auto_comparator_grid(seq.horizon, seq.n_agents)
    static_point = float(seq.best_fixed(grid)[0])
    dynamic = None
    if cfg.report_dynamic:
        dynamic = seq.per_round_minimizers(grid)[:, 0]
    x0 = None
    if cfg.init == "minimizer":
        x0 = np.full(seq.n_agents, static_point)
    g_bound = seq.stacked_gradient_bound()

    run = SeedRun(seed=run_seed, ledger=None, seq=seq)
    if cfg.algorithm in ("ocgd", "congd"):
        schedule = resolve_schedule(cfg, seq, mixing.lam, grid)
        runner = run_ocgd if cfg.algorithm == "ocgd" else run_congd
        traj = runner(seq, mixing.entries, schedule, x0=x0)
        ledger = build_ledger(cfg.algorithm, traj, seq, mixing.entries,
                              schedule.regularization_weights(seq.horizon),
                              static_point, dynamic_points=dynamic,
                              schedule=schedule, g_bound=g_bound, lam=mixing.lam)
        run.schedule = schedule
    else:
        eta = resolve_eta(cfg)
        spec = resolve_oracle_spec(cfg, seq)
        result = run_dinoco(seq, mixing.entries, eta, spec, master_seed=run_seed)
        c = np.full(seq.horizon, 0.5 / eta)
        ledger = build_ledger("dinoco", result.traj, seq, mixing.entries, c,
                              static_point, dynamic_points=dynamic,
                              l1_diagnostic=True)
        run.dinoco = result
    ledger.meta.update({
        "lam": mixing.lam, "g_bound": g_bound, "comparator_grid": grid,
        "static_point": static_point,
    })
    run.ledger = ledger
    return run


# ---------------------------------------------------------------------------
# trace and report files
# ---------------------------------------------------------------------------

def _f(x: float) -> str:
    return format(float(x), ".17g")


def write_trace(path, ledger: RegretLedger) -> None:
    """RFC-4180-style CSV, one row per (round, agent), 1-based indices."""
    K, n = ledger.x.shape
    nanv = float("nan")
    dc = ledger.dc_regret
    env = ledger.consensus_envelope
    gn = ledger.grad_norm
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for k in range(K):
            for i in range(n):
                row = (
                    str(k + 1), str(i + 1), _f(ledger.x[k, i]),
                    _f(ledger.f_agent[k, i]), _f(ledger.network_loss[k]),
                    _f(ledger.v[k]), _f(ledger.sc_regret[k]),
                    _f(dc[k] if dc is not None else nanv),
                    _f(ledger.consensus_agents[k, i]),
                    _f(env[k] if env is not None else nanv),
                    _f(gn[k] if gn is not None else nanv),
                    _f(ledger.grad_envelope),
                )
                fh.write(",".join(row) + "\n")


def write_centers(path, seq: LossSequence) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ["k", "agent"] + ["center%d" % d for d in range(seq.dim)]
        fh.write(",".join(cols) + "\n")
        for k in range(seq.horizon):
            for i in range(seq.n_agents):
                vals = [_f(v) for v in np.atleast_1d(seq.centers[k, i])]
                fh.write(",".join([str(k + 1), str(i + 1)] + vals) + "\n")


def write_report(path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_flat({k: _fmt_entry(v) for k, v in entries.items()}))


def _fmt_entry(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _f(v)
    if v is None:
        return ""
    return str(v)


# ---------------------------------------------------------------------------
# ensembles and sweeps
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[SeedRun]
    summary: dict
    out_dir: Path | None = None

    def terminal_sc(self) -> np.ndarray:
        return np.array([r.ledger.terminal_sc for r in self.runs])

    def terminal_dc(self) -> np.ndarray:
        return np.array([r.ledger.terminal_dc for r in self.runs])


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every configured seed, write traces and the summary report."""
    cfg.validate()
    if cfg.algorithm == "dsgd":
        return dsgd_preset(cfg, out_dir)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.serialize(), encoding="utf-8")
    _, mixing = resolve_topology(cfg)
    shared_seq = build_sequence(cfg, cfg.seeds[0]) if cfg.loss_seed is not None else None
    runs = [run_single(cfg, seed, _seq=shared_seq, _mixing=mixing)
            for seed in cfg.seeds]
    if out is not None:
        for run in runs:
            write_trace(out / ("trace_seed%d.csv" % run.seed), run.ledger)
            if cfg.report_centers:
                write_centers(out / ("centers_seed%d.csv" % run.seed), run.seq)

    sc = np.array([r.ledger.terminal_sc for r in runs])
    dc = np.array([r.ledger.terminal_dc for r in runs])
    nseeds = len(runs)
    stderr = lambda a: float(np.std(a, ddof=1) / math.sqrt(nseeds)) if nseeds > 1 else 0.0
    first = runs[0].ledger
    summary = {
        "run.algorithm": cfg.algorithm,
        "run.horizon": cfg.horizon,
        "run.n_agents": cfg.n_agents,
        "run.n_seeds": nseeds,
        "run.backend": backend.ACTIVE,
        "topology.kind": cfg.topology_kind,
        "topology.lambda": first.meta["lam"],
        "topology.spectral_gap": 1.0 - first.meta["lam"],
        "constants.g": first.meta["g_bound"],
        "constants.diameter": cfg.domain_upper - cfg.domain_lower,
        "comparator.grid_points": first.meta["comparator_grid"],
        "regret.sc_terminal_mean": float(sc.mean()),
        "regret.sc_terminal_stderr": stderr(sc),
        "regret.dc_terminal_mean": float(np.nanmean(dc)) if not np.isnan(dc).all() else float("nan"),
        "regret.dc_terminal_stderr": stderr(dc) if not np.isnan(dc).any() else float("nan"),
        "violations.consensus": sum(r.ledger.consensus_violations() for r in runs),
        "violations.grad_norm": sum(r.ledger.grad_violations() for r in runs),
        "violations.consensus_term": sum(r.ledger.consensus_term_violations()
                                         for r in runs),
        "checks.recompute_max_error": max(r.ledger.recompute_max_error()
                                          for r in runs),
    }
    if runs[0].schedule is not None:
        summary["schedule.kind"] = runs[0].schedule.kind
        summary["schedule.base"] = runs[0].schedule.base
        summary["schedule.provenance"] = runs[0].schedule.provenance
        zeta = zeta_surrogate(first.meta["g_bound"], first.meta["lam"],
                              first.alpha_hat_min)
        summary["envelope.zeta_surrogate"] = zeta if zeta is not None else ""
    if runs[0].dinoco is not None:
        d = runs[0].dinoco
        summary["oracle.eta"] = d.eta
        summary["oracle.rho"] = d.spec.rho
        summary["oracle.beta"] = d.spec.beta
        summary["oracle.grid_points"] = d.spec.grid_points
        summary["oracle.audit_calls"] = sum(len(r.dinoco.audits) for r in runs)
        summary["oracle.audit_pass_rate"] = float(np.mean(
            [r.dinoco.audit_pass_rate for r in runs]))
        moves = np.array([r.dinoco.movement_l1 for r in runs])
        summary["movement.l1_mean"] = float(moves.mean())
        summary["movement.l1_stderr"] = stderr(moves)
    if out is not None:
        write_report(out / "summary.txt", summary)
    return ExperimentResult(config=cfg, runs=runs, summary=summary, out_dir=out)


@dataclass
class SweepResult:
    k_values: list[int]
    sc_means: np.ndarray
    dc_means: np.ndarray
    sc_slope: float
    dc_slope: float | None
    movement_means: np.ndarray | None
    movement_slope: float | None
    results: list[ExperimentResult]


def k_sweep(cfg: ExperimentConfig, k_values, out_dir=None) -> SweepResult:
    """Independent runs per horizon with freshly derived schedules; fits the
    log-log slope of the ensemble-mean terminal regrets."""
    k_values = [int(k) for k in k_values]
    if len(k_values) < 4:
        raise ConfigError("a sweep needs at least 4 horizons")
    out = Path(out_dir) if out_dir is not None else None
    results = []
    for k in k_values:
        sub = cfg.with_(horizon=k)
        results.append(run_experiment(
            sub, out / ("k%d" % k) if out is not None else None))
    sc = np.array([r.terminal_sc().mean() for r in results])
    dc = np.array([np.nanmean(r.terminal_dc()) if cfg.report_dynamic
                   else float("nan") for r in results])
    # the strict slope contract wants two decades of horizons; narrower
    # sweeps still get the raw fit
    sc_slope = loglog_slope(k_values, sc)
    dc_slope = None
    if cfg.report_dynamic and not np.isnan(dc).any():
        dc_slope = loglog_slope(k_values, dc)
    movement = None
    movement_slope = None
    if cfg.algorithm == "dinoco":
        movement = np.array([
            float(np.mean([run.dinoco.movement_l1 for run in r.runs]))
            for r in results])
        movement_slope = loglog_slope(k_values, movement)
    sweep = SweepResult(k_values=k_values, sc_means=sc, dc_means=dc,
                        sc_slope=sc_slope, dc_slope=dc_slope,
                        movement_means=movement, movement_slope=movement_slope,
                        results=results)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report = {"sweep.k_values": ",".join(str(k) for k in k_values),
                  "sweep.sc_slope": sc_slope,
                  "sweep.not_sublinear": sc_slope >= 0.9}
        for k, s, d in zip(k_values, sc, dc):
            report["sweep.sc_terminal.k%d" % k] = float(s)
            report["sweep.dc_terminal.k%d" % k] = float(d)
        if dc_slope is not None:
            report["sweep.dc_slope"] = dc_slope
        if movement_slope is not None:
            report["sweep.movement_slope"] = movement_slope
        write_report(out / "sweep.txt", report)
    return sweep


# ---------------------------------------------------------------------------
# sampled-loss (stochastic) preset
# ---------------------------------------------------------------------------

@dataclass
class DsgdRun:
    seed: int
    gap: float
    envelope: float
    jensen_ok: bool
    ledger: RegretLedger


@dataclass
class DsgdResult:
    config: ExperimentConfig
    runs: list[DsgdRun]
    summary: dict
    out_dir: Path | None = None

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.runs])


def dsgd_preset(cfg: ExperimentConfig, out_dir=None) -> DsgdResult:
    """Sampled quadratic components, one i.i.d. draw per agent per round.

    Runs the consensus-gradient rule with the constant convex-rate step and
    reports the averaged-iterate gap against the full-dataset objective,
    checked against the closed-form rate envelope.
    """
    cfg.validate()
    if cfg.algorithm != "dsgd":
        raise ConfigError("dsgd_preset wants algorithm = dsgd")
    graph, mixing = resolve_topology(cfg)
    n, K, S = cfg.n_agents, cfg.horizon, cfg.dataset_components
    domain = Domain.interval(cfg.domain_lower, cfg.domain_upper)
    dataset_seed = cfg.loss_seed if cfg.loss_seed is not None else 0
    rng = np.random.default_rng(np.random.SeedSequence(dataset_seed, spawn_key=(3,)))
    base = cfg.heterogeneity * rng.uniform(-1.0, 1.0, size=n)
    comps = base[:, None] + cfg.dataset_spread * rng.uniform(-1.0, 1.0, size=(n, S))
    comps = np.clip(comps, cfg.domain_lower, cfg.domain_upper)

    # gradient bound over every component, not just the sampled ones
    pool = LossSequence(
        family="quadratic", centers=comps.T[:, :, None], domain=domain,
        mu=np.full(n, cfg.mu), knee=np.full(n, cfg.knee),
        slope=np.full(n, cfg.slope), amp=np.full(n, cfg.amp),
        freq=np.full(n, cfg.freq))
    g_bound = pool.stacked_gradient_bound()
    lam = mixing.lam
    schedule = build_schedule("ocgd_convex_static", n_agents=n,
                              diameter=domain.diameter_inf, g=g_bound, lam=lam,
                              horizon=K)
    alpha = schedule.base
    c = 0.5 / alpha
    lap = np.eye(n) - mixing.entries

    # full-dataset objective: mean over components per agent + network term
    cbar = comps.mean(axis=1)
    offs = 0.5 * cfg.mu * ((comps - cbar[:, None]) ** 2).mean(axis=1).sum()

    def h_full(x):
        x = np.asarray(x, dtype=float)
        quad = 0.5 * cfg.mu * ((x - cbar) ** 2).sum() + offs
        return float(quad + c * (x @ lap @ x))

    xmin = np.linalg.solve(cfg.mu * np.eye(n) + 2.0 * c * lap, cfg.mu * cbar)
    if np.any(xmin < cfg.domain_lower) or np.any(xmin > cfg.domain_upper):
        raise ConfigError("dataset minimizer fell outside the box; shrink "
                          "heterogeneity or spread")
    hmin = h_full(xmin)
    envelope = math.sqrt(n) * domain.diameter_inf * g_bound \
        * (1.0 + 2.0 / (1.0 - lam)) / math.sqrt(K)

    runs = []
    for seed in cfg.seeds:
        idx = np.empty((K, n), dtype=int)
        for i in range(n):
            srng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, i)))
            idx[:, i] = srng.integers(0, S, size=K)
        centers = comps[np.arange(n)[None, :], idx][:, :, None]
        seq = LossSequence(
            family="quadratic", centers=centers, domain=domain,
            mu=np.full(n, cfg.mu), knee=np.full(n, cfg.knee),
            slope=np.full(n, cfg.slope), amp=np.full(n, cfg.amp),
            freq=np.full(n, cfg.freq), drift="sampled", seed=seed)
        traj = run_ocgd(seq, mixing.entries, schedule)
        grid = cfg.comparator_grid or auto_comparator_grid(K, n)
        static_point = float(best_fixed_strategy(seq, grid)[0])
        ledger = build_ledger("ocgd", traj, seq, mixing.entries,
                              schedule.regularization_weights(K), static_point,
                              schedule=schedule, g_bound=g_bound, lam=lam)
        xbar = traj.mean(axis=0)
        gap = h_full(xbar) - hmin
        h_along = 0.5 * cfg.mu * ((traj - cbar[None, :]) ** 2).sum(axis=1) \
            + offs + c * np.einsum("ki,ij,kj->k", traj, lap, traj)
        jensen_ok = h_full(xbar) <= float(h_along.mean()) + 1e-9
        runs.append(DsgdRun(seed=seed, gap=gap, envelope=envelope,
                            jensen_ok=jensen_ok, ledger=ledger))

    gaps = np.array([r.gap for r in runs])
    summary = {
        "run.algorithm": "dsgd",
        "run.horizon": K,
        "run.n_agents": n,
        "run.n_seeds": len(runs),
        "topology.lambda": lam,
        "constants.g": g_bound,
        "schedule.base": alpha,
        "dsgd.gap_mean": float(gaps.mean()),
        "dsgd.gap_max": float(gaps.max()),
        "dsgd.envelope": envelope,
        "dsgd.envelope_holds": bool(np.all(gaps <= envelope + 1e-9)),
        "dsgd.jensen_ok": all(r.jensen_ok for r in runs),
    }
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.serialize(), encoding="utf-8")
        for run in runs:
            write_trace(out / ("trace_seed%d.csv" % run.seed), run.ledger)
        write_report(out / "summary.txt", summary)
    return DsgdResult(config=cfg, runs=runs, summary=summary, out_dir=out)
