"""Command-line entry point.

Subcommands:
  run     one experiment from a config file (seed ensemble)
  sweep   the same config at several horizons, slope-fitted
  verify  invariant suite only (mixing, gradients, projection, oracle)
  plot    regret curves from a trace CSV to a standalone SVG
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import backend
from .config import ConfigError, ExperimentConfig
from .harness import build_sequence, k_sweep, resolve_topology, run_experiment
from .losses import Domain
from .oracle import OracleSpec, exponential_inverse_cdf, offline_minimize, \
    sample_exponential, verify_oracle_call
from .topology import validate_mixing


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="flat key-value config file")
    p.add_argument("--algorithm", choices=("ocgd", "congd", "dinoco", "dsgd"))
    p.add_argument("--topology",
                   help="complete|ring|star|path|file:<edge list path>")
    p.add_argument("--schedule", help="named step-size schedule")
    p.add_argument("--seed", type=int, help="replace the seed list with one seed")
    p.add_argument("--out", help="output directory")


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    changes = {}
    if getattr(args, "algorithm", None):
        changes["algorithm"] = args.algorithm
    if getattr(args, "topology", None):
        changes["topology_kind"] = args.topology
    if getattr(args, "schedule", None):
        changes["schedule_name"] = args.schedule
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    return cfg.with_(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    result = run_experiment(cfg, args.out)
    for key in sorted(result.summary):
        print("%s = %s" % (key, result.summary[key]))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    k_values = [int(v) for v in args.k.split(",")]
    sweep = k_sweep(cfg, k_values, args.out)
    print("sweep.k_values = %s" % ",".join(str(k) for k in sweep.k_values))
    print("sweep.sc_slope = %.6f" % sweep.sc_slope)
    if sweep.dc_slope is not None:
        print("sweep.dc_slope = %.6f" % sweep.dc_slope)
    if sweep.movement_slope is not None:
        print("sweep.movement_slope = %.6f" % sweep.movement_slope)
    if sweep.sc_slope >= 0.9:
        print("sweep.not_sublinear = true")
    return 0


def cmd_verify(args) -> int:
    """Run the invariant suite for a config without a full experiment."""
    cfg = _load(args)
    failures = 0

    def check(name, fn):
        nonlocal failures
        try:
            fn()
            print("PASS %s" % name)
        except Exception as exc:  # report, keep going
            failures += 1
            print("FAIL %s: %s" % (name, exc))

    graph, mixing = resolve_topology(cfg)

    def mixing_ok():
        validate_mixing(np.asarray(mixing.entries), graph)
        assert 0.0 <= mixing.lam < 1.0
        rng = np.random.default_rng(0)
        lap = np.eye(cfg.n_agents) - mixing.entries
        for _ in range(1000):
            z = rng.normal(size=cfg.n_agents)
            assert z @ lap @ z >= -1e-12

    check("mixing matrix contract", mixing_ok)

    seq = build_sequence(cfg, cfg.seeds[0])

    def gradients_ok():
        rng = np.random.default_rng(1)
        h = 1e-6
        lo = cfg.domain_lower + 2 * h
        hi = cfg.domain_upper - 2 * h
        for _ in range(200):
            k = int(rng.integers(0, seq.horizon))
            i = int(rng.integers(0, seq.n_agents))
            x = rng.uniform(lo, hi)
            loss = seq.loss(k, i)
            fd = (loss.value(np.array([x + h])) - loss.value(np.array([x - h]))) / (2 * h)
            g = float(loss.grad(np.array([x]))[0])
            scale = max(1.0, abs(fd))
            assert abs(g - fd) / scale <= 1e-5, "grad mismatch at x=%g" % x

    check("analytic gradients vs finite differences", gradients_ok)

    def projection_ok():
        dom = Domain.interval(cfg.domain_lower, cfg.domain_upper)
        rng = np.random.default_rng(2)
        for _ in range(1000):
            y, z = rng.normal(size=2, scale=3.0)
            py, pz = dom.project([y])[0], dom.project([z])[0]
            assert abs(py - pz) <= abs(y - z) + 1e-15
            assert dom.project([py])[0] == py

    check("projection idempotent and nonexpansive", projection_ok)

    def sampler_ok():
        rng = np.random.default_rng(3)
        draws = np.array([sample_exponential(2.0, rng) for _ in range(10000)])
        se = 0.5 / np.sqrt(len(draws))
        assert abs(draws.mean() - 0.5) <= 4 * se
        assert exponential_inverse_cdf(2.0, 1.0) == 0.0

    check("exponential sampler", sampler_ok)

    if cfg.algorithm == "dinoco":
        def oracle_ok():
            dom = Domain.interval(cfg.domain_lower, cfg.domain_upper)
            spec = OracleSpec.certified(dom, lipschitz=2.0, grid_points=2001)
            rng = np.random.default_rng(4)
            for _ in range(25):
                sigma = sample_exponential(1.0, rng)
                x = offline_minimize(lambda t: np.asarray(t) ** 2, sigma, spec)
                audit = verify_oracle_call(lambda t: np.asarray(t) ** 2, sigma, x, spec)
                assert audit.passed, "slack %g" % audit.slack

        check("offline minimizer certificate", oracle_ok)

    print("verify: %d failure(s)" % failures)
    return 1 if failures else 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.genfromtxt(args.trace, delimiter=",", names=True)
    agents = data["agent"]
    first = data[agents == agents.min()]
    k = first["k"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(k, first["sc_regret"], label="fixed-comparator regret")
    if not np.isnan(first["dc_regret"]).all():
        ax.plot(k, first["dc_regret"], label="per-round-comparator regret")
    ax.set_xlabel("round")
    ax.set_ylabel("running composite regret")
    ax.legend()
    fig.tight_layout()
    out = Path(args.out)
    fig.savefig(out, format="svg")
    print("wrote %s" % out)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="netregret",
        description="multi-agent online optimization over gossip networks "
                    "(backend: %s)" % backend.ACTIVE)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_overrides(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a horizon sweep")
    _add_overrides(p_sweep)
    p_sweep.add_argument("--k", required=True,
                         help="comma-separated horizons, e.g. 100,1000,10000,100000")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the invariant suite only")
    _add_overrides(p_verify)
    p_verify.set_defaults(fn=cmd_verify)

    p_plot = sub.add_parser("plot", help="plot a trace CSV to SVG")
    p_plot.add_argument("--trace", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=cmd_plot)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
