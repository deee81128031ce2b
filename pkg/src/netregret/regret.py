"""Composite-regret accounting: per-round values, comparators, envelopes.

The played score of a round combines the plain losses with a network
disagreement penalty.  Two penalty conventions appear in the literature and
both are recorded:

* the quadratic form  q = x^T (I - Pi) x         (canonical, used in V)
* the neighbor double sum  sum_i sum_j pi_ij ||x_i - x_j||^2  ( = 2q for
  symmetric Pi; emitted alongside so the factor stays visible)

Running regrets compare cumulative V against a fixed comparator (sc) and a
per-round comparator (dc); both comparator stacks are consensual, so their
network penalty is exactly zero.  Every closed-form envelope from the
analysis is available through :func:`bound_envelope` or the per-round
series helpers, and ledgers count violations at 1e-9 tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algorithms import StepSchedule
from .losses import LossSequence

VIOLATION_TOL = 1e-9


# ---------------------------------------------------------------------------
# single-round composite value
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositeValue:
    f_loss: float
    quad_form: float
    pair_sum: float
    network_loss: float
    v: float


def composite_value(x, losses, mix, c: float, norm: str = "l2sq") -> CompositeValue:
    """Score one round: plain losses plus the weighted network penalty.

    ``norm="l2sq"`` is the played convention (network_loss = c * quad_form,
    pair_sum = its doubled neighbor-sum twin); ``norm="l1"`` is the
    diagnostic variant with absolute differences.
    """
    if c < 0:
        raise ValueError("c must be nonnegative")
    x = np.asarray(x, dtype=float)
    xs = x[:, None] if x.ndim == 1 else x
    n = xs.shape[0]
    f = float(sum(losses[i].value(xs[i]) for i in range(n)))
    mix = np.asarray(mix, dtype=float)
    lap = np.eye(n) - mix
    quad = float(sum(xs[:, d] @ lap @ xs[:, d] for d in range(xs.shape[1])))
    diff = xs[:, None, :] - xs[None, :, :]
    if norm == "l2sq":
        pair = float((mix * (diff * diff).sum(axis=2)).sum())
        network = c * quad
    elif norm == "l1":
        pair = float((mix * np.abs(diff).sum(axis=2)).sum())
        network = c * pair
    else:
        raise ValueError("norm must be 'l2sq' or 'l1'")
    return CompositeValue(f_loss=f, quad_form=quad, pair_sum=pair,
                          network_loss=network, v=f + network)


@dataclass(frozen=True)
class ConsensusResidual:
    stacked: float
    per_agent: np.ndarray


def consensus_residual(x) -> ConsensusResidual:
    """Distance of the stacked state from its replicated agent mean."""
    x = np.asarray(x, dtype=float)
    xs = x[:, None] if x.ndim == 1 else x
    dev = xs - xs.mean(axis=0, keepdims=True)
    per = np.linalg.norm(dev, axis=1)
    return ConsensusResidual(stacked=float(np.linalg.norm(dev)), per_agent=per)


# ---------------------------------------------------------------------------
# closed-form envelopes
# ---------------------------------------------------------------------------

def composite_grad_bound(g: float, lam: float, sqrtk_schedule: bool = False) -> float:
    """Upper bound on the composite gradient norm along a run:
    G(1 + 2/(1-lam)), or G(1 + 3.42/(1-lam)) under the 1/sqrt(k) step."""
    factor = 3.42 if sqrtk_schedule else 2.0
    return g * (1.0 + factor / (1.0 - lam))


def bound_envelope(name: str, constants: dict) -> float:
    """Evaluate a named closed-form bound from run constants.

    Constants are drawn from {g, mu, lam, n_agents, diameter, path_variation,
    horizon, c, zeta}; a missing one raises naming it.
    """
    def need(*keys):
        out = []
        for key in keys:
            if key not in constants or constants[key] is None:
                raise ValueError("envelope %r needs constant %r" % (name, key))
            out.append(float(constants[key]))
        return out

    if name == "composite_grad_constant":
        g, lam = need("g", "lam")
        return composite_grad_bound(g, lam)
    if name == "composite_grad_sqrtk":
        g, lam = need("g", "lam")
        return composite_grad_bound(g, lam, sqrtk_schedule=True)
    if name == "consensus_term_constant":
        g, lam = need("g", "lam")
        return 2.0 * g / (1.0 - lam)
    if name == "consensus_term_sqrtk":
        g, lam = need("g", "lam")
        return 3.42 * g / (1.0 - lam)
    if name == "strongly_convex_terminal":
        g, mu, lam, k = need("g", "mu", "lam", "horizon")
        c = composite_grad_bound(g, lam)
        return c * c / (2.0 * mu) * (1.0 + math.log(k))
    if name == "convex_static_terminal":
        d, c, n, k = need("diameter", "c", "n_agents", "horizon")
        return d * c * math.sqrt(n * k)
    if name == "convex_dynamic_terminal":
        d, c, n, pk, k = need("diameter", "c", "n_agents", "path_variation",
                              "horizon")
        return math.sqrt(math.sqrt(n) * d * (math.sqrt(n) * d + 3.0 * pk)) \
            * c * math.sqrt(k)
    if name == "sqrtk_static_terminal":
        d, g, lam, n, k = need("diameter", "g", "lam", "n_agents", "horizon")
        return 1.5 * math.sqrt(n) * d * g * (1.0 + 3.42 / (1.0 - lam)) * math.sqrt(k)
    if name == "congd_dynamic_terminal":
        zeta, lam, n, d, pk, k = need("zeta", "lam", "n_agents", "diameter",
                                      "path_variation", "horizon")
        return zeta * (1.0 + 1.0 / (1.0 - lam)) \
            * math.sqrt(k * (n * d * d + 3.0 * math.sqrt(n) * d * pk))
    if name == "dsgd_rate":
        d, g, lam, n, k = need("diameter", "g", "lam", "n_agents", "horizon")
        return math.sqrt(n) * d * g * (1.0 + 2.0 / (1.0 - lam)) / math.sqrt(k)
    raise ValueError("unknown envelope %r" % (name,))


def consensus_envelope_series(alphas: np.ndarray, lam: float,
                              factor: float = 1.0) -> np.ndarray:
    """Per-round geometric consensus bound factor * sum_{s<k} alpha_s lam^{k-1-s},
    computed by the exact recursion S_{k+1} = lam*S_k + alpha_k (S_1 = 0)."""
    out = np.empty(len(alphas))
    s = 0.0
    for k in range(len(alphas)):
        out[k] = factor * s
        s = lam * s + alphas[k]
    return out


def zeta_surrogate(g: float, lam: float, alpha_hat_min: float | None) -> float | None:
    """Post-hoc stand-in for the pseudo-convexity constant of the composite
    score: max{G, (2/(1-lam)) / min_k alpha_hat_k}.  None when no round had
    a nonzero disagreement (the constant is then not identifiable)."""
    if alpha_hat_min is None or alpha_hat_min <= 0.0:
        return None
    return max(g, (2.0 / (1.0 - lam)) / alpha_hat_min)


def loglog_slope(k_values, regrets) -> float:
    """Unguarded least-squares slope of log(regret) vs log(K); regrets clip
    at 1e-12 so vanishing (or negative) regret reads as flat."""
    k_values = np.asarray(k_values, dtype=float)
    regrets = np.asarray(regrets, dtype=float)
    if k_values.shape != regrets.shape or k_values.ndim != 1:
        raise ValueError("k_values and regrets must be equal-length vectors")
    y = np.log(np.clip(regrets, 1e-12, None))
    x = np.log(k_values)
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def sublinearity_slope(k_values, regrets) -> float:
    """Least-squares slope of log(regret) vs log(K); regrets clip at 1e-12.

    Needs at least 4 distinct horizons spanning two decades.
    """
    k_values = np.asarray(k_values, dtype=float)
    if len(np.unique(k_values)) < 4:
        raise ValueError("slope fit needs at least 4 distinct horizons")
    if k_values.max() / k_values.min() < 100.0:
        raise ValueError("slope fit needs horizons spanning two decades")
    return loglog_slope(k_values, regrets)


# ---------------------------------------------------------------------------
# whole-run ledger
# ---------------------------------------------------------------------------

@dataclass
class RegretLedger:
    """Per-round accounting of one run (n = 1 states, shape (K, N))."""

    algorithm: str
    x: np.ndarray
    f_agent: np.ndarray
    f_loss: np.ndarray
    quad_form: np.ndarray
    pair_sum: np.ndarray
    c_used: np.ndarray
    network_loss: np.ndarray
    v: np.ndarray
    v_static: np.ndarray
    sc_regret: np.ndarray
    static_comparator: float
    v_dynamic: np.ndarray | None = None
    dc_regret: np.ndarray | None = None
    dynamic_comparators: np.ndarray | None = None
    consensus_stacked: np.ndarray | None = None
    consensus_agents: np.ndarray | None = None
    consensus_envelope: np.ndarray | None = None
    grad_norm: np.ndarray | None = None
    grad_envelope: float = float("nan")
    consensus_term: np.ndarray | None = None
    consensus_term_envelope: float = float("nan")
    alpha_hat_min: float | None = None
    pair_sum_l1: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.x.shape[0]

    @property
    def terminal_sc(self) -> float:
        return float(self.sc_regret[-1])

    @property
    def terminal_dc(self) -> float:
        if self.dc_regret is None:
            return float("nan")
        return float(self.dc_regret[-1])

    def consensus_violations(self, tol: float = VIOLATION_TOL) -> int:
        if self.consensus_envelope is None or self.consensus_agents is None:
            return 0
        over = self.consensus_agents > (self.consensus_envelope[:, None] + tol)
        return int(over.sum())

    def grad_violations(self, tol: float = VIOLATION_TOL) -> int:
        if self.grad_norm is None or math.isnan(self.grad_envelope):
            return 0
        return int((self.grad_norm > self.grad_envelope + tol).sum())

    def consensus_term_violations(self, tol: float = VIOLATION_TOL) -> int:
        """Checked from round 2 on; round 1 starts at the origin anyway."""
        if self.consensus_term is None or math.isnan(self.consensus_term_envelope):
            return 0
        return int((self.consensus_term[1:] > self.consensus_term_envelope + tol).sum())

    def recompute_max_error(self) -> float:
        """Running regrets must be reproducible from the stored pieces."""
        sc = np.cumsum(self.v - self.v_static)
        err = float(np.max(np.abs(sc - self.sc_regret)))
        if self.dc_regret is not None:
            dc = np.cumsum(self.v - self.v_dynamic)
            err = max(err, float(np.max(np.abs(dc - self.dc_regret))))
        return err


def build_ledger(algorithm: str, traj: np.ndarray, seq: LossSequence, mix,
                 c_per_round: np.ndarray, static_point: float,
                 dynamic_points: np.ndarray | None = None,
                 schedule: StepSchedule | None = None,
                 g_bound: float | None = None, lam: float | None = None,
                 l1_diagnostic: bool = False) -> RegretLedger:
    """Assemble the full per-round ledger from a played trajectory (n = 1)."""
    K, n = traj.shape
    mix = np.asarray(mix, dtype=float)
    lap = np.eye(n) - mix
    f_agent = seq.values_at(traj)
    f_loss = f_agent.sum(axis=1)
    quad = np.einsum("ki,ij,kj->k", traj, lap, traj)
    diff = traj[:, :, None] - traj[:, None, :]
    pair = (mix[None, :, :] * diff * diff).sum(axis=(1, 2))
    c_per_round = np.asarray(c_per_round, dtype=float)
    network = c_per_round * quad
    v = f_loss + network
    v_static = seq.values_at(np.full_like(traj, static_point)).sum(axis=1)
    sc = np.cumsum(v - v_static)

    ledger = RegretLedger(
        algorithm=algorithm, x=traj, f_agent=f_agent, f_loss=f_loss,
        quad_form=quad, pair_sum=pair, c_used=c_per_round, network_loss=network,
        v=v, v_static=v_static, sc_regret=sc,
        static_comparator=float(static_point),
    )
    if dynamic_points is not None:
        dyn = np.asarray(dynamic_points, dtype=float).reshape(K)
        v_dyn = seq.values_at(np.broadcast_to(dyn[:, None], traj.shape)).sum(axis=1)
        ledger.v_dynamic = v_dyn
        ledger.dc_regret = np.cumsum(v - v_dyn)
        ledger.dynamic_comparators = dyn

    xhat = traj.mean(axis=1, keepdims=True)
    dev = traj - xhat
    ledger.consensus_agents = np.abs(dev)
    ledger.consensus_stacked = np.sqrt((dev * dev).sum(axis=1))

    if l1_diagnostic:
        ledger.pair_sum_l1 = (mix[None, :, :] * np.abs(diff)).sum(axis=(1, 2))

    if schedule is not None and lam is not None:
        alphas = schedule.alphas(K)
        gradient_based = algorithm in ("ocgd", "congd")
        if gradient_based:
            lap_x = traj @ lap.T
            lap_norm = np.sqrt((lap_x * lap_x).sum(axis=1))
            ledger.consensus_term = lap_norm / alphas
            if algorithm == "ocgd":
                if g_bound is None:
                    raise ValueError("ocgd envelopes need the gradient bound")
                ledger.consensus_envelope = consensus_envelope_series(
                    alphas, lam, factor=g_bound)
                grads = seq.grads_at(traj)
                comp = grads + lap_x / alphas[:, None]
                ledger.grad_norm = np.sqrt((comp * comp).sum(axis=1))
                sqrtk = schedule.kind == "inverse_sqrt_k"
                ledger.grad_envelope = composite_grad_bound(g_bound, lam, sqrtk)
                ledger.consensus_term_envelope = bound_envelope(
                    "consensus_term_sqrtk" if sqrtk else "consensus_term_constant",
                    {"g": g_bound, "lam": lam})
            else:
                ledger.consensus_envelope = consensus_envelope_series(
                    alphas, lam, factor=1.0)
                grads = seq.grads_at(traj)
                mags = np.abs(grads)
                dirs = np.where(mags > 1e-12, np.sign(grads), 0.0)
                comp = dirs + lap_x / alphas[:, None]
                ledger.grad_norm = np.sqrt((comp * comp).sum(axis=1))
                ledger.grad_envelope = 1.0 + 2.0 / (1.0 - lam)
                ledger.consensus_term_envelope = 2.0 / (1.0 - lam)
            positive = lap_norm > 0.0
            if positive.any():
                ledger.alpha_hat_min = float((lap_norm[positive]
                                              / alphas[positive]).min())
    return ledger
