"""Round-synchronous update rules and step-size schedules.

Three algorithms over a shared mixing matrix, all initialized at the origin:

* consensus gradient step (``ocgd``): y = Pi x - alpha * grad, then project;
* normalized variant (``congd``): the gradient is replaced by its unit
  vector and an agent with vanishing gradient holds still;
* perturbed-leader (``dinoco``): no gradients; each agent hands its
  cumulative observed loss plus an exponential linear perturbation to an
  offline grid minimizer.

Within a round every agent reads only the previous round's snapshot, so
processing order cannot matter; the whole-horizon recursions run through
the kernels in :mod:`netregret.kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .losses import Domain, LossFunction, LossSequence
from .oracle import OracleSpec, offline_minimize, perturbation_matrix, verify_oracle_call

EPS_GRAD = kernels.EPS_GRAD

SCHEDULE_NAMES = (
    "ocgd_strongly_convex",
    "ocgd_convex_static",
    "ocgd_convex_dynamic",
    "ocgd_convex_sqrtk",
    "congd_dynamic",
)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """alpha_k = base, base/k or base/sqrt(k) for rounds k >= 1."""

    kind: str
    base: float
    provenance: str = ""

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_k", "inverse_sqrt_k"):
            raise ValueError("unknown schedule kind %r" % (self.kind,))
        if not self.base > 0:
            raise ValueError("step size base must be positive")

    def alpha(self, k: int) -> float:
        if k < 1:
            raise ValueError("rounds are 1-based")
        if self.kind == "constant":
            return self.base
        if self.kind == "inverse_k":
            return self.base / k
        return self.base / math.sqrt(k)

    def alphas(self, horizon: int) -> np.ndarray:
        k = np.arange(1, horizon + 1, dtype=float)
        if self.kind == "constant":
            return np.full(horizon, self.base)
        if self.kind == "inverse_k":
            return self.base / k
        return self.base / np.sqrt(k)

    def regularization_weights(self, horizon: int) -> np.ndarray:
        """c_k = 1/(2 alpha_k), the network-loss weight the run plays under."""
        return 0.5 / self.alphas(horizon)


def _need(constants: dict, name: str, *keys: str) -> list[float]:
    out = []
    for key in keys:
        if key not in constants or constants[key] is None:
            raise ValueError("schedule %r needs constant %r" % (name, key))
        out.append(float(constants[key]))
    return out


def build_schedule(name: str, **constants) -> StepSchedule:
    """Closed-form step sizes; every branch records its provenance string.

    Recognized constants: mu, g, lam, n_agents, diameter, path_variation,
    horizon.  Missing ones raise naming the constant.
    """
    if name == "ocgd_strongly_convex":
        (mu,) = _need(constants, name, "mu")
        return StepSchedule("inverse_k", 1.0 / mu,
                            "alpha_k = 1/(mu k) for strongly convex losses")
    if name == "ocgd_convex_static":
        n, d, g, lam, k = _need(constants, name, "n_agents", "diameter", "g",
                                "lam", "horizon")
        c = g * (1.0 + 2.0 / (1.0 - lam))
        return StepSchedule("constant", math.sqrt(n) * d / (c * math.sqrt(k)),
                            "constant sqrt(N)D/(C sqrt(K)) for convex losses, "
                            "fixed comparator")
    if name == "ocgd_convex_dynamic":
        n, d, g, lam, pk, k = _need(constants, name, "n_agents", "diameter", "g",
                                    "lam", "path_variation", "horizon")
        c = g * (1.0 + 2.0 / (1.0 - lam))
        base = math.sqrt(math.sqrt(n) * d * (math.sqrt(n) * d + 3.0 * pk))
        return StepSchedule("constant", base / (c * math.sqrt(k)),
                            "constant step for convex losses, moving comparator")
    if name == "ocgd_convex_sqrtk":
        n, d, g, lam = _need(constants, name, "n_agents", "diameter", "g", "lam")
        c = g * (1.0 + 3.42 / (1.0 - lam))
        return StepSchedule("inverse_sqrt_k", math.sqrt(n) * d / c,
                            "alpha_k = sqrt(N)D/(C' sqrt(k)) diminishing step")
    if name == "congd_dynamic":
        n, d, pk, k = _need(constants, name, "n_agents", "diameter",
                            "path_variation", "horizon")
        base = math.sqrt(math.sqrt(n) * d * (math.sqrt(n) * d + 3.0 * pk) / k)
        return StepSchedule("constant", base,
                            "constant step for normalized updates, moving comparator")
    raise ValueError("unknown schedule %r" % (name,))


# ---------------------------------------------------------------------------
# projection and single steps
# ---------------------------------------------------------------------------

def project_box(y, domain: Domain):
    """Euclidean projection onto a box: componentwise clamp.  Idempotent and
    nonexpansive."""
    return domain.project(y)


@dataclass(frozen=True)
class AgentState:
    """Stacked decisions of all agents for one round; x has shape (N, n)."""

    x: np.ndarray
    round: int = 1

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)
        if self.round < 1:
            raise ValueError("rounds are 1-based")


def ocgd_step(state: AgentState, losses: list[LossFunction], mix: np.ndarray,
              alpha: float, domain: Domain) -> AgentState:
    """One simultaneous consensus-gradient round for all agents."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x = state.x
    grads = np.stack([losses[i].grad(x[i]) for i in range(x.shape[0])])
    y = mix @ x - alpha * grads
    return AgentState(project_box(y, domain), state.round + 1)


def congd_step(state: AgentState, losses: list[LossFunction], mix: np.ndarray,
               alpha: float, domain: Domain) -> AgentState:
    """Normalized variant: unit-gradient step, hold still on zero gradient."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x = state.x
    n = x.shape[0]
    grads = np.stack([losses[i].grad(x[i]) for i in range(n)])
    mags = np.linalg.norm(grads, axis=1)
    active = mags > EPS_GRAD
    dirs = np.zeros_like(grads)
    dirs[active] = grads[active] / mags[active, None]
    mixed = mix @ x
    moved = project_box(mixed - alpha * dirs, domain)
    out = np.where(active[:, None], moved, x)
    return AgentState(out, state.round + 1)


# ---------------------------------------------------------------------------
# whole-horizon drivers (n = 1 kernels)
# ---------------------------------------------------------------------------

def _run_gradient_based(runner, seq: LossSequence, mix, schedule: StepSchedule,
                        x0=None, force=None):
    if seq.dim != 1:
        return _run_steps_nd(runner, seq, mix, schedule, x0)
    code, centers, p1, p2 = seq.kernel_params()
    n = seq.n_agents
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    lo = float(seq.domain.lower[0])
    hi = float(seq.domain.upper[0])
    alphas = schedule.alphas(seq.horizon)
    kern = kernels.ocgd_trajectory if runner == "ocgd" else kernels.congd_trajectory
    traj, _ = kern(np.asarray(mix, dtype=float), centers, code, p1, p2,
                   alphas, lo, hi, x0, force=force)
    return traj


def _run_steps_nd(runner, seq, mix, schedule, x0):
    n = seq.n_agents
    x0 = np.zeros((n, seq.dim)) if x0 is None else np.asarray(x0, dtype=float)
    state = AgentState(x0, 1)
    step = ocgd_step if runner == "ocgd" else congd_step
    traj = np.empty((seq.horizon, n, seq.dim))
    for k in range(seq.horizon):
        traj[k] = state.x
        state = step(state, seq.round_losses(k), np.asarray(mix, dtype=float),
                     schedule.alpha(k + 1), seq.domain)
    return traj


def run_ocgd(seq: LossSequence, mix, schedule: StepSchedule, x0=None, force=None):
    """Play the consensus-gradient rule for the whole horizon.

    Returns the played trajectory, shape (K, N) for n=1 (row k is the state
    at round k+1; row 0 is the start, the origin unless x0 is given).
    """
    return _run_gradient_based("ocgd", seq, mix, schedule, x0, force)


def run_congd(seq: LossSequence, mix, schedule: StepSchedule, x0=None, force=None):
    """Play the normalized-gradient rule for the whole horizon."""
    return _run_gradient_based("congd", seq, mix, schedule, x0, force)


# ---------------------------------------------------------------------------
# perturbed leader
# ---------------------------------------------------------------------------

class HindsightObjective:
    """Cumulative objective one agent hands to the offline minimizer.

    After observing rounds 1..k it evaluates

        sum_{l<=k} [ f^i_l(x) + (1/(2 eta)) sum_{j != i} pi_ij (x - x^j_l)^2 ]

    with neighbor states frozen at their round-l played values.  Quadratic
    and sine-quadratic own-losses collapse into quadratic coefficients plus
    a pair of phase sums, so evaluation stays O(1) in k; the other families
    keep their round centers and evaluate by summation.
    """

    def __init__(self, family: str, agent: int, mix_row: np.ndarray, eta: float,
                 mu: float = 1.0, knee: float = 1e-3, slope: float = 4.0,
                 amp: float = 1.0, freq: float = 3.0):
        self.family = family
        self.code = kernels.FAMILY_CODES[family]
        self.agent = agent
        self.eta = float(eta)
        self.mu, self.knee, self.slope = float(mu), float(knee), float(slope)
        self.amp, self.freq = float(amp), float(freq)
        w = np.asarray(mix_row, dtype=float).copy()
        w[agent] = 0.0
        self._w = w
        self._wsum = float(w.sum())
        self._qa = 0.0
        self._qb = 0.0
        self._qc = 0.0
        self._tc = 0.0
        self._ts = 0.0
        self.rounds = 0
        self._centers: list[float] = []
        self._collapsible = family in ("quadratic", "sine-quadratic")

    def observe(self, center: float, states: np.ndarray) -> None:
        """Fold in one played round: own loss center and everyone's states."""
        c = float(center)
        if self.family == "quadratic":
            self._qa += 0.5 * self.mu
            self._qb -= self.mu * c
            self._qc += 0.5 * self.mu * c * c
        elif self.family == "sine-quadratic":
            self._qa += 0.5
            self._qb -= c
            self._qc += 0.5 * c * c + 0.5 * self.amp
            self._tc += math.cos(2.0 * self.freq * c)
            self._ts += math.sin(2.0 * self.freq * c)
        else:
            self._centers.append(c)
        if self._wsum > 0.0:
            m = float(self._w @ states)
            s = float(self._w @ (states * states))
            inv = 1.0 / (2.0 * self.eta)
            self._qa += self._wsum * inv
            self._qb -= 2.0 * m * inv
            self._qc += s * inv
        self.rounds += 1

    def quad_trig_coeffs(self):
        if not self._collapsible:
            return None
        amp = self.amp if self.family == "sine-quadratic" else 0.0
        return (self._qa, self._qb, self._qc, amp, 2.0 * self.freq,
                self._tc, self._ts)

    def __call__(self, x):
        if np.isscalar(x) or (isinstance(x, np.ndarray) and x.ndim == 0):
            return self._scalar(float(x))
        x = np.asarray(x, dtype=float)
        out = self._qa * x * x + self._qb * x + self._qc
        if self.family == "sine-quadratic":
            out = out - 0.5 * self.amp * (self._tc * np.cos(2.0 * self.freq * x)
                                          + self._ts * np.sin(2.0 * self.freq * x))
        if self._centers:
            cs = np.asarray(self._centers)
            p1 = {
                "absolute": self.knee, "pseudo-sigmoid": self.slope,
            }.get(self.family, self.mu)
            vals = kernels.loss_values(self.code, x[..., None], cs, p1, self.freq)
            out = out + vals.sum(axis=-1)
        return out

    def _scalar(self, x: float) -> float:
        out = self._qa * x * x + self._qb * x + self._qc
        if self.family == "sine-quadratic":
            out -= 0.5 * self.amp * (self._tc * math.cos(2.0 * self.freq * x)
                                     + self._ts * math.sin(2.0 * self.freq * x))
        if self._centers:
            cs = np.asarray(self._centers)
            p1 = self.knee if self.family == "absolute" else self.slope
            out += float(kernels.loss_values(self.code, x, cs, p1, self.freq).sum())
        return out


@dataclass
class DinocoResult:
    """Trajectory and bookkeeping of one perturbed-leader run."""

    traj: np.ndarray          # (K, N) played states
    x_final: np.ndarray       # decision computed after the last round
    sigma: np.ndarray         # (K, N) perturbations, draw k used at round k+1
    audits: list
    movement_l1: float
    eta: float
    spec: OracleSpec

    @property
    def audit_pass_rate(self) -> float:
        if not self.audits:
            return float("nan")
        return sum(1 for a in self.audits if a.passed) / len(self.audits)


def dinoco_step(objectives: list[HindsightObjective], x: np.ndarray,
                centers_row: np.ndarray, sigma_row: np.ndarray,
                spec: OracleSpec) -> np.ndarray:
    """Observe round-k losses at states ``x`` and predict the next states."""
    n = len(objectives)
    for i in range(n):
        objectives[i].observe(centers_row[i], x)
    nxt = np.empty(n)
    for i in range(n):
        nxt[i] = offline_minimize(objectives[i], float(sigma_row[i]), spec)
    return nxt


def run_dinoco(seq: LossSequence, mix, eta: float, spec: OracleSpec,
               master_seed: int, audit_target: int = 128) -> DinocoResult:
    """Play the perturbed-leader rule for the whole horizon (n = 1).

    Round 1 plays the origin.  A deterministic subset of oracle calls
    (about ``audit_target`` of them, all if fewer) is audited in place
    against the 10x finer grid.
    """
    if seq.dim != 1:
        raise ValueError("perturbed-leader runs support n = 1 only")
    K, n = seq.horizon, seq.n_agents
    mix = np.asarray(mix, dtype=float)
    sigma = perturbation_matrix(eta, K, n, master_seed)
    objectives = [
        HindsightObjective(seq.family, i, mix[i], eta, mu=float(seq.mu[i]),
                           knee=float(seq.knee[i]), slope=float(seq.slope[i]),
                           amp=float(seq.amp[i]), freq=float(seq.freq[i]))
        for i in range(n)
    ]
    stride = max(1, (K * n) // max(audit_target, 1))
    traj = np.empty((K, n))
    x = np.zeros(n)
    audits = []
    centers = seq.centers[:, :, 0]
    call = 0
    for k in range(K):
        traj[k] = x
        nxt = dinoco_step(objectives, x, centers[k], sigma[k], spec)
        for i in range(n):
            if call % stride == 0:
                audits.append(
                    verify_oracle_call(objectives[i], float(sigma[k, i]), nxt[i], spec))
            call += 1
        x = nxt
    states = np.vstack([traj, x[None, :]])
    movement = float(np.abs(np.diff(states, axis=0)).sum())
    return DinocoResult(traj=traj, x_final=x, sigma=sigma, audits=audits,
                        movement_l1=movement, eta=eta, spec=spec)
