"""Exponential perturbations and the approximate offline minimizer.

The perturbed-leader update needs, per agent and round, an offline solver
for ``V(x) - sigma*x`` over the box.  Here that solver is an exhaustive
uniform grid plus one golden-section pass in the bracketing cell, which
makes its quality *certifiable*: the returned value is within

    rho + beta*|sigma|

of the true infimum, with rho = L*h (objective Lipschitz constant times
grid spacing) and beta = h.  ``verify_oracle_call`` audits any call against
a 10x finer grid and reports the slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .losses import Domain

FINE_FACTOR = 10


@dataclass(frozen=True)
class OracleSpec:
    """Grid resolution and the (rho, beta) quality certificate it backs."""

    domain: Domain
    grid_points: int
    rho: float
    beta: float
    refine_iters: int = 48

    def __post_init__(self):
        if self.domain.dim != 1:
            raise ValueError("grid minimizer supports n = 1 only")
        if self.grid_points < 2:
            raise ValueError("grid needs at least 2 points")
        if self.rho < 0 or self.beta < 0:
            raise ValueError("rho and beta must be nonnegative")

    @property
    def spacing(self) -> float:
        w = float(self.domain.upper[0] - self.domain.lower[0])
        return w / (self.grid_points - 1)

    @cached_property
    def grid(self) -> np.ndarray:
        g = self.domain.axis_grid(self.grid_points)
        g.setflags(write=False)
        return g

    @classmethod
    def certified(cls, domain: Domain, lipschitz: float, grid_points: int) -> "OracleSpec":
        """Spacing-based certificate: rho = L*h, beta = h."""
        w = float(domain.upper[0] - domain.lower[0])
        h = w / (grid_points - 1)
        return cls(domain=domain, grid_points=grid_points, rho=lipschitz * h, beta=h)

    @classmethod
    def for_horizon(cls, domain: Domain, horizon: int, lipschitz: float,
                    scale: float = 1.0) -> "OracleSpec":
        """Resolution scaled with the horizon so that the declared
        rho <= scale/sqrt(K) and beta <= scale/K."""
        w = float(domain.upper[0] - domain.lower[0])
        rho = scale / math.sqrt(horizon)
        beta = scale / horizon
        h_max = min(beta, rho / max(lipschitz, 1e-30))
        points = int(math.ceil(w / h_max)) + 1
        return cls(domain=domain, grid_points=points, rho=rho, beta=beta)


# ---------------------------------------------------------------------------
# exponential perturbations
# ---------------------------------------------------------------------------

def exponential_inverse_cdf(eta: float, u):
    """X = -ln(u)/eta for u in (0, 1]: an Exp(eta) draw from a uniform."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(u > 1):
        raise ValueError("u must lie in (0, 1]")
    out = -np.log(u) / eta
    return float(out) if out.ndim == 0 else out


def sample_exponential(eta: float, rng: np.random.Generator) -> float:
    """One Exp(eta) draw via the inverse CDF; support is [0, inf)."""
    u = 1.0 - rng.random()  # uniform on (0, 1]
    return float(exponential_inverse_cdf(eta, u))


def perturbation_matrix(eta: float, horizon: int, n_agents: int,
                        master_seed: int) -> np.ndarray:
    """All sigma draws for a run, shape (K, N).

    Entry (k, i) is a pure function of (master_seed, agent i, round k):
    agent i owns the stream spawned at key (1, i) and round k consumes its
    k-th draw, so agents can run in parallel reproducibly.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    out = np.empty((horizon, n_agents))
    for i in range(n_agents):
        rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(1, i)))
        out[:, i] = exponential_inverse_cdf(eta, 1.0 - rng.random(horizon))
    return out


# ---------------------------------------------------------------------------
# offline minimization and its audit
# ---------------------------------------------------------------------------

def offline_minimize(objective, sigma: float, spec: OracleSpec) -> float:
    """argmin over the box of objective(x) - sigma*x.

    ``objective`` must map float arrays to float arrays (and scalars to
    scalars).  Objectives exposing ``quad_trig_coeffs()`` take the kernel
    fast path; anything else is evaluated on the grid directly.
    """
    coeffs = getattr(objective, "quad_trig_coeffs", lambda: None)()
    lo = float(spec.domain.lower[0])
    hi = float(spec.domain.upper[0])
    if coeffs is not None:
        return kernels.ftpl_argmin(coeffs, sigma, lo, hi, spec.grid_points,
                                   spec.refine_iters)
    grid = spec.grid
    vals = np.asarray(objective(grid)) - sigma * grid
    if not np.all(np.isfinite(vals)):
        bad = grid[int(np.flatnonzero(~np.isfinite(vals))[0])]
        raise ValueError("objective not finite at grid point %r" % (bad,))
    j = int(np.argmin(vals))
    bl = grid[j - 1] if j > 0 else grid[j]
    bh = grid[j + 1] if j < spec.grid_points - 1 else grid[j]
    xr, vr = kernels.golden_refine(lambda t: float(objective(t)) - sigma * t,
                                   float(bl), float(bh), spec.refine_iters)
    if vr < vals[j]:
        return float(xr)
    return float(grid[j])


@dataclass(frozen=True)
class OracleAudit:
    passed: bool
    slack: float
    value: float
    fine_infimum: float
    tolerance: float


def verify_oracle_call(objective, sigma: float, returned_x: float,
                       spec: OracleSpec) -> OracleAudit:
    """Check the returned point against a 10x finer grid.

    Passes when  objective(x) - sigma*x <= fine infimum + rho + beta*|sigma|.
    Never raises; the slack (tolerance left over) is reported either way.
    """
    fine_points = FINE_FACTOR * (spec.grid_points - 1) + 1
    fine = spec.domain.axis_grid(fine_points)
    fine_vals = np.asarray(objective(fine)) - sigma * fine
    fine_inf = float(np.min(fine_vals))
    value = float(objective(float(returned_x))) - sigma * float(returned_x)
    tol = spec.rho + spec.beta * abs(sigma)
    slack = fine_inf + tol - value
    return OracleAudit(passed=bool(slack >= 0.0), slack=slack, value=value,
                       fine_infimum=fine_inf, tolerance=tol)
