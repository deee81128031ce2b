"""Per-round, per-agent loss families with analytic gradients and grid oracles.

Four concrete families, one witness per curvature class:

* ``quadratic``       0.5*mu*||x-c||^2            (strongly convex, mu > 0)
* ``absolute``        ||x-c|| Huber-smoothed      (convex, |grad| <= 1)
* ``pseudo-sigmoid``  1/(1+exp(-s*sum(x-c)))      (pseudo-convex, monotone)
* ``sine-quadratic``  0.5*||x-c||^2 + a*sin(w*||x-c||)^2   (non-convex)

Comparators (per-round minimizer, best fixed point) are found by exhaustive
grid search with a local ternary refinement pass; these grid oracles are the
independent accounting route and never share code with the update rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

FAMILIES = ("quadratic", "absolute", "pseudo-sigmoid", "sine-quadratic")

_ALIASES = {
    "absolute-drift": "absolute",
    "nonconvex-sine-quadratic": "sine-quadratic",
    "sine_quadratic": "sine-quadratic",
    "pseudo_sigmoid": "pseudo-sigmoid",
}

DEFAULT_GRID_POINTS = 10001
_REFINE_ITERS = 60


def canonical_family(name: str) -> str:
    name = name.strip().lower()
    name = _ALIASES.get(name, name)
    if name not in FAMILIES:
        raise ValueError("unknown loss family %r" % (name,))
    return name


# ---------------------------------------------------------------------------
# domain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """Compact box [lower, upper] shared by all agents; contains the origin."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-d vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("need lower < upper componentwise")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("domain must contain the origin")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Domain":
        return cls(np.array([lo]), np.array([hi]))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def diameter_inf(self) -> float:
        return float(np.max(self.upper - self.lower))

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def project(self, y):
        return np.clip(np.asarray(y, dtype=float), self.lower, self.upper)

    def axis_grid(self, points: int) -> np.ndarray:
        if points < 2:
            raise ValueError("grid needs at least 2 points")
        if self.dim != 1:
            raise ValueError("axis_grid is for 1-d domains")
        return np.linspace(self.lower[0], self.upper[0], points)


# ---------------------------------------------------------------------------
# single loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossFunction:
    """One differentiable loss; parameters beyond ``center`` are family-specific."""

    family: str
    center: np.ndarray
    mu: float = 1.0
    knee: float = 1e-3
    slope: float = 4.0
    amp: float = 1.0
    freq: float = 3.0
    domain: Domain | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    @property
    def code(self) -> int:
        return kernels.FAMILY_CODES[self.family]

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def _check(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != self.center.shape:
            raise ValueError("point has dimension %d, loss has %d" % (x.size, self.dim))
        if self.domain is not None and not self.domain.contains(x):
            raise ValueError("out of domain")
        return x

    def value(self, x) -> float:
        x = self._check(x)
        r = x - self.center
        if self.family == "quadratic":
            return float(0.5 * self.mu * r @ r)
        if self.family == "absolute":
            nr = float(np.linalg.norm(r))
            if nr <= self.knee:
                return 0.5 * nr * nr / self.knee
            return nr - 0.5 * self.knee
        if self.family == "pseudo-sigmoid":
            z = self.slope * float(np.sum(r))
            return 0.5 * (1.0 + math.tanh(0.5 * z))
        s = math.sin(self.freq * float(np.linalg.norm(r)))
        return float(0.5 * r @ r + self.amp * s * s)

    def grad(self, x) -> np.ndarray:
        x = self._check(x)
        r = x - self.center
        if self.family == "quadratic":
            return self.mu * r
        if self.family == "absolute":
            nr = float(np.linalg.norm(r))
            if nr <= self.knee:
                return r / self.knee
            return r / nr
        if self.family == "pseudo-sigmoid":
            z = self.slope * float(np.sum(r))
            s = 0.5 * (1.0 + math.tanh(0.5 * z))
            return np.full_like(r, self.slope * s * (1.0 - s))
        nr = float(np.linalg.norm(r))
        if nr == 0.0:
            return np.zeros_like(r)
        return r + self.amp * self.freq * math.sin(2.0 * self.freq * nr) * (r / nr)

    def gradient_bound(self) -> float:
        """Analytic sup of ||grad|| over the domain (a valid upper bound)."""
        if self.domain is None:
            raise ValueError("gradient bound needs a domain")
        far = np.maximum(np.abs(self.domain.lower - self.center),
                         np.abs(self.domain.upper - self.center))
        maxdist = float(np.linalg.norm(far))
        if self.family == "quadratic":
            return self.mu * maxdist
        if self.family == "absolute":
            return 1.0
        if self.family == "pseudo-sigmoid":
            return 0.25 * self.slope * math.sqrt(self.dim)
        return maxdist + self.amp * self.freq


def evaluate(loss: LossFunction, x) -> float:
    """Loss value at x (errors with "out of domain" when a domain is attached)."""
    return loss.value(x)


def gradient(loss: LossFunction, x) -> np.ndarray:
    """Analytic gradient at x; matches central finite differences to 1e-5."""
    return loss.grad(x)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

@dataclass
class LossSequence:
    """K rounds x N agents of one family, with drift-controlled centers.

    ``centers`` has shape (K, N, n).  The per-agent scalar parameters are
    constant over rounds; drift moves centers only.
    """

    family: str
    centers: np.ndarray
    domain: Domain
    mu: np.ndarray
    knee: np.ndarray
    slope: np.ndarray
    amp: np.ndarray
    freq: np.ndarray
    drift: str = "none"
    seed: int = 0
    _minimizer_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.family = canonical_family(self.family)
        self.centers = np.asarray(self.centers, dtype=float)
        if self.centers.ndim != 3:
            raise ValueError("centers must have shape (K, N, n)")

    @property
    def code(self) -> int:
        return kernels.FAMILY_CODES[self.family]

    @property
    def horizon(self) -> int:
        return self.centers.shape[0]

    @property
    def n_agents(self) -> int:
        return self.centers.shape[1]

    @property
    def dim(self) -> int:
        return self.centers.shape[2]

    def kernel_params(self):
        """(code, centers (K,N), p1 (N,), p2 (N,)) for the 1-d kernels."""
        if self.dim != 1:
            raise ValueError("kernels support n=1 only")
        if self.family == "quadratic":
            p1, p2 = self.mu, np.zeros_like(self.mu)
        elif self.family == "absolute":
            p1, p2 = self.knee, np.zeros_like(self.knee)
        elif self.family == "pseudo-sigmoid":
            p1, p2 = self.slope, np.zeros_like(self.slope)
        else:
            p1, p2 = self.amp, self.freq
        return self.code, self.centers[:, :, 0], p1, p2

    def loss(self, k: int, i: int) -> LossFunction:
        """Loss of agent i at round k (0-based round index)."""
        return LossFunction(
            family=self.family, center=self.centers[k, i], mu=float(self.mu[i]),
            knee=float(self.knee[i]), slope=float(self.slope[i]),
            amp=float(self.amp[i]), freq=float(self.freq[i]), domain=self.domain,
        )

    def round_losses(self, k: int) -> list[LossFunction]:
        return [self.loss(k, i) for i in range(self.n_agents)]

    # vectorized evaluation, n = 1 fast path --------------------------------

    def values_at(self, x: np.ndarray) -> np.ndarray:
        """Per-round per-agent values at states x of shape (K, N) (n=1)."""
        code, c, p1, p2 = self.kernel_params()
        return kernels.loss_values(code, x, c, p1, p2)

    def grads_at(self, x: np.ndarray) -> np.ndarray:
        code, c, p1, p2 = self.kernel_params()
        return kernels.loss_grads(code, x, c, p1, p2)

    def grid_objective(self, grid: np.ndarray, rounds: slice | np.ndarray) -> np.ndarray:
        """sum_i f^i_k(x) for every round k in ``rounds`` and grid point x.

        Returns shape (len(rounds), len(grid)); n = 1 only.
        """
        code, c, p1, p2 = self.kernel_params()
        ck = c[rounds]  # (R, N)
        vals = kernels.loss_values(code, grid[None, None, :], ck[:, :, None],
                                   p1[None, :, None], p2[None, :, None])
        return vals.sum(axis=1)

    def objective_at_points(self, points: np.ndarray, rounds: np.ndarray) -> np.ndarray:
        """sum_i f^i_k(points[k]) for per-round scalar points (n=1)."""
        code, c, p1, p2 = self.kernel_params()
        vals = kernels.loss_values(code, points[:, None], c[rounds], p1[None, :], p2[None, :])
        return vals.sum(axis=1)

    # constants --------------------------------------------------------------

    def stacked_gradient_bound(self) -> float:
        """Analytic sup over rounds and the box of the stacked gradient norm."""
        lo = self.domain.lower[None, None, :]
        hi = self.domain.upper[None, None, :]
        far = np.maximum(np.abs(lo - self.centers), np.abs(hi - self.centers))
        maxdist = np.sqrt((far * far).sum(axis=2)).max(axis=0)  # (N,)
        if self.family == "quadratic":
            per_agent = self.mu * maxdist
        elif self.family == "absolute":
            per_agent = np.ones(self.n_agents)
        elif self.family == "pseudo-sigmoid":
            per_agent = 0.25 * self.slope * math.sqrt(self.dim)
        else:
            per_agent = maxdist + self.amp * self.freq
        return float(np.sqrt(np.sum(np.asarray(per_agent) ** 2)))

    def sampled_gradient_bound(self, samples: int = 10000, seed: int = 0,
                               safety: float = 1.05) -> float:
        """Stacked gradient bound estimated by sampling rounds and box points."""
        rng = np.random.default_rng(seed)
        ks = rng.integers(0, self.horizon, size=samples)
        if self.dim == 1:
            lo, hi = self.domain.lower[0], self.domain.upper[0]
            xs = rng.uniform(lo, hi, size=(samples, self.n_agents))
            code, c, p1, p2 = self.kernel_params()
            g = kernels.loss_grads(code, xs, c[ks], p1[None, :], p2[None, :])
            norms = np.sqrt((g * g).sum(axis=1))
            return float(norms.max() * safety)
        best = 0.0
        for s in range(samples):
            k = int(ks[s])
            x = rng.uniform(self.domain.lower, self.domain.upper,
                            size=(self.n_agents, self.dim))
            sq = 0.0
            for i in range(self.n_agents):
                gi = self.loss(k, i).grad(x[i])
                sq += float(gi @ gi)
            best = max(best, math.sqrt(sq))
        return best * safety

    # comparator oracles ------------------------------------------------------

    def per_round_minimizers(self, grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
        """Grid-argmin of sum_i f^i_k per round, ternary-refined; shape (K, n).

        Cached per grid resolution; ties go to the smallest coordinates.
        """
        key = int(grid_points)
        if key not in self._minimizer_cache:
            if self.dim == 1:
                self._minimizer_cache[key] = self._minimizers_1d(key)
            else:
                mins = np.stack([
                    minimizer_per_round(self, k, key) for k in range(self.horizon)
                ])
                self._minimizer_cache[key] = mins
        return self._minimizer_cache[key]

    def _minimizers_1d(self, grid_points: int) -> np.ndarray:
        grid = self.domain.axis_grid(grid_points)
        K = self.horizon
        out = np.empty((K, 1))
        chunk = max(1, int(4e6) // (self.n_agents * grid_points) + 1)
        lows = np.empty(K)
        highs = np.empty(K)
        gridbest = np.empty(K)
        gridval = np.empty(K)
        for start in range(0, K, chunk):
            rounds = slice(start, min(start + chunk, K))
            vals = self.grid_objective(grid, rounds)
            j = np.argmin(vals, axis=1)
            rr = np.arange(vals.shape[0])
            gridbest[rounds] = grid[j]
            gridval[rounds] = vals[rr, j]
            lows[rounds] = grid[np.maximum(j - 1, 0)]
            highs[rounds] = grid[np.minimum(j + 1, grid_points - 1)]
        refined, refval = self._ternary_all_rounds(lows, highs)
        better = refval < gridval
        out[:, 0] = np.where(better, refined, gridbest)
        return out

    def _ternary_all_rounds(self, lo: np.ndarray, hi: np.ndarray):
        """Vectorized ternary search per round on per-round brackets (n=1)."""
        all_rounds = np.arange(self.horizon)
        for _ in range(_REFINE_ITERS):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            f1 = self.objective_at_points(m1, all_rounds)
            f2 = self.objective_at_points(m2, all_rounds)
            take_left = f1 <= f2
            hi = np.where(take_left, m2, hi)
            lo = np.where(take_left, lo, m1)
        mid = 0.5 * (lo + hi)
        return mid, self.objective_at_points(mid, all_rounds)

    def path_variation(self, grid_points: int = DEFAULT_GRID_POINTS) -> float:
        """Total movement of the per-round minimizer, sum_k ||m_{k+1} - m_k||."""
        mins = self.per_round_minimizers(grid_points)
        if self.horizon < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(mins, axis=0), axis=1)))

    def best_fixed(self, grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
        """Cached wrapper around :func:`best_fixed_strategy`."""
        key = ("static", int(grid_points))
        if key not in self._minimizer_cache:
            self._minimizer_cache[key] = best_fixed_strategy(self, grid_points)
        return self._minimizer_cache[key]


def make_drifting_sequence(family: str, n_agents: int, horizon: int,
                           drift: str = "none", heterogeneity: float = 0.0,
                           seed: int = 0, *, dim: int = 1,
                           domain: Domain | None = None, mu: float = 1.0,
                           knee: float = 1e-3, slope: float = 4.0,
                           amp: float = 1.0, freq: float = 3.0,
                           drift_step: float = 0.1, drift_amplitude: float = 0.4,
                           drift_period: float = 32.0) -> LossSequence:
    """Deterministic (given seed) sequence of drifting per-agent losses.

    ``heterogeneity`` scales per-agent random base centers; drift adds a
    common per-round offset: none, linear (``drift_step`` per round) or
    sinusoidal (``drift_amplitude`` at period ``drift_period`` rounds).
    """
    if horizon < 1 or n_agents < 1:
        raise ValueError("need horizon >= 1 and n_agents >= 1")
    family = canonical_family(family)
    if domain is None:
        domain = Domain(np.full(dim, -1.0), np.full(dim, 1.0))
    if domain.dim != dim:
        raise ValueError("domain dimension mismatch")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    base = heterogeneity * rng.uniform(-1.0, 1.0, size=(n_agents, dim))
    k = np.arange(horizon, dtype=float)
    if drift == "none":
        offset = np.zeros(horizon)
    elif drift == "linear":
        offset = drift_step * k
    elif drift == "sinusoidal":
        offset = drift_amplitude * np.sin(2.0 * np.pi * k / drift_period)
    else:
        raise ValueError("unknown drift %r" % (drift,))
    centers = base[None, :, :] + offset[:, None, None]
    ones = np.ones(n_agents)
    return LossSequence(
        family=family, centers=centers, domain=domain,
        mu=mu * ones, knee=knee * ones, slope=slope * ones,
        amp=amp * ones, freq=freq * ones, drift=drift, seed=seed,
    )


# ---------------------------------------------------------------------------
# grid oracles (operation-level; n <= 2)
# ---------------------------------------------------------------------------

def _grid_points_nd(domain: Domain, grid_points: int) -> np.ndarray:
    """Lexicographically ordered grid over the box; shape (P, n), n <= 2."""
    if domain.dim > 2:
        raise ValueError("grid oracle limited to n <= 2")
    axes = [np.linspace(domain.lower[d], domain.upper[d], grid_points)
            for d in range(domain.dim)]
    if domain.dim == 1:
        return axes[0][:, None]
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.stack([g0.ravel(), g1.ravel()], axis=1)


def _round_objective(seq: LossSequence, rounds, points: np.ndarray) -> np.ndarray:
    """sum over rounds and agents of f^i_k at each point; points (P, n)."""
    total = np.zeros(points.shape[0])
    if seq.dim == 1:
        obj = seq.grid_objective(points[:, 0], rounds)
        return obj.sum(axis=0)
    for k in np.atleast_1d(rounds):
        for i in range(seq.n_agents):
            loss = seq.loss(int(k), i)
            r = points - loss.center[None, :]
            total += _family_values_nd(loss, r)
    return total


def _family_values_nd(loss: LossFunction, r: np.ndarray) -> np.ndarray:
    if loss.family == "quadratic":
        return 0.5 * loss.mu * (r * r).sum(axis=1)
    if loss.family == "absolute":
        nr = np.linalg.norm(r, axis=1)
        return np.where(nr <= loss.knee, 0.5 * nr * nr / loss.knee, nr - 0.5 * loss.knee)
    if loss.family == "pseudo-sigmoid":
        z = loss.slope * r.sum(axis=1)
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    nr = np.linalg.norm(r, axis=1)
    s = np.sin(loss.freq * nr)
    return 0.5 * (r * r).sum(axis=1) + loss.amp * s * s


def _refine_1d(fun, lo: float, hi: float, iters: int = _REFINE_ITERS):
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if fun(m1) <= fun(m2):
            hi = m2
        else:
            lo = m1
    mid = 0.5 * (lo + hi)
    return mid, fun(mid)


def _grid_argmin(seq: LossSequence, rounds, grid_points: int) -> np.ndarray:
    points = _grid_points_nd(seq.domain, grid_points)
    vals = _round_objective(seq, rounds, points)
    j = int(np.argmin(vals))  # first index: lexicographic tie-break
    best = points[j].copy()
    bestval = vals[j]
    if seq.dim == 1:
        grid = points[:, 0]
        lo = grid[max(j - 1, 0)]
        hi = grid[min(j + 1, grid_points - 1)]
        x, v = _refine_1d(
            lambda t: float(_round_objective(seq, rounds, np.array([[t]]))[0]), lo, hi)
        if v < bestval:
            return np.array([x])
        return best
    # n = 2: one coordinate-wise bisection pass around the winning cell
    axes = [np.linspace(seq.domain.lower[d], seq.domain.upper[d], grid_points)
            for d in range(2)]
    idx = [j // grid_points, j % grid_points]
    cur = best.copy()
    curval = bestval
    for d in range(2):
        lo = axes[d][max(idx[d] - 1, 0)]
        hi = axes[d][min(idx[d] + 1, grid_points - 1)]

        def along(t, d=d):
            p = cur.copy()
            p[d] = t
            return float(_round_objective(seq, rounds, p[None, :])[0])

        x, v = _refine_1d(along, lo, hi)
        if v < curval:
            cur[d] = x
            curval = v
    return cur


def minimizer_per_round(seq: LossSequence, k: int,
                        grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """argmin_x sum_i f^i_k(x) over the box by exhaustive grid + refinement."""
    if grid_points < 2:
        raise ValueError("grid needs at least 2 points")
    return _grid_argmin(seq, np.array([k]), grid_points)


def best_fixed_strategy(seq: LossSequence,
                        grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """argmin_x sum_k sum_i f^i_k(x): the best fixed point in hindsight."""
    if grid_points < 2:
        raise ValueError("grid needs at least 2 points")
    if seq.dim == 1:
        # chunk rounds so the (rounds x grid) table stays small
        grid = seq.domain.axis_grid(grid_points)
        total = np.zeros(grid_points)
        chunk = max(1, int(4e6) // (seq.n_agents * grid_points) + 1)
        for start in range(0, seq.horizon, chunk):
            rounds = slice(start, min(start + chunk, seq.horizon))
            total += seq.grid_objective(grid, rounds).sum(axis=0)
        j = int(np.argmin(total))
        lo = grid[max(j - 1, 0)]
        hi = grid[min(j + 1, grid_points - 1)]
        allr = np.arange(seq.horizon)

        def fun(t):
            return float(seq.objective_at_points(np.full(seq.horizon, t), allr).sum())

        x, v = _refine_1d(fun, lo, hi)
        if v < total[j]:
            return np.array([x])
        return np.array([grid[j]])
    return _grid_argmin(seq, np.arange(seq.horizon), grid_points)


def auto_comparator_grid(horizon: int, n_agents: int,
                         budget: float = 2.4e8) -> int:
    """Grid resolution for comparator sweeps: the full default when the
    (K x N x grid) evaluation fits the budget, coarser (but still refined)
    at large horizons."""
    full = DEFAULT_GRID_POINTS
    cost = horizon * n_agents * full
    if cost <= budget:
        return full
    return max(1001, int(budget / (horizon * n_agents)))
