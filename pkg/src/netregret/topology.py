"""Communication graphs and doubly-stochastic mixing matrices.

The mixing matrix carries one round of neighbor averaging.  Its
second-largest eigenvalue magnitude ``lam`` (and the spectral gap
``1 - lam``) enters every regret envelope, so construction validates the
full contract: doubly stochastic to 1e-12, exactly symmetric, positive
diagonal, support equal to the edge set, and a simple unit Perron root.

Agents are 0-based internally; the plain-text edge-list file format is
1-based (one ``i j`` pair per line).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STOCHASTIC_TOL = 1e-12
EIGEN_TOL = 1e-10

TOPOLOGY_KINDS = ("complete", "ring", "star", "path", "custom")


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on agents 0..n_agents-1.

    Edges are stored as (i, j) with i < j and no self loops; the self-weight
    lives on the mixing-matrix diagonal instead.
    """

    n_agents: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("graph needs at least one agent")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError("self loops are not stored as edges")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise ValueError("edge (%d, %d) out of range" % (i, j))
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self._connected():
            raise ValueError("graph not connected")

    def _connected(self) -> bool:
        if self.n_agents == 1:
            return True
        adj = self.neighbor_lists()
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_agents

    def neighbor_lists(self) -> list[list[int]]:
        adj = [[] for _ in range(self.n_agents)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_agents, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly-stochastic averaging weights for one gossip round."""

    entries: np.ndarray = field(repr=False)
    lam: float
    spectral_gap: float

    @property
    def n_agents(self) -> int:
        return self.entries.shape[0]


def build_graph(kind: str, n_agents: int, edges=None) -> Graph:
    """Construct a named topology, or a custom graph from an edge list.

    ``edges`` (0-based pairs) is only consulted for kind="custom".
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    if kind == "complete":
        es = {(i, j) for i in range(n_agents) for j in range(i + 1, n_agents)}
    elif kind == "ring":
        if n_agents <= 2:
            es = {(0, 1)} if n_agents == 2 else set()
        else:
            es = {(i, (i + 1) % n_agents) for i in range(n_agents)}
    elif kind == "star":
        es = {(0, i) for i in range(1, n_agents)}
    elif kind == "path":
        es = {(i, i + 1) for i in range(n_agents - 1)}
    elif kind == "custom":
        es = set(tuple(e) for e in (edges or []))
    else:
        raise ValueError("unknown topology kind %r" % (kind,))
    return Graph(n_agents, frozenset(es))


def read_edge_list(path) -> list[tuple[int, int]]:
    """Parse a 1-based ``i j`` per-line edge file into 0-based pairs."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError("%s:%d: expected 'i j', got %r" % (path, ln, line))
            i, j = int(parts[0]), int(parts[1])
            if i < 1 or j < 1:
                raise ValueError("%s:%d: agents are 1-indexed" % (path, ln))
            pairs.append((i - 1, j - 1))
    return pairs


def metropolis_mixing(graph: Graph) -> MixingMatrix:
    """Metropolis weights: pi_ij = 1/(1 + max(deg i, deg j)) on edges,
    diagonal absorbs the remainder.  Symmetric and doubly stochastic by
    construction for any connected graph."""
    n = graph.n_agents
    pi = np.zeros((n, n))
    deg = graph.degrees()
    for i, j in graph.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        pi[i, j] = w
        pi[j, i] = w
    np.fill_diagonal(pi, 1.0 - pi.sum(axis=1))
    return _finish(pi, graph)


def uniform_mixing(graph: Graph) -> MixingMatrix:
    """Uniform weights pi_ij = 1/N; only valid on the complete graph."""
    n = graph.n_agents
    if len(graph.edges) != n * (n - 1) // 2:
        raise ValueError("uniform weights require the complete graph")
    pi = np.full((n, n), 1.0 / n)
    return _finish(pi, graph)


def second_largest_eigenvalue(entries: np.ndarray) -> float:
    """Largest |eigenvalue| over the non-unit spectrum of a symmetric
    stochastic matrix.  A single agent has no second eigenvalue; returns 0."""
    entries = np.asarray(entries, dtype=float)
    if not np.array_equal(entries, entries.T):
        raise ValueError("eigensolver contract assumes a symmetric matrix")
    n = entries.shape[0]
    if n == 1:
        return 0.0
    evals = np.linalg.eigvalsh(entries)  # ascending
    return float(np.max(np.abs(evals[:-1])))


def _finish(pi: np.ndarray, graph: Graph) -> MixingMatrix:
    validate_mixing(pi, graph)
    lam = second_largest_eigenvalue(pi)
    pi = pi.copy()
    pi.setflags(write=False)
    return MixingMatrix(entries=pi, lam=lam, spectral_gap=1.0 - lam)


def validate_mixing(pi: np.ndarray, graph: Graph | None = None) -> None:
    """Raise unless ``pi`` satisfies the full mixing-matrix contract."""
    n = pi.shape[0]
    if pi.shape != (n, n):
        raise ValueError("mixing matrix must be square")
    if np.any(pi < 0):
        raise ValueError("mixing weights must be nonnegative")
    if not np.array_equal(pi, pi.T):
        raise ValueError("mixing matrix must be exactly symmetric")
    rows = np.abs(pi.sum(axis=1) - 1.0)
    cols = np.abs(pi.sum(axis=0) - 1.0)
    if rows.max() > STOCHASTIC_TOL or cols.max() > STOCHASTIC_TOL:
        raise ValueError("mixing matrix is not doubly stochastic to 1e-12")
    if np.any(np.diag(pi) <= 0):
        raise ValueError("mixing diagonal must be strictly positive")
    if graph is not None:
        for i in range(n):
            for j in range(i + 1, n):
                on_edge = (i, j) in graph.edges
                if on_edge != (pi[i, j] > 0):
                    raise ValueError(
                        "support mismatch at (%d, %d): weight %g" % (i, j, pi[i, j])
                    )
    if n > 1:
        evals = np.linalg.eigvalsh(pi)
        if abs(evals[-1] - 1.0) > EIGEN_TOL:
            raise ValueError("Perron eigenvalue is not 1")
        if np.max(np.abs(evals[:-1])) >= 1.0:
            raise ValueError("unit eigenvalue is not simple")
