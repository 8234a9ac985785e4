"""
Communication graphs and doubly stochastic weight matrices.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-10


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on nodes ``0..n-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        canon = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={self.n}")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(canon))

    @classmethod
    def from_edges(cls, n, edges):
        return cls(n, frozenset(edges))

    @classmethod
    def complete(cls, n):
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def path(cls, n):
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)))

    @classmethod
    def ring(cls, n):
        if n < 3:
            return cls.path(n)
        return cls(n, frozenset((min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n)))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self) -> list[list[int]]:
        nbrs = [[] for _ in range(self.n)]
        for i, j in sorted(self.edges):
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric doubly stochastic mixing matrix with cached spectrum.

    Attributes
    ----------
    w : ndarray, shape (N, N)
    sigma : float
        ``max(lambda_2, -lambda_N)``, the consensus contraction factor.
    lambda_min : float
        Smallest eigenvalue ``lambda_N``.
    lambda_2 : float
        Second largest eigenvalue.
    """

    w: np.ndarray
    sigma: float
    lambda_min: float
    lambda_2: float

    @classmethod
    def from_matrix(cls, w):
        w = np.array(w, dtype=float)
        lam2, lam_min, sigma = spectral_info(w)
        return cls(w=w, sigma=sigma, lambda_min=lam_min, lambda_2=lam2)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def mix(self, x: np.ndarray) -> np.ndarray:
        """Apply ``W ⊗ I`` to a stacked ``(N, d)`` array."""
        return self.w @ x

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        """Apply ``(I - W) ⊗ I`` to a stacked ``(N, d)`` array."""
        return x - self.w @ x


def random_geometric(n: int, radius: float, seed=None) -> Graph:
    """Random geometric graph in the unit square.

    Nodes are placed uniformly at random in ``[0, 1]^2`` and joined when
    their Euclidean distance is at most `radius`. Disconnected draws are
    returned as is.
    """
    if n < 2:
        raise GraphError("random_geometric needs n >= 2")
    if not (0 <= radius <= np.sqrt(2) + 1e-15):
        raise GraphError(f"radius must lie in [0, sqrt(2)], got {radius}")
    rng = np.random.default_rng(seed)
    pos = rng.uniform(size=(n, 2))
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    iu, ju = np.triu_indices(n, k=1)
    mask = (dist[iu, ju] <= radius) & (radius > 0)
    return Graph(n, frozenset(zip(iu[mask].tolist(), ju[mask].tolist())))


def connected_random_geometric(n, radius, seed=0, max_tries=1000):
    """Draw random geometric graphs with seeds ``seed, seed+1, ...`` until
    one is connected. Returns ``(graph, seed_used)``."""
    for t in range(max_tries):
        g = random_geometric(n, radius, seed + t)
        if is_connected(g):
            if t:
                logger.info("random geometric graph re-drawn %d times; final seed %d", t, seed + t)
            return g, seed + t
    raise GraphError(f"no connected graph found in {max_tries} draws (n={n}, radius={radius})")


def is_connected(g: Graph) -> bool:
    nbrs = g.neighbors()
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in nbrs[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == g.n


def metropolis_weights(g: Graph) -> WeightMatrix:
    """Metropolis-type weights ``1 / (2 (max(deg_i, deg_j) + 1))`` on edges,
    with the diagonal absorbing the remainder of each row."""
    if not is_connected(g):
        raise GraphError("metropolis_weights requires a connected graph")
    deg = g.degrees()
    w = np.zeros((g.n, g.n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (2.0 * (max(deg[i], deg[j]) + 1))
    w[np.diag_indices(g.n)] = 1.0 - w.sum(axis=1)
    return WeightMatrix.from_matrix(w)


def spectral_info(w) -> tuple[float, float, float]:
    """Return ``(lambda_2, lambda_N, sigma)`` of a symmetric stochastic matrix.

    For ``N = 1`` the only eigenvalue is 1 and the consensus quantities are
    reported as zero.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise GraphError("weight matrix must be square")
    if not np.allclose(w, w.T, atol=STOCHASTIC_TOL, rtol=0):
        raise GraphError("weight matrix must be symmetric")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
        raise GraphError("weight matrix rows must sum to one")
    if w.shape[0] == 1:
        return 0.0, 0.0, 0.0
    lam = np.linalg.eigvalsh(w)[::-1]
    lam2, lam_min = float(lam[1]), float(lam[-1])
    return lam2, lam_min, max(lam2, -lam_min)


def check_weight_matrix(wm: WeightMatrix, g: Graph, tol=1e-12):
    """Raise if `wm` violates symmetry, stochasticity or the sparsity of `g`."""
    w = wm.w
    if w.shape != (g.n, g.n):
        raise GraphError("weight matrix size does not match graph")
    if not np.array_equal(w, w.T):
        raise GraphError("weight matrix is not symmetric")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > tol:
        raise GraphError("rows do not sum to one")
    adj = g.adjacency() > 0
    off = ~np.eye(g.n, dtype=bool)
    if np.any(w[off & ~adj] != 0):
        raise GraphError("nonzero weight on a non-edge")
    if np.any(w[adj] <= 0) or np.any(np.diag(w) <= 0):
        raise GraphError("edge and self weights must be positive")


def read_edge_list(path) -> Graph:
    """Read a graph file: first line ``n``, then one ``i j`` pair per line."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise GraphError(f"empty graph file {path}")
    n = int(lines[0])
    edges = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise GraphError(f"bad edge line {ln!r} in {path}")
        edges.append((int(parts[0]), int(parts[1])))
    if len(set((min(e), max(e)) for e in edges)) != len(edges):
        raise GraphError(f"duplicate edges in {path}")
    return Graph.from_edges(n, edges)


def write_edge_list(g: Graph, path):
    rows = [str(g.n)] + [f"{i} {j}" for i, j in sorted(g.edges)]
    Path(path).write_text("\n".join(rows) + "\n")
