"""
Local cost functions, synthetic data and the centralized reference solver.

A problem holds ``N`` local costs ``f_i: R^d -> R``. Stacked points are
``(N, d)`` arrays whose row ``i`` is node ``i``'s copy of the decision
vector. For logistic problems the decision vector is ``x = (x_1, x_0)``
with the intercept ``x_0`` stored last.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class ReferenceSolverError(RuntimeError):
    """Raised when the reference solver runs out of iterations.

    The best iterate found so far is kept in ``best``.
    """

    def __init__(self, msg, best, grad_norm):
        super().__init__(msg)
        self.best = best
        self.grad_norm = grad_norm


class Problem:
    """Base class for a collection of ``n`` local costs on ``R^d``.

    Subclasses set ``n``, ``d``, ``mu`` and ``lip`` and implement the
    per-node oracles. ``lip`` is the constant step sizes are expressed in;
    ``lip_local`` is a guaranteed smoothness constant for every ``f_i``.
    """

    n: int
    d: int
    mu: float
    lip: float

    def value(self, i, x):
        raise NotImplementedError

    def grad(self, i, x):
        raise NotImplementedError

    def hessian(self, i, x):
        raise NotImplementedError(f"{type(self).__name__} has no Hessian oracle")

    def grad_stacked(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([self.grad(i, x[i]) for i in range(self.n)])

    def hessian_stacked(self, x):
        """Per-node Hessians at the rows of `x`, shape ``(N, d, d)``."""
        x = np.asarray(x, dtype=float)
        return np.stack([self.hessian(i, x[i]) for i in range(self.n)])

    @property
    def lip_local(self) -> float:
        return self.lip

    def total_value(self, x):
        return sum(self.value(i, x) for i in range(self.n))

    def total_grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.grad_stacked(np.broadcast_to(x, (self.n, self.d))).sum(axis=0)

    def aggregate_constants(self) -> tuple[float, float]:
        """Strong convexity and smoothness constants of ``sum_i f_i``."""
        return self.n * self.mu, self.n * self.lip_local


def grad_local(p: Problem, i: int, x_i) -> np.ndarray:
    if not 0 <= i < p.n:
        raise IndexError(f"node {i} out of range for n={p.n}")
    return p.grad(i, np.asarray(x_i, dtype=float))


def grad_stacked(p: Problem, x) -> np.ndarray:
    return p.grad_stacked(x)


def hessian_local(p: Problem, i: int, x_i) -> np.ndarray:
    if not 0 <= i < p.n:
        raise IndexError(f"node {i} out of range for n={p.n}")
    return p.hessian(i, np.asarray(x_i, dtype=float))


class QuadraticProblem(Problem):
    """``f_i(x) = 0.5 x^T A_i x + c_i^T x`` with symmetric positive definite ``A_i``."""

    def __init__(self, a, c, mu=None, lip=None):
        a = np.array(a, dtype=float)
        c = np.array(c, dtype=float)
        if a.ndim != 3 or a.shape[1] != a.shape[2] or c.shape != a.shape[:2]:
            raise ValueError("expected A of shape (N, d, d) and c of shape (N, d)")
        if not np.allclose(a, np.swapaxes(a, 1, 2)):
            raise ValueError("A_i must be symmetric")
        a = 0.5 * (a + np.swapaxes(a, 1, 2))
        eig = np.linalg.eigvalsh(a)
        lo, hi = float(eig.min()), float(eig.max())
        if lo <= 0:
            raise ValueError("A_i must be positive definite")
        self.a, self.c = a, c
        self.n, self.d = c.shape
        self.mu = lo if mu is None else float(mu)
        self.lip = hi if lip is None else float(lip)
        if self.mu > lo * (1 + 1e-12) or self.lip < hi * (1 - 1e-12):
            raise ValueError(f"declared (mu, L)=({self.mu}, {self.lip}) do not bracket spectrum [{lo}, {hi}]")
        if self.mu > self.lip:
            raise ValueError("mu must not exceed L")

    def value(self, i, x):
        return 0.5 * x @ self.a[i] @ x + self.c[i] @ x

    def grad(self, i, x):
        return self.a[i] @ x + self.c[i]

    def hessian(self, i, x):
        return self.a[i].copy()

    def grad_stacked(self, x):
        return np.einsum("nij,nj->ni", self.a, x) + self.c

    def hessian_stacked(self, x):
        return self.a.copy()

    def aggregate_constants(self):
        eig = np.linalg.eigvalsh(self.a.sum(axis=0))
        return float(eig[0]), float(eig[-1])

    def minimizer(self):
        return np.linalg.solve(self.a.sum(axis=0), -self.c.sum(axis=0))


def random_quadratic(n, d, mu=1.0, lip=10.0, seed=None) -> QuadraticProblem:
    """Random quadratic problem whose Hessian spectra lie in ``[mu, lip]``.

    Node 0 carries both extreme eigenvalues so the constants are tight.
    """
    rng = np.random.default_rng(seed)
    a = np.empty((n, d, d))
    for i in range(n):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        lam = rng.uniform(mu, lip, size=d)
        if i == 0:
            lam[0] = mu
            lam[-1] = lip
        a[i] = (q * lam) @ q.T
        a[i] = 0.5 * (a[i] + a[i].T)
    c = rng.standard_normal((n, d))
    return QuadraticProblem(a, c, mu=min(mu, np.linalg.eigvalsh(a).min()), lip=max(lip, np.linalg.eigvalsh(a).max()))


@dataclass
class LogisticSpec:
    """Per-node samples for the l2-regularized logistic loss.

    ``features[i]`` has shape ``(J_i, d-1)`` and ``labels[i]`` shape ``(J_i,)``
    with entries in ``{-1, +1}``.
    """

    features: list
    labels: list
    reg: float

    def __post_init__(self):
        if self.reg <= 0:
            raise ValueError("regularization must be positive")
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels must have one entry per node")
        feats, labels = [], []
        for f, b in zip(self.features, self.labels):
            f = np.asarray(f, dtype=float)
            b = np.asarray(b, dtype=float).reshape(-1)
            if f.ndim != 2 or f.shape[0] != b.shape[0]:
                raise ValueError("features[i] must have shape (J_i, d-1) matching labels[i]")
            feats.append(f)
            labels.append(b)
        self.features, self.labels = feats, labels
        for b in self.labels:
            if not np.all(np.isin(b, (-1.0, 1.0))):
                raise ValueError("labels must be -1 or +1")

    @property
    def n(self):
        return len(self.labels)

    def margins(self):
        """The vectors ``c_ij = (b_ij a_ij, b_ij)`` per node."""
        return [np.hstack([b[:, None] * a, b[:, None]]) for a, b in zip(self.features, self.labels)]


def constants_logistic(spec: LogisticSpec) -> tuple[float, float]:
    """``(mu, L)`` for the logistic problem: ``mu = R`` and
    ``L = ||sum_ij c_ij c_ij^T|| / (4N) + R``."""
    cs = [c for c in spec.margins() if c.size]
    if not cs:
        return spec.reg, spec.reg
    c = np.vstack(cs)
    top = np.linalg.eigvalsh(c.T @ c)[-1]
    return spec.reg, float(top / (4 * spec.n) + spec.reg)


class LogisticProblem(Problem):
    """``f_i(x) = sum_j log(1 + exp(-c_ij^T x)) + R/2 ||x||^2``.

    ``lip`` follows the network-average constant of `constants_logistic`;
    an individual ``f_i`` can be less smooth than that, which ``lip_local``
    accounts for.
    """

    def __init__(self, spec: LogisticSpec):
        self.spec = spec
        margins = spec.margins()
        dims = {c.shape[1] for c in margins if c.size}
        dims |= {f.shape[1] + 1 for f in spec.features}
        if len(dims) != 1:
            raise ValueError("inconsistent feature dimensions")
        self.n, self.d = spec.n, dims.pop()
        self.reg = spec.reg
        jmax = max((c.shape[0] for c in margins), default=0)
        self._c = np.zeros((self.n, jmax, self.d))
        self._mask = np.zeros((self.n, jmax))
        for i, c in enumerate(margins):
            self._c[i, : c.shape[0]] = c
            self._mask[i, : c.shape[0]] = 1.0
        self.mu, self.lip = constants_logistic(spec)
        local = [np.linalg.eigvalsh(c.T @ c)[-1] / 4 if c.size else 0.0 for c in margins]
        self._lip_local = float(max(local) + self.reg)

    @property
    def lip_local(self):
        return max(self._lip_local, self.lip)

    def aggregate_constants(self):
        c = self._c.reshape(-1, self.d)
        top = np.linalg.eigvalsh(c.T @ c)[-1] / 4
        return self.n * self.reg, float(top + self.n * self.reg)

    def value(self, i, x):
        z = self._c[i] @ x
        return float(np.sum(self._mask[i] * np.logaddexp(0.0, -z)) + 0.5 * self.reg * x @ x)

    def grad(self, i, x):
        z = self._c[i] @ x
        w = -self._mask[i] * expit(-z)
        return self._c[i].T @ w + self.reg * x

    def hessian(self, i, x):
        s = expit(self._c[i] @ x)
        w = self._mask[i] * s * (1.0 - s)
        return (self._c[i].T * w) @ self._c[i] + self.reg * np.eye(self.d)

    def grad_stacked(self, x):
        z = np.einsum("njd,nd->nj", self._c, x)
        w = -self._mask * expit(-z)
        return np.einsum("njd,nj->nd", self._c, w) + self.reg * x

    def hessian_stacked(self, x):
        s = expit(np.einsum("njd,nd->nj", self._c, x))
        w = self._mask * s * (1.0 - s)
        return np.einsum("nja,nj,njb->nab", self._c, w, self._c) + self.reg * np.eye(self.d)


def generate_logistic_data(n, J, d, noise_variance=0.4, seed=None, reg=0.03):
    """Synthetic classification data.

    Features and the true vector ``(x_1, x_0)`` have i.i.d. standard normal
    entries; labels are ``sign(x_1^T a + x_0 + eps)`` with
    ``eps ~ N(0, noise_variance)``.

    Returns
    -------
    spec : LogisticSpec
    x_true : ndarray, shape (d,)
        Generating vector, intercept last.
    """
    if d < 2:
        raise ValueError("d must be at least 2 (features plus intercept)")
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(d)
    feats = rng.standard_normal((n, J, d - 1))
    eps = rng.normal(0.0, np.sqrt(noise_variance), size=(n, J)) if noise_variance > 0 else np.zeros((n, J))
    score = feats @ x_true[:-1] + x_true[-1] + eps
    labels = np.where(score >= 0, 1.0, -1.0)
    spec = LogisticSpec(features=list(feats), labels=list(labels), reg=reg)
    return spec, x_true


def write_dataset_csv(spec: LogisticSpec, path):
    """Write one row per (node, sample): ``node_id, label, f1..f{d-1}``."""
    dim = spec.features[0].shape[1] if spec.features else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "label"] + [f"f{k + 1}" for k in range(dim)])
        for i, (a, b) in enumerate(zip(spec.features, spec.labels)):
            for aj, bj in zip(a, b):
                w.writerow([i, int(bj)] + [repr(float(v)) for v in aj])


def read_dataset_csv(path, reg=0.03, n=None) -> LogisticSpec:
    """Inverse of `write_dataset_csv`. Nodes without samples are kept when `n`
    exceeds the largest node id."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["node_id", "label"]:
            raise ValueError(f"{path}: header must start with node_id,label")
        dim = len(header) - 2
        for row in reader:
            if not row:
                continue
            i = int(row[0])
            rows.setdefault(i, []).append((float(row[1]), [float(v) for v in row[2:]]))
    n_nodes = max(rows) + 1 if rows else 0
    if n is not None:
        n_nodes = max(n_nodes, n)
    feats, labels = [], []
    for i in range(n_nodes):
        r = rows.get(i, [])
        labels.append(np.array([lab for lab, _ in r]))
        feats.append(np.array([f for _, f in r]).reshape(len(r), dim))
    return LogisticSpec(features=feats, labels=labels, reg=reg)


def solve_reference(p: Problem, tol=1e-12, max_iters=100_000, x0=None) -> np.ndarray:
    """Minimize ``sum_i f_i`` with Nesterov's accelerated gradient method.

    Uses step ``1/L`` and the constant momentum ``(sqrt(L)-sqrt(mu)) /
    (sqrt(L)+sqrt(mu))`` with the aggregate constants of the problem, and
    stops once the full gradient norm is at most `tol`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(p, QuadraticProblem):
        x = p.minimizer()
        # one refinement step against round-off in the solve
        g = p.total_grad(x)
        x = x - np.linalg.solve(p.a.sum(axis=0), g)
        if np.linalg.norm(p.total_grad(x)) <= tol:
            return x
    mu, lip = p.aggregate_constants()
    beta = (np.sqrt(lip) - np.sqrt(mu)) / (np.sqrt(lip) + np.sqrt(mu))
    x = np.zeros(p.d) if x0 is None else np.array(x0, dtype=float)
    y = x.copy()
    best, best_norm = x.copy(), np.inf
    for _ in range(max_iters):
        g = p.total_grad(y)
        gn = np.linalg.norm(g)
        if gn < best_norm:
            best, best_norm = y.copy(), gn
        if gn <= tol:
            return y
        x_new = y - g / lip
        y = x_new + beta * (x_new - x)
        x = x_new
    raise ReferenceSolverError(
        f"reference solver did not reach tol={tol} in {max_iters} iterations (best {best_norm:.3e})",
        best, best_norm)
