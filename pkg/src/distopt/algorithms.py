"""
Distributed first-order methods over a static network.

All methods act on stacked ``(N, d)`` arrays and apply the weight matrix
blockwise, so ``W ⊗ I`` is never formed. A step is a pure function
``step(state, cfg, problem) -> state``.

Implemented update rules, with ``L = I - W``:

* ``dgm``:          x+ = W x - a grad(x)
* ``extra``:        x+ = 2 W x - a grad(x) - W x- + a grad(x-)
* ``harnessing``:   x+ = W x - a s,  s+ = W s + grad(x+) - grad(x)
* ``generalized``:  x+ = W x - a (grad(x) + u),
                    u+ = u - L (grad(x) + u - B x)
* ``primal-dual``:  same primal step,
                    u+ = u + (1/a) L x+ - (1/a) L P x
  where ``P`` weights the previous dual gradient (``P = 0`` gives Extra,
  ``P = W`` gradient tracking, ``P = W - a B`` the generalized method).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .netgraph import WeightMatrix
from .objectives import Problem

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e12
METHODS = ("dgm", "extra", "harnessing", "generalized", "primal-dual")


class DivergenceError(RuntimeError):
    """Iterates blew up. The partial trajectory is kept in ``trajectory``."""

    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class TuningError(ValueError):
    pass


# ---------------------------------------------------------------------------
# past dual gradient weight B

class BSpec:
    """Weighting ``B`` of the past dual gradient in the generalized method."""

    label = "B"

    def apply(self, x, weight: WeightMatrix, alpha: float) -> np.ndarray:
        raise NotImplementedError

    def dense(self, weight: WeightMatrix, d: int, alpha: float) -> np.ndarray:
        """The ``(Nd, Nd)`` matrix, node-major block ordering."""
        n = weight.n
        out = np.empty((n * d, n * d))
        eye = np.eye(n * d)
        for col in range(n * d):
            out[:, col] = self.apply(eye[col].reshape(n, d), weight, alpha).reshape(-1)
        return out

    def norm(self, weight: WeightMatrix, d: int, alpha: float) -> float:
        return float(np.linalg.norm(self.dense(weight, d, alpha), 2))

    def lprime(self, mu, lip, weight, d, alpha) -> float:
        """Coupling constant entering the step-size bound; ``L + ||B||``
        unless a sharper value is known."""
        return lip + self.norm(weight, d, alpha)


@dataclass(frozen=True)
class ZeroB(BSpec):
    label = "zero"

    def apply(self, x, weight, alpha):
        return np.zeros_like(x)

    def norm(self, weight, d, alpha):
        return 0.0

    def lprime(self, mu, lip, weight, d, alpha):
        return lip


@dataclass(frozen=True)
class ScaledIdentityB(BSpec):
    b: float

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("b must be nonnegative")

    @property
    def label(self):
        return f"bI:{self.b:g}"

    def apply(self, x, weight, alpha):
        return self.b * x

    def norm(self, weight, d, alpha):
        return abs(self.b)

    def lprime(self, mu, lip, weight, d, alpha):
        return lprime_scaled_identity(mu, lip, self.b)


@dataclass(frozen=True)
class ScaledWeightB(BSpec):
    b: float

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("b' must be nonnegative")

    @property
    def label(self):
        return f"bW:{self.b:g}"

    def apply(self, x, weight, alpha):
        return self.b * weight.mix(x)

    def norm(self, weight, d, alpha):
        return abs(self.b) * float(np.max(np.abs(np.linalg.eigvalsh(weight.w))))


@dataclass(frozen=True)
class WOverAlphaB(BSpec):
    label = "extra"

    def apply(self, x, weight, alpha):
        if alpha <= 0:
            raise ValueError("B = W / alpha needs a positive step size")
        return weight.mix(x) / alpha

    def norm(self, weight, d, alpha):
        return float(np.max(np.abs(np.linalg.eigvalsh(weight.w)))) / alpha


@dataclass(frozen=True, eq=False)
class GenericB(BSpec):
    """Arbitrary symmetric ``(Nd, Nd)`` matrix.

    It must follow the block sparsity of the graph and map every consensus
    vector ``1 ⊗ y`` to ``c (1 ⊗ y)`` for one scalar ``c``; see `validate`.
    """

    matrix: np.ndarray
    label = "generic"

    def apply(self, x, weight, alpha):
        n, d = x.shape
        return (self.matrix @ x.reshape(-1)).reshape(n, d)

    def dense(self, weight, d, alpha):
        return np.array(self.matrix, dtype=float)

    def validate(self, weight: WeightMatrix, d: int, tol=1e-10):
        m = np.asarray(self.matrix, dtype=float)
        n = weight.n
        if m.shape != (n * d, n * d):
            raise ValueError(f"generic B must be {(n * d, n * d)}, got {m.shape}")
        if not np.allclose(m, m.T, atol=tol, rtol=0):
            raise ValueError("generic B must be symmetric")
        blocks = np.abs(m.reshape(n, d, n, d)).max(axis=(1, 3))
        allowed = (weight.w != 0) | np.eye(n, dtype=bool)
        if np.any(blocks[~allowed] > tol):
            raise ValueError("generic B does not respect the graph's block sparsity")
        ones = np.ones((n, 1))
        scale = None
        for k in range(d):
            v = np.kron(ones, np.eye(d)[k][:, None]).reshape(-1)
            bv = m @ v
            c = float(v @ bv / (v @ v))
            if np.linalg.norm(bv - c * v) > tol * max(1.0, np.linalg.norm(bv)):
                raise ValueError("generic B does not map 1 ⊗ e_k onto its own span")
            if scale is not None and abs(c - scale) > tol * max(1.0, abs(c)):
                raise ValueError("generic B scales consensus directions unevenly")
            scale = c
        return scale


def lprime_scaled_identity(mu, lip, b) -> float:
    """``(L^2 + b^2 - 2 b mu)^{1/2}``, clamped at zero against round-off."""
    return math.sqrt(max(lip * lip + b * b - 2.0 * b * mu, 0.0))


def parse_b_spec(text: str, mu=None, lip=None, lambda_min=None) -> BSpec:
    """Parse ``zero``, ``extra``, ``bI:<b>``, ``bW:<b'>``.

    The value may be a number, ``auto`` (minimax tuning), ``L`` or ``mu``.
    ``bW:auto`` falls back to ``b' = L`` when ``lambda_min <= 0``.
    """
    t = text.strip()
    low = t.lower()
    if low in ("zero", "0"):
        return ZeroB()
    if low in ("extra", "w/alpha"):
        return WOverAlphaB()
    kind, sep, val = t.partition(":")
    if not sep or kind not in ("bI", "bW"):
        raise ValueError(f"unknown B spec {text!r}")
    val = val.strip()
    if val == "auto":
        if mu is None or lip is None:
            raise ValueError(f"{text!r} needs mu and L")
        if kind == "bI":
            return ScaledIdentityB(tune_b_star(mu, lip))
        if lambda_min is None or lambda_min <= 0:
            logger.warning("lambda_N=%s is not positive; using b'=L for %s", lambda_min, text)
            return ScaledWeightB(float(lip))
        return ScaledWeightB(tune_b_prime(mu, lip, lambda_min))
    if val in ("L", "mu"):
        ref = lip if val == "L" else mu
        if ref is None:
            raise ValueError(f"{text!r} needs {val}")
        num = float(ref)
    else:
        num = float(val)
    return ScaledIdentityB(num) if kind == "bI" else ScaledWeightB(num)


# ---------------------------------------------------------------------------
# tuning and step-size bounds

def tune_b_star(mu, lip) -> float:
    """Minimizer over ``b >= 0`` of ``max(|b - mu|, |L - b|)``."""
    if not 0 < mu <= lip:
        raise TuningError("need 0 < mu <= L")
    return 0.5 * (mu + lip)


def tune_b_prime(mu, lip, lambda_min) -> float:
    """Minimizer of the upper bound ``max(|b' - mu|, |L - b' lambda_N|)``.

    Only defined for ``lambda_N > 0``; otherwise use ``bI:auto`` or the
    heuristic ``b' = L``.
    """
    if not 0 < mu <= lip:
        raise TuningError("need 0 < mu <= L")
    if lambda_min <= 0:
        raise TuningError(
            f"lambda_N={lambda_min:g} <= 0: b' tuning undefined; use B = ((mu+L)/2) I or b' = L")
    return (lip + mu) / (1.0 + lambda_min)


def max_step_theorem4(mu, lip, sigma, b=0.0, b_norm=None) -> float:
    """Provable step-size ceiling for ``B = b I``.

    ``min((1-sigma) mu / (19 L^2), (1-sigma)^2 mu / (192 L' L))`` with
    ``L' = (L^2 + b^2 - 2 b mu)^{1/2}``. Passing `b_norm` switches to the
    generic-matrix constant ``L' = L + ||B||``. When ``L' = 0`` the second
    term is dropped.
    """
    if not 0 < mu <= lip:
        raise ValueError("need 0 < mu <= L")
    if not 0 <= sigma < 1:
        raise ValueError("sigma must lie in [0, 1)")
    lp = lip + b_norm if b_norm is not None else lprime_scaled_identity(mu, lip, b)
    first = (1 - sigma) * mu / (19 * lip**2)
    second = (1 - sigma) ** 2 * mu / (192 * lp * lip) if lp > 0 else math.inf
    return min(first, second)


def rate_bound_theorem4(alpha, mu, sigma) -> float:
    """Convergence factor ``max(1 - alpha mu / 2, (1 + sigma) / 2)``."""
    return max(1.0 - alpha * mu / 2.0, (1.0 + sigma) / 2.0)


# ---------------------------------------------------------------------------
# states and steps

@dataclass(frozen=True)
class StepConfig:
    alpha: float
    weight: WeightMatrix
    b_spec: BSpec = field(default_factory=ZeroB)
    past_weight: object = None

    def __post_init__(self):
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ValueError("step size must be finite and nonnegative")


@dataclass(frozen=True, eq=False)
class State:
    """Iterate ``x`` plus the auxiliary variables of `method`.

    ``grad`` caches ``grad F(x)``; ``x_prev`` and ``grad_prev`` hold Extra's
    history (``None`` before the bootstrap step).
    """

    method: str
    x: np.ndarray
    k: int = 0
    grad: np.ndarray | None = None
    u: np.ndarray | None = None
    s: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    grad_prev: np.ndarray | None = None

    def aux(self):
        if self.method in ("generalized", "primal-dual"):
            return self.u
        if self.method == "harnessing":
            return self.s
        if self.method == "extra":
            return self.x_prev
        return None


def init_state(method, x0, problem: Problem) -> State:
    """Starting state: zero dual variable, ``s = grad F(x0)`` for tracking."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    x0 = np.array(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.tile(x0, (problem.n, 1))
    if x0.shape != (problem.n, problem.d):
        raise ValueError(f"x0 must have shape {(problem.n, problem.d)}")
    g = problem.grad_stacked(x0)
    if method in ("generalized", "primal-dual"):
        return State(method, x0, grad=g, u=np.zeros_like(x0))
    if method == "harnessing":
        return State(method, x0, grad=g, s=g.copy())
    return State(method, x0, grad=g)


def _grad(state, problem):
    return state.grad if state.grad is not None else problem.grad_stacked(state.x)


def _expect(state, *methods):
    if state.method not in methods:
        raise ValueError(f"state is tagged {state.method!r}, expected {methods}")


def dgm_step(state: State, cfg: StepConfig, problem: Problem) -> State:
    _expect(state, "dgm")
    g = _grad(state, problem)
    x = cfg.weight.mix(state.x) - cfg.alpha * g
    return replace(state, x=x, k=state.k + 1, grad=problem.grad_stacked(x))


def extra_step(state: State, cfg: StepConfig, problem: Problem) -> State:
    _expect(state, "extra")
    g = _grad(state, problem)
    w, a = cfg.weight, cfg.alpha
    if state.x_prev is None:
        x = w.mix(state.x) - a * g
    else:
        x = 2.0 * w.mix(state.x) - a * g - w.mix(state.x_prev) + a * state.grad_prev
    return replace(state, x=x, k=state.k + 1, grad=problem.grad_stacked(x),
                   x_prev=state.x, grad_prev=g)


def harnessing_step(state: State, cfg: StepConfig, problem: Problem) -> State:
    _expect(state, "harnessing")
    g = _grad(state, problem)
    w = cfg.weight
    x = w.mix(state.x) - cfg.alpha * state.s
    g_new = problem.grad_stacked(x)
    s = w.mix(state.s) + g_new - g
    return replace(state, x=x, s=s, k=state.k + 1, grad=g_new)


def generalized_step(state: State, cfg: StepConfig, problem: Problem) -> State:
    """One Jacobi-style update: both lines read the step-``k`` state."""
    _expect(state, "generalized")
    g = _grad(state, problem)
    w, a = cfg.weight, cfg.alpha
    dual_grad = g + state.u
    x = w.mix(state.x) - a * dual_grad
    u = state.u - w.laplacian(dual_grad - cfg.b_spec.apply(state.x, w, a))
    return replace(state, x=x, u=u, k=state.k + 1, grad=problem.grad_stacked(x))


def past_weight_apply(past_weight, x, weight: WeightMatrix, alpha) -> np.ndarray:
    """Apply the previous-dual-gradient weight ``P`` to stacked `x`.

    `past_weight` is ``"extra"`` (``P = 0``), ``"harnessing"`` (``P = W``),
    a `BSpec` (``P = W - alpha B``), or an explicit ``(N, N)`` or
    ``(Nd, Nd)`` matrix.
    """
    if isinstance(past_weight, str):
        if past_weight == "extra":
            return np.zeros_like(x)
        if past_weight == "harnessing":
            return weight.mix(x)
        raise ValueError(f"unknown past weight {past_weight!r}")
    if isinstance(past_weight, BSpec):
        return weight.mix(x) - alpha * past_weight.apply(x, weight, alpha)
    p = np.asarray(past_weight, dtype=float)
    n, d = x.shape
    if p.shape == (n, n):
        return p @ x
    if p.shape == (n * d, n * d):
        return (p @ x.reshape(-1)).reshape(n, d)
    raise ValueError(f"past weight of shape {p.shape} does not fit x of shape {x.shape}")


def primal_dual_u_step(state: State, cfg: StepConfig, problem: Problem, past_weight=None) -> State:
    """Primal-dual form with the dual step evaluated at the new primal iterate."""
    _expect(state, "primal-dual")
    pw = cfg.past_weight if past_weight is None else past_weight
    if pw is None:
        raise ValueError("primal-dual step needs a past weight")
    w, a = cfg.weight, cfg.alpha
    if a <= 0:
        raise ValueError("primal-dual form needs a positive step size")
    g = _grad(state, problem)
    x = w.mix(state.x) - a * (g + state.u)
    u = state.u + (w.laplacian(x) - w.laplacian(past_weight_apply(pw, state.x, w, a))) / a
    return replace(state, x=x, u=u, k=state.k + 1, grad=problem.grad_stacked(x))


STEPPERS = {
    "dgm": dgm_step,
    "extra": extra_step,
    "harnessing": harnessing_step,
    "generalized": generalized_step,
    "primal-dual": primal_dual_u_step,
}


def step(state: State, cfg: StepConfig, problem: Problem) -> State:
    return STEPPERS[state.method](state, cfg, problem)


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    """Per-iteration record of a run.

    ``iterates`` and ``aux`` are filled only when requested, to keep long
    runs light.
    """

    method: str
    alpha: float
    k: list = field(default_factory=list)
    rel_error: list = field(default_factory=list)
    consensus: list = field(default_factory=list)
    timestamps: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    aux: list = field(default_factory=list)
    diverged: bool = False
    message: str = ""

    def __len__(self):
        return len(self.k)

    def record(self, state, x_ref, t0, keep_iterates, keep_aux):
        self.k.append(state.k)
        self.rel_error.append(relative_error(state.x, x_ref))
        self.consensus.append(consensus_residual(state.x))
        self.timestamps.append(time.perf_counter() - t0)
        if keep_iterates:
            self.iterates.append(state.x.copy())
        if keep_aux:
            a = state.aux()
            self.aux.append(None if a is None else a.copy())

    @property
    def errors(self) -> np.ndarray:
        return np.asarray(self.rel_error)

    def first_below(self, threshold):
        """First recorded ``k`` with relative error at most `threshold`, or None."""
        hits = np.flatnonzero(self.errors <= threshold)
        return int(self.k[hits[0]]) if hits.size else None


def relative_error(x, x_ref) -> float:
    """``(1/N) sum_i ||x_i - x*|| / ||x*||``; absolute when ``x* = 0``."""
    x_ref = np.asarray(x_ref, dtype=float)
    scale = np.linalg.norm(x_ref)
    dev = np.linalg.norm(np.asarray(x) - x_ref, axis=1).mean()
    return float(dev / scale) if scale > 0 else float(dev)


def consensus_residual(x) -> float:
    x = np.asarray(x)
    return float(np.linalg.norm(x - x.mean(axis=0)))


def run(method, cfg: StepConfig, problem: Problem, x0, iters, x_ref,
        keep_iterates=False, keep_aux=False, stop_below=None) -> Trajectory:
    """Run `method` for `iters` steps from the replicated start `x0`.

    Parameters
    ----------
    method : str
        One of ``dgm``, ``extra``, ``harnessing``, ``generalized``,
        ``primal-dual``.
    x0 : array_like, shape (d,) or (N, d)
        Starting point; all rows must be equal.
    x_ref : array_like, shape (d,)
        Reference solution for the relative error.
    stop_below : float, optional
        Stop early once the relative error drops below this value.

    Raises
    ------
    DivergenceError
        On a non-finite iterate or one with norm above 1e12.
    """
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    state = init_state(method, x0, problem)
    if not np.all(state.x == state.x[0]):
        raise ValueError("initial iterate must be replicated across nodes")
    stepper = STEPPERS[method]
    traj = Trajectory(method=method, alpha=cfg.alpha)
    t0 = time.perf_counter()
    traj.record(state, x_ref, t0, keep_iterates, keep_aux)
    for _ in range(iters):
        state = stepper(state, cfg, problem)
        if not np.all(np.isfinite(state.x)) or np.linalg.norm(state.x) > DIVERGENCE_NORM:
            traj.diverged = True
            traj.message = f"{method} diverged at k={state.k} with alpha={cfg.alpha:.4g}; step size likely too large"
            raise DivergenceError(traj.message, traj)
        traj.record(state, x_ref, t0, keep_iterates, keep_aux)
        if stop_below is not None and traj.rel_error[-1] <= stop_below:
            break
    return traj
