"""
Error-dynamics and small-gain diagnostics for the generalized method.

Everything here materializes ``(Nd, Nd)`` matrices and is meant for
desk-scale instances only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .algorithms import (BSpec, ScaledIdentityB, ScaledWeightB, StepConfig, ZeroB,
                         lprime_scaled_identity, max_step_theorem4, past_weight_apply, run)
from .netgraph import WeightMatrix
from .objectives import Problem, QuadraticProblem

MAX_DENSE_DIM = 1024
QUAD_NODES = 16


class DimensionError(ValueError):
    pass


@dataclass
class ErrorDecomposition:
    e_x: np.ndarray
    e_u: np.ndarray
    x_tilde: np.ndarray
    e_bar_x: np.ndarray
    u_tilde: np.ndarray
    e_bar_u: np.ndarray


def decompose(x, u, x_star, problem: Problem, weight: WeightMatrix = None) -> ErrorDecomposition:
    """Split primal and dual errors into consensus and average parts.

    ``e_x = x - 1 ⊗ x*`` and ``e_u = u + grad F(1 ⊗ x*)``; each is written as
    a disagreement component plus ``1 ⊗`` its node average.
    """
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    x_opt = np.broadcast_to(x_star, x.shape)
    e_x = x - x_opt
    e_u = np.asarray(u, dtype=float) + problem.grad_stacked(x_opt)
    x_bar = x.mean(axis=0)
    e_bar_u = e_u.mean(axis=0)
    return ErrorDecomposition(
        e_x=e_x,
        e_u=e_u,
        x_tilde=x - x_bar,
        e_bar_x=x_bar - x_star,
        u_tilde=e_u - e_bar_u,
        e_bar_u=e_bar_u,
    )


def _block_diag(blocks):
    n, d, _ = blocks.shape
    out = np.zeros((n * d, n * d))
    for i in range(n):
        out[i * d:(i + 1) * d, i * d:(i + 1) * d] = blocks[i]
    return out


def integrated_hessian_blocks(problem: Problem, x, x_star, nodes=QUAD_NODES, panels=1):
    """Blocks ``int_0^1 hess f_i(x* + t (x_i - x*)) dt``, shape ``(N, d, d)``.

    Composite Gauss-Legendre with `panels` equal panels of `nodes` points.
    Quadratic problems are returned exactly.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(problem, QuadraticProblem):
        return problem.hessian_stacked(x)
    x_opt = np.broadcast_to(np.asarray(x_star, dtype=float), x.shape)
    t_ref, w_ref = np.polynomial.legendre.leggauss(nodes)
    acc = np.zeros((problem.n, problem.d, problem.d))
    for p in range(panels):
        lo, hi = p / panels, (p + 1) / panels
        ts = lo + (hi - lo) * (t_ref + 1) / 2
        ws = w_ref * (hi - lo) / 2
        for t, w in zip(ts, ws):
            acc += w * problem.hessian_stacked(x_opt + t * (x - x_opt))
    return 0.5 * (acc + np.swapaxes(acc, 1, 2))


def integrated_hessian(problem: Problem, x, x_star, nodes=QUAD_NODES, panels=1) -> np.ndarray:
    """Block-diagonal ``(Nd, Nd)`` averaged Hessian along the segment from
    ``1 ⊗ x*`` to `x`."""
    _check_dim(problem.n * problem.d)
    return _block_diag(integrated_hessian_blocks(problem, x, x_star, nodes, panels))


def _check_dim(nd):
    if nd > MAX_DENSE_DIM:
        raise DimensionError(f"Nd={nd} exceeds the dense diagnostic ceiling {MAX_DENSE_DIM}")


@dataclass
class ErrorDynamicsMatrix:
    m: np.ndarray
    alpha: float
    b_spec: BSpec
    h: np.ndarray

    @property
    def nd(self):
        return self.m.shape[0] // 2

    def block(self, r, c):
        nd = self.nd
        return self.m[r * nd:(r + 1) * nd, c * nd:(c + 1) * nd]


def build_error_matrix(weight: WeightMatrix, alpha, b_spec: BSpec, h) -> ErrorDynamicsMatrix:
    """Assemble ``[[W - a H, -a I], [(W - I)(H - B), W - J]]`` with Kronecker-lifted
    ``W`` and ``J``."""
    h = np.asarray(h, dtype=float)
    nd = h.shape[0]
    n = weight.n
    if nd % n:
        raise ValueError("Hessian size is not a multiple of the node count")
    _check_dim(nd)
    d = nd // n
    eye_d = np.eye(d)
    w_big = np.kron(weight.w, eye_d)
    j_big = np.kron(np.full((n, n), 1.0 / n), eye_d)
    b_big = b_spec.dense(weight, d, alpha)
    eye = np.eye(nd)
    m = np.block([
        [w_big - alpha * h, -alpha * eye],
        [(w_big - eye) @ (h - b_big), w_big - j_big],
    ])
    return ErrorDynamicsMatrix(m=m, alpha=alpha, b_spec=b_spec, h=h)


def spectral_radius(m) -> float:
    mat = m.m if isinstance(m, ErrorDynamicsMatrix) else np.asarray(m, dtype=float)
    try:
        eig = np.linalg.eigvals(mat)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolve failed: {exc}") from exc
    return float(np.max(np.abs(eig)))


def block21_norm(b, mu, lip, weight: WeightMatrix = None) -> float:
    """Worst case of the (2,1)-block factor ``||H - B||`` over ``mu I <= H <= L I``.

    Exact for ``B = b I`` (a float, `ScaledIdentityB` or `ZeroB`); for
    ``B = b' W`` the upper bound ``max(|b' - mu|, |L - b' lambda_N|)``.
    """
    if isinstance(b, ZeroB):
        b = 0.0
    if isinstance(b, ScaledIdentityB):
        b = b.b
    if isinstance(b, ScaledWeightB):
        if weight is None:
            raise ValueError("b' W bound needs the weight matrix")
        return max(abs(b.b - mu), abs(lip - b.b * weight.lambda_min))
    if isinstance(b, BSpec):
        raise ValueError(f"no closed form for {b.label}")
    return max(abs(b - mu), abs(lip - b))


@dataclass
class DeltaNormReport:
    """Running maxima ``max_{k<=K} delta^{-k} ||a^(k)||`` per named sequence."""

    delta: float
    values: dict = field(default_factory=dict)
    bounded: dict = field(default_factory=dict)

    def final(self, name):
        return float(self.values[name][-1])


def delta_norm_series(norms, delta) -> np.ndarray:
    norms = np.asarray(norms, dtype=float)
    k = np.arange(norms.size)
    with np.errstate(over="ignore"):
        scaled = norms * np.power(delta, -k.astype(float))
    return np.maximum.accumulate(scaled)


def _looks_bounded(series, rtol=1e-9):
    if series.size < 3:
        return True
    ref = series[(2 * series.size) // 3]
    return bool(np.isfinite(series[-1]) and series[-1] <= ref * (1 + rtol) + 1e-300)


def delta_norms(traj, problem: Problem, x_star, delta) -> DeltaNormReport:
    """δ-norms of the disagreement ``x~``, the average error ``ē_x`` and, when
    the trajectory kept dual iterates, ``u~``.

    Requires a trajectory recorded with ``keep_iterates=True``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not traj.iterates:
        raise ValueError("trajectory has no stored iterates")
    seqs = {"x_tilde": [], "e_bar_x": [], "e_x": []}
    has_u = bool(traj.aux) and all(a is not None for a in traj.aux)
    if has_u:
        seqs["u_tilde"] = []
    zero_u = np.zeros((problem.n, problem.d))
    for idx, x in enumerate(traj.iterates):
        dec = decompose(x, traj.aux[idx] if has_u else zero_u, x_star, problem)
        seqs["x_tilde"].append(np.linalg.norm(dec.x_tilde))
        seqs["e_bar_x"].append(np.linalg.norm(dec.e_bar_x))
        seqs["e_x"].append(np.linalg.norm(dec.e_x))
        if has_u:
            seqs["u_tilde"].append(np.linalg.norm(dec.u_tilde))
    rep = DeltaNormReport(delta=delta)
    for name, vals in seqs.items():
        series = delta_norm_series(vals, delta)
        rep.values[name] = series
        rep.bounded[name] = _looks_bounded(series)
    return rep


@dataclass
class SmallGainReport:
    gamma1: float
    gamma2: float
    product: float
    satisfied: bool
    lprime: float
    product_proof_constant: float


def small_gain_check(mu, lip, sigma, alpha, b=0.0, lprime=None) -> SmallGainReport:
    """Gain product of the disagreement/dual-error loop.

    ``gamma1 = (24/5) alpha / (1 - sigma)`` and
    ``gamma2 = 40 L' L / (mu (1 - sigma))``, so that ``gamma1 gamma2 < 1``
    exactly when ``alpha < (1-sigma)^2 mu / (192 L' L)``. The product with
    the ``6 alpha / (1 - sigma)`` gain written in the final assembly of the
    argument is reported as ``product_proof_constant``.
    """
    lp = lprime_scaled_identity(mu, lip, b) if lprime is None else float(lprime)
    gamma1 = 24.0 / 5.0 * alpha / (1 - sigma)
    gamma2 = 40.0 * lp * lip / (mu * (1 - sigma))
    product = gamma1 * gamma2
    return SmallGainReport(
        gamma1=gamma1,
        gamma2=gamma2,
        product=product,
        satisfied=product < 1,
        lprime=lp,
        product_proof_constant=6.0 * alpha / (1 - sigma) * gamma2,
    )


def inexact_gradient_bound_check(problem: Problem, gamma, noise_sequence, iters=None, y0=None, y_star=None) -> bool:
    """Run ``y+ = y - gamma (grad phi(y) + eps_k)`` on a single-node problem and
    check ``||y+ - y*|| <= (1 - gamma m) ||y - y*|| + gamma ||eps_k||`` at
    every step."""
    if problem.n != 1:
        raise ValueError("expected a single-node problem")
    m, big_m = problem.mu, problem.lip_local
    if gamma > 1.0 / big_m * (1 + 1e-12):
        raise ValueError("gamma must not exceed 1/M")
    noise = np.asarray(noise_sequence, dtype=float).reshape(-1, problem.d)
    iters = len(noise) if iters is None else iters
    if y_star is None:
        from .objectives import solve_reference
        y_star = solve_reference(problem)
    y = np.zeros(problem.d) if y0 is None else np.array(y0, dtype=float)
    ok = True
    for k in range(iters):
        eps = noise[k]
        y_new = y - gamma * (problem.grad(0, y) + eps)
        lhs = np.linalg.norm(y_new - y_star)
        rhs = (1 - gamma * m) * np.linalg.norm(y - y_star) + gamma * np.linalg.norm(eps)
        if lhs > rhs * (1 + 1e-12) + 1e-14:
            ok = False
        y = y_new
    return ok


def matrix_sqrt_psd(m, tol=1e-10) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if not np.allclose(m, m.T, atol=tol, rtol=0):
        raise ValueError("matrix must be symmetric")
    lam, vec = np.linalg.eigh(0.5 * (m + m.T))
    if lam.min() < -tol:
        raise ValueError(f"matrix has negative eigenvalue {lam.min():.3e}")
    # round-off eigenvalues would otherwise leak sqrt(eps) into the nullspace
    lam = np.where(lam < tol, 0.0, lam)
    s = (vec * np.sqrt(lam)) @ vec.T
    return 0.5 * (s + s.T)


def run_mu_form(problem: Problem, weight: WeightMatrix, alpha, x0, iters, past_weight="extra"):
    """Iterate the augmented-Lagrangian primal-dual recursion in the
    multiplier variable ``mu`` (uses ``(I - W)^{1/2}`` explicitly).

    ``past_weight`` has the meaning of `past_weight_apply`; ``"extra"``
    gives the plain primal-dual gradient method. Returns the list of
    primal iterates ``x^(0..iters)``.
    """
    n, d = problem.n, problem.d
    _check_dim(n * d)
    lap = np.kron(np.eye(n) - weight.w, np.eye(d))
    root = matrix_sqrt_psd(lap)
    x = np.array(x0, dtype=float)
    if x.ndim == 1:
        x = np.tile(x, (n, 1))
    mult = np.zeros(n * d)
    out = [x.copy()]
    for _ in range(iters):
        xv = x.reshape(-1)
        grad = problem.grad_stacked(x).reshape(-1)
        x_new = (xv - (lap @ xv + alpha * grad + root @ mult)).reshape(n, d)
        past = past_weight_apply(past_weight, (root @ xv).reshape(n, d), weight, alpha).reshape(-1)
        mult = mult + root @ x_new.reshape(-1) - past
        x = x_new
        out.append(x.copy())
    return out


def error_recursion_residuals(problem: Problem, weight: WeightMatrix, alpha, b_spec: BSpec, x0, iters, x_star,
                     nodes=QUAD_NODES):
    """``||e^(k+1) - M_k e^(k)||`` along a generalized-method run, with
    ``M_k`` rebuilt from the averaged Hessian at every step."""
    cfg = StepConfig(alpha=alpha, weight=weight, b_spec=b_spec)
    traj = run("generalized", cfg, problem, x0, iters, x_star, keep_iterates=True, keep_aux=True)
    res = []
    for k in range(len(traj) - 1):
        dec = decompose(traj.iterates[k], traj.aux[k], x_star, problem)
        nxt = decompose(traj.iterates[k + 1], traj.aux[k + 1], x_star, problem)
        h = integrated_hessian(problem, traj.iterates[k], x_star, nodes=nodes)
        m = build_error_matrix(weight, alpha, b_spec, h).m
        e = np.concatenate([dec.e_x.reshape(-1), dec.e_u.reshape(-1)])
        e_next = np.concatenate([nxt.e_x.reshape(-1), nxt.e_u.reshape(-1)])
        res.append(np.linalg.norm(e_next - m @ e))
    return np.asarray(res)


def theory_constants(b_spec: BSpec, mu, lip, weight: WeightMatrix, d, alpha):
    """``(alpha_max, L')`` for a weight spec: sharp ``L'`` for ``b I``,
    ``L + ||B||`` otherwise."""
    if isinstance(b_spec, (ZeroB, ScaledIdentityB)):
        b = 0.0 if isinstance(b_spec, ZeroB) else b_spec.b
        return max_step_theorem4(mu, lip, weight.sigma, b), lprime_scaled_identity(mu, lip, b)
    norm = b_spec.norm(weight, d, alpha)
    return max_step_theorem4(mu, lip, weight.sigma, b_norm=norm), lip + norm


def diagnostic_report(problem: Problem, weight: WeightMatrix, alpha, b_spec: BSpec, x_star,
                      iters=50, x0=None) -> dict:
    """JSON-ready summary: gains, step bound, spectral radius at ``x*``,
    (2,1)-block bound and the worst error-recursion residual.

    Theory constants use ``problem.lip_local``.
    """
    mu, lip = problem.mu, problem.lip_local
    d = problem.d
    alpha_max, lp = theory_constants(b_spec, mu, lip, weight, d, alpha)
    gains = small_gain_check(mu, lip, weight.sigma, alpha, lprime=lp)
    h = integrated_hessian(problem, np.tile(x_star, (problem.n, 1)), x_star)
    rho = spectral_radius(build_error_matrix(weight, alpha, b_spec, h))
    try:
        b21 = block21_norm(b_spec, mu, lip, weight)
    except ValueError:
        b21 = None
    x0 = np.zeros(d) if x0 is None else x0
    res = error_recursion_residuals(problem, weight, alpha, b_spec, x0, iters, x_star)
    return {
        "gamma1": gains.gamma1,
        "gamma2": gains.gamma2,
        "product": gains.product,
        "alpha_max": alpha_max,
        "spectral_radius": rho,
        "block21_norm": b21,
        "lemma4_max_residual": float(res.max()) if res.size else 0.0,
        "alpha": alpha,
        "b_spec": b_spec.label,
        "mu": mu,
        "lip": lip,
        "sigma": weight.sigma,
        "product_proof_constant": gains.product_proof_constant,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False)
