"""ADMM for the penalized, state-constrained current optimization.

Solves::

    min_I  -<B I, e> + alpha |I|^2 + beta |I|_1
    s.t.   omega_i |(B I)_i| <= eps   for every element i

with the splitting ``y = B I`` and ``z = I``. Multipliers enter the augmented
Lagrangian as ``<I - z, p1> + <B I - y, p2>``; every step below is the exact
minimizer under that convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted


@dataclass(frozen=True)
class AdmmParams:
    mu1: float = 1.0
    mu2: float = 1.0
    alpha: float = 0.0
    beta: float = 0.001
    epsilon: float = 0.001
    tol: float = 1e-6
    max_iter: int = 10_000
    state_constraint: str = "vector"

    def __post_init__(self):
        if self.mu1 <= 0 or self.mu2 <= 0:
            raise ValueError("mu1 and mu2 must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 3:
            raise ValueError("max_iter must be at least 3")
        if self.state_constraint not in ("vector", "component"):
            raise ValueError("state_constraint must be 'vector' or 'component'")


@dataclass
class AdmmState:
    currents: np.ndarray
    y: np.ndarray
    z: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n_currents: int, n_field: int) -> "AdmmState":
        return cls(np.zeros(n_currents), np.zeros(n_field), np.zeros(n_currents),
                   np.zeros(n_currents), np.zeros(n_field))


@dataclass
class OptResult:
    """Outcome of one optimization run.

    ``currents`` is the reduced vector (S-1 entries); ``protocol`` the
    complete zero-sum vector over all S electrodes. ``delta`` is None when
    the protocol vanishes.
    """

    currents: np.ndarray
    protocol: np.ndarray
    delta: float | None
    n_iter: int
    total_variation: float
    converged: bool
    objective: float
    epsilon: float
    history: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 5)))
    feasibility_scale: float = 1.0

    HISTORY_COLUMNS = ("k", "objective", "primal_I_z", "primal_BI_y", "step_norm")


def full_protocol(reduced, reference_index: int = -1) -> np.ndarray:
    reduced = np.asarray(reduced, dtype=float)
    n = len(reduced) + 1
    ref = reference_index % n
    out = np.insert(reduced, ref, 0.0)
    out[ref] = -math.fsum(reduced)
    return out


def total_variation(reduced, reference_index: int = -1) -> float:
    """Total absolute current over all electrodes, reference included."""
    return float(np.abs(full_protocol(reduced, reference_index)).sum())


def objective(B, e_tilde, currents, alpha, beta) -> float:
    currents = np.asarray(currents, dtype=float)
    return float(-(B @ currents) @ e_tilde + alpha * currents @ currents + beta * np.abs(currents).sum())


def _row_norms(blocks: np.ndarray) -> np.ndarray:
    # single definition so projection and feasibility checks agree to the last bit
    return np.sqrt(np.einsum("ij,ij->i", blocks, blocks))


def block_norms(v, weights, dim: int, mode: str = "vector") -> np.ndarray:
    """Weighted per-element magnitude used by the state constraint."""
    blocks = np.asarray(v).reshape(-1, dim)
    if mode == "vector":
        mag = _row_norms(blocks)
    else:
        mag = np.abs(blocks).max(axis=1)
    return np.asarray(weights) * mag


def istep(B, z, p1, y, p2, mu1: float, mu2: float, factor=None) -> np.ndarray:
    """Minimize the augmented Lagrangian over the currents.

    Solves ``(mu1 I + mu2 B^T B) x = mu1 z - p1 + B^T (mu2 y - p2)``. Pass
    ``factor`` (from :func:`factor_istep`) to reuse the Cholesky factor.
    """
    arrays = [np.asarray(a, dtype=float) for a in (B, z, p1, y, p2)]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError("non-finite input to the current update")
    B, z, p1, y, p2 = arrays
    rhs = mu1 * z - p1 + B.T @ (mu2 * y - p2)
    if factor is None:
        factor = factor_istep(B, mu1, mu2)
    return scipy.linalg.cho_solve(factor, rhs)


def factor_istep(B, mu1: float, mu2: float):
    B = np.asarray(B, dtype=float)
    M = mu1 * np.eye(B.shape[1]) + mu2 * (B.T @ B)
    return scipy.linalg.cho_factor(M, lower=True)


def ystep(BI, p2, e_tilde, mu2: float, weights, epsilon: float, dim: int | None = None,
          mode: str = "vector") -> np.ndarray:
    """Project ``B I + (p2 + e)/mu2`` onto the weighted state-constraint set.

    In vector mode each ``dim``-block is projected onto the Euclidean ball of
    radius ``epsilon / omega_i``; component mode clips every entry to that
    radius instead.
    """
    weights = np.asarray(weights, dtype=float)
    v = np.asarray(BI, dtype=float) + (np.asarray(p2) + np.asarray(e_tilde)) / mu2
    dim = len(v) // len(weights) if dim is None else dim
    blocks = v.reshape(-1, dim)
    if mode == "component":
        radius = (epsilon / weights)[:, None]
        return np.clip(blocks, -radius, radius).ravel()
    norm = _row_norms(blocks)
    idx = np.flatnonzero(weights * norm > epsilon)
    if len(idx) == 0:
        return v
    y = blocks.copy()
    sub = y[idx] * (epsilon / (weights[idx] * norm[idx]))[:, None]
    # rounding can leave omega * |y| one ulp above epsilon
    over = weights[idx] * _row_norms(sub) > epsilon
    while np.any(over):
        sub[over] *= np.nextafter(1.0, 0.0)
        over = weights[idx] * _row_norms(sub) > epsilon
    y[idx] = sub
    return y.ravel()


def soft_threshold(v, t):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def zstep(currents, p1, mu1: float, alpha: float, beta: float) -> np.ndarray:
    """Elastic-net proximal step.

    Exact minimizer of
    ``alpha z^2 + beta |z| + mu1/2 (z - I)^2 - p1 (z - I)`` per coordinate:
    ``soft(mu1 I + p1, beta) / (mu1 + 2 alpha)``.
    """
    return soft_threshold(mu1 * np.asarray(currents, dtype=float) + np.asarray(p1, dtype=float), beta) / (mu1 + 2 * alpha)


def zstep_subproblem(z, currents, p1, mu1, alpha, beta):
    """Value of the scalar z-subproblem minimized by :func:`zstep`."""
    return alpha * z ** 2 + beta * np.abs(z) + 0.5 * mu1 * (z - currents) ** 2 - p1 * (z - currents)


def dual_update(p1, p2, currents, z, BI, y, mu1: float, mu2: float):
    return p1 + mu1 * (currents - z), p2 + mu2 * (BI - y)


def _polish(B, currents, weights, epsilon, dim, mode):
    """Scale currents down onto the feasible set if the final iterate overshoots."""
    worst = block_norms(B @ currents, weights, dim, mode).max(initial=0.0)
    if worst <= epsilon:
        return currents, 1.0
    s = epsilon / worst
    scaled = currents * s
    while block_norms(B @ scaled, weights, dim, mode).max() > epsilon:
        s = np.nextafter(s, 0.0)
        scaled = currents * s
    return scaled, float(s)


def run_admm(B, params: AdmmParams, weights, e_tilde, init: AdmmState | None = None,
             reference_index: int = -1, polish: bool = True, callback=None) -> OptResult:
    """Iterate current, state, sparsity and dual updates until the current step stalls.

    Stops once at least three iterations ran and ``||I^k - I^{k-1}||_2 <= tol``,
    or at ``max_iter`` with ``converged=False``.
    """
    B = np.asarray(B, dtype=float)
    weights = np.asarray(weights, dtype=float)
    e_tilde = np.asarray(e_tilde, dtype=float)
    if not np.all(np.isfinite(B)):
        raise ValueError("transfer matrix contains non-finite entries")
    n_field, n_cur = B.shape
    if n_field % len(weights):
        raise ValueError("weights do not match the transfer matrix")
    if np.any(weights <= 0):
        raise ValueError("weights must be strictly positive")
    if e_tilde.shape != (n_field,):
        raise ValueError("target field does not match the transfer matrix")
    dim = n_field // len(weights)
    p = params
    state = init if init is not None else AdmmState.zeros(n_cur, n_field)
    cur, y, z, p1, p2 = (np.array(a, dtype=float) for a in (state.currents, state.y, state.z, state.p1, state.p2))
    factor = factor_istep(B, p.mu1, p.mu2)
    history = []
    k = 0
    converged = False
    while k < p.max_iter:
        prev = cur
        cur = istep(B, z, p1, y, p2, p.mu1, p.mu2, factor=factor)
        BI = B @ cur
        y = ystep(BI, p2, e_tilde, p.mu2, weights, p.epsilon, dim, p.state_constraint)
        z = zstep(cur, p1, p.mu1, p.alpha, p.beta)
        p1, p2 = dual_update(p1, p2, cur, z, BI, y, p.mu1, p.mu2)
        k += 1
        step = float(np.linalg.norm(cur - prev))
        obj = float(-BI @ e_tilde + p.alpha * cur @ cur + p.beta * np.abs(cur).sum())
        history.append((k, obj, float(np.linalg.norm(cur - z)), float(np.linalg.norm(BI - y)), step))
        if callback is not None:
            callback(AdmmState(cur, y, z, p1, p2, k))
        if k >= 3 and step <= p.tol:
            converged = True
            break

    scale = 1.0
    if polish:
        cur, scale = _polish(B, cur, weights, p.epsilon, dim, p.state_constraint)
    protocol = full_protocol(cur, reference_index)
    tv = float(np.abs(protocol).sum())
    delta = 4 * p.epsilon / tv if tv > 0 else None
    return OptResult(
        currents=cur,
        protocol=protocol,
        delta=delta,
        n_iter=k,
        total_variation=tv,
        converged=converged,
        objective=objective(B, e_tilde, cur, p.alpha, p.beta),
        epsilon=p.epsilon,
        history=np.array(history).reshape(-1, 5),
        feasibility_scale=scale,
    )


def rescale_to_safety(currents, epsilon: float, reference_index: int = -1, budget: float = 4.0):
    """Scale a protocol to total absolute current ``budget``.

    Returns the rescaled reduced currents and the implied state bound
    ``budget * epsilon / ||I||``.
    """
    currents = np.asarray(currents, dtype=float)
    tv = total_variation(currents, reference_index)
    if tv == 0:
        raise ValueError("cannot rescale null protocol")
    return currents * (budget / tv), budget * epsilon / tv


def reference_solve(B, params: AdmmParams, weights, e_tilde, reference_index: int = -1) -> OptResult:
    """Independent small-instance solver used to check :func:`run_admm`.

    Splits ``I = u - v`` with ``u, v >= 0`` and squares the block constraints,
    giving a smooth convex program handed to SLSQP.
    """
    B = np.asarray(B, dtype=float)
    weights = np.asarray(weights, dtype=float)
    e_tilde = np.asarray(e_tilde, dtype=float)
    n_field, n = B.shape
    if n > 8 or len(weights) > 64:
        raise ValueError("reference_solve is limited to S-1 <= 8 and N <= 64")
    dim = n_field // len(weights)
    p = params
    c = B.T @ e_tilde
    if not np.any(B):
        zero = np.zeros(n)
        return OptResult(zero, full_protocol(zero, reference_index), None, 0, 0.0, True, 0.0, p.epsilon)

    def fun(x):
        u, v = x[:n], x[n:]
        cur = u - v
        val = -c @ cur + p.alpha * cur @ cur + p.beta * x.sum()
        g = -c + 2 * p.alpha * cur
        return val, np.concatenate([g + p.beta, -g + p.beta])

    blocks = B.reshape(len(weights), dim, n)
    # constraint rows scaled by 1/eps^2 to keep them O(1)
    if p.state_constraint == "vector":
        def con(x):
            j = np.einsum("idn,n->id", blocks, x[:n] - x[n:])
            return 1.0 - (weights ** 2) * np.einsum("id,id->i", j, j) / p.epsilon ** 2

        def con_jac(x):
            j = np.einsum("idn,n->id", blocks, x[:n] - x[n:])
            gi = -2 * (weights ** 2)[:, None] * np.einsum("id,idn->in", j, blocks) / p.epsilon ** 2
            return np.hstack([gi, -gi])
    else:
        rows = B * np.repeat(weights, dim)[:, None] / p.epsilon

        def con(x):
            j = rows @ (x[:n] - x[n:])
            return np.concatenate([1.0 - j, 1.0 + j])

        def con_jac(x):
            return np.vstack([np.hstack([-rows, rows]), np.hstack([rows, -rows])])

    best = None
    for x0 in (np.zeros(2 * n), np.concatenate([np.maximum(c, 0), np.maximum(-c, 0)]) * 1e-6):
        res = minimize(fun, x0, jac=True, method="SLSQP",
                       bounds=[(0, None)] * (2 * n),
                       constraints=[{"type": "ineq", "fun": con, "jac": con_jac}],
                       options={"maxiter": 2000, "ftol": 1e-15})
        if best is None or res.fun < best.fun:
            best = res
    cur = best.x[:n] - best.x[n:]
    cur, _ = _polish(B, cur, weights, p.epsilon, dim, p.state_constraint)
    protocol = full_protocol(cur, reference_index)
    tv = float(np.abs(protocol).sum())
    return OptResult(
        currents=cur,
        protocol=protocol,
        delta=4 * p.epsilon / tv if tv > 0 else None,
        n_iter=int(best.nit),
        total_variation=tv,
        converged=bool(best.success),
        objective=objective(B, e_tilde, cur, p.alpha, p.beta),
        epsilon=p.epsilon,
    )


class CurrentOptimizer(BaseEstimator):
    """Estimator wrapper around :func:`run_admm`.

    ``fit(B, target_field, weights)`` optimizes the reduced electrode
    currents; ``predict(B)`` returns the resulting current-density vector.
    After fitting, ``rescaled_currents_`` and ``delta_`` hold the protocol
    scaled to the safety budget.
    """

    def __init__(self, alpha=0.0, beta=0.001, epsilon=0.001, mu1=1.0, mu2=1.0, tol=1e-6,
                 max_iter=10_000, state_constraint="vector", polish=True, reference_index=-1):
        self.alpha = alpha
        self.beta = beta
        self.epsilon = epsilon
        self.mu1 = mu1
        self.mu2 = mu2
        self.tol = tol
        self.max_iter = max_iter
        self.state_constraint = state_constraint
        self.polish = polish
        self.reference_index = reference_index

    def _params(self) -> AdmmParams:
        return AdmmParams(mu1=self.mu1, mu2=self.mu2, alpha=self.alpha, beta=self.beta,
                          epsilon=self.epsilon, tol=self.tol, max_iter=self.max_iter,
                          state_constraint=self.state_constraint)

    def fit(self, B, target_field, weights, init: AdmmState | None = None):
        B = check_array(B)
        target_field = check_array(target_field, ensure_2d=False)
        weights = check_array(weights, ensure_2d=False)
        self.result_ = run_admm(B, self._params(), weights, target_field, init=init,
                                reference_index=self.reference_index, polish=self.polish)
        self.currents_ = self.result_.currents
        self.protocol_ = self.result_.protocol
        self.n_iter_ = self.result_.n_iter
        self.converged_ = self.result_.converged
        self.total_variation_ = self.result_.total_variation
        self.n_features_in_ = B.shape[1]
        if self.total_variation_ > 0:
            self.rescaled_currents_, self.delta_ = rescale_to_safety(
                self.currents_, self.epsilon, self.reference_index)
        else:
            self.rescaled_currents_, self.delta_ = np.zeros_like(self.currents_), None
        return self

    def predict(self, B, rescaled: bool = False):
        check_is_fitted(self, "currents_")
        B = check_array(B)
        return B @ (self.rescaled_currents_ if rescaled else self.currents_)
