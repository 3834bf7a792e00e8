"""Linear map from features to the embedding space.

Minimizes ``||Z - X W||_F^2 + alpha ||W||_F^2`` with L-BFGS under a strong
Wolfe line search. Nothing here depends on the number of labels: the target
``Z`` already lives in the low-dimensional embedding space.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

log = logging.getLogger(__name__)

_ROUNDOFF = 1e3 * np.finfo(np.float64).eps


class LineSearchError(RuntimeError):
    """The strong Wolfe search found no acceptable step within its trial budget."""


class NonFiniteError(FloatingPointError):
    """Objective or gradient evaluated to inf/nan."""


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_trials: int = 50

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.memory < 1:
            raise ValueError(f"memory must be >= 1, got {self.memory}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.grad_tol < 0:
            raise ValueError(f"grad_tol must be >= 0, got {self.grad_tol}")


@dataclass(frozen=True)
class StepRecord:
    """One accepted step, with everything needed to re-check the Wolfe conditions."""

    iteration: int
    f_old: float
    f_new: float
    slope_old: float  # g(x)^T d
    slope_new: float  # g(x + beta d)^T d
    beta: float
    grad_norm: float


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    converged: bool
    n_evals: int
    steps: list[StepRecord] = field(default_factory=list)
    stalled: bool = False


@dataclass
class RegressionModel:
    W: np.ndarray
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not np.all(np.isfinite(self.W)):
            raise NonFiniteError("regression weights contain non-finite entries")

    def predict(self, X) -> np.ndarray:
        return np.asarray(X @ self.W)


def _check_shapes(W, X, Z) -> None:
    n, q = X.shape
    if Z.shape[0] != n:
        raise ValueError(f"X has {n} rows but Z has {Z.shape[0]}")
    if W.shape != (q, Z.shape[1]):
        raise ValueError(f"W must have shape {(q, Z.shape[1])}, got {W.shape}")


def ridge_objective(W, X, Z, alpha: float) -> float:
    W = np.asarray(W, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    _check_shapes(W, X, Z)
    R = Z - X @ W
    return float(np.sum(R * R) + alpha * np.sum(W * W))


def ridge_gradient(W, X, Z, alpha: float) -> np.ndarray:
    """``2 X^T (X W - Z) + 2 alpha W``."""
    W = np.asarray(W, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    _check_shapes(W, X, Z)
    return 2.0 * np.asarray(X.T @ (X @ W - Z)) + 2.0 * alpha * W


def closed_form_ridge(X, Z, alpha: float) -> np.ndarray:
    """Exact minimizer ``(X^T X + alpha I)^{-1} X^T Z``.

    Raises SingularSystemError when ``alpha == 0`` and ``X`` is rank-deficient.
    """
    Z = np.asarray(Z, dtype=np.float64)
    G = X.T @ X
    G = G.toarray() if sp.issparse(G) else np.asarray(G, dtype=np.float64)
    q = G.shape[0]
    A = G + alpha * np.eye(q)
    B = np.asarray(X.T @ Z)
    if alpha <= 0 and np.linalg.matrix_rank(A) < q:
        raise SingularSystemError("X^T X is singular and alpha == 0")
    return scipy.linalg.solve(A, B, assume_a="pos" if alpha > 0 else "sym")


def _two_loop(g: np.ndarray, history) -> np.ndarray:
    """Apply the L-BFGS inverse-Hessian approximation to ``g``."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if history:
        s, y, _ = history[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_min(a0, f0, d0, a1, f1, d1):
    """Minimizer of the cubic matching values and slopes at a0 and a1, or None."""
    if a0 == a1:
        return None
    d1_ = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1)
    rad = d1_ * d1_ - d0 * d1
    if rad < 0:
        return None
    d2 = np.copysign(np.sqrt(rad), a1 - a0)
    denom = d1 - d0 + 2.0 * d2
    if denom == 0:
        return None
    return a1 - (a1 - a0) * (d1 + d2 - d1_) / denom


def strong_wolfe_search(phi: Callable[[float], tuple[float, float, np.ndarray]],
                        f0: float, slope0: float, beta0: float, c1: float, c2: float,
                        max_trials: int = 50):
    """Bracketing/zoom line search for a step meeting the strong Wolfe conditions.

    ``phi(beta)`` returns ``(f, slope, grad)`` at ``x + beta d``. Returns
    ``(beta, f, slope, grad, trials)``.
    """
    trials = 0

    def evaluate(beta):
        nonlocal trials
        trials += 1
        f, slope, g = phi(beta)
        if not (np.isfinite(f) and np.isfinite(slope)):
            f, slope = np.inf, np.nan
        return f, slope, g

    def armijo_ok(beta, f):
        return f <= f0 + c1 * beta * slope0

    def curvature_ok(slope):
        return abs(slope) <= c2 * abs(slope0)

    def zoom(lo, f_lo, s_lo, hi, f_hi, s_hi):
        while trials < max_trials:
            width = hi - lo
            if abs(width) <= np.finfo(np.float64).eps * max(1.0, abs(lo)):
                # bracket has collapsed
                return None
            cand = None
            if np.isfinite(f_hi) and np.isfinite(s_hi):
                cand = _cubic_min(lo, f_lo, s_lo, hi, f_hi, s_hi)
            lo_b, hi_b = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if cand is None or not lo_b <= cand <= hi_b:
                cand = lo + 0.5 * width
            f, s, g = evaluate(cand)
            if not armijo_ok(cand, f) or f >= f_lo:
                hi, f_hi, s_hi = cand, f, s
            else:
                if curvature_ok(s):
                    return cand, f, s, g
                if s * (hi - lo) >= 0:
                    hi, f_hi, s_hi = lo, f_lo, s_lo
                lo, f_lo, s_lo = cand, f, s
        return None

    prev, f_prev, s_prev = 0.0, f0, slope0
    beta = beta0
    first = True
    while trials < max_trials:
        f, s, g = evaluate(beta)
        if not armijo_ok(beta, f) or (not first and f >= f_prev):
            found = zoom(prev, f_prev, s_prev, beta, f, s)
            break
        if curvature_ok(s):
            found = (beta, f, s, g)
            break
        if s >= 0:
            found = zoom(beta, f, s, prev, f_prev, s_prev)
            break
        prev, f_prev, s_prev = beta, f, s
        beta *= 2.0
        first = False
    else:
        found = None
    if found is None:
        raise LineSearchError(
            f"no strong Wolfe step within {max_trials} trials "
            f"(f0={f0:.6g}, slope0={slope0:.3g}, last beta={beta:.3g})"
        )
    return (*found, trials)


def lbfgs_minimize(objective: Callable, gradient: Callable, W0, cfg: LbfgsConfig = LbfgsConfig()) -> LbfgsResult:
    """Minimize ``objective`` from ``W0`` with limited-memory BFGS.

    ``objective`` and ``gradient`` take an array shaped like ``W0``. The
    search direction comes from the two-loop recursion over the last
    ``cfg.memory`` (step, gradient change) pairs; every accepted step length
    satisfies the strong Wolfe conditions with ``(cfg.c1, cfg.c2)`` and is
    recorded in ``result.steps``.
    """
    W0 = np.asarray(W0, dtype=np.float64)
    shape = W0.shape
    x = W0.ravel().copy()
    n_evals = 0

    def fg(v):
        nonlocal n_evals
        n_evals += 1
        V = v.reshape(shape)
        return float(objective(V)), np.asarray(gradient(V), dtype=np.float64).ravel()

    f, g = fg(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NonFiniteError(f"non-finite objective or gradient at the starting point (f={f})")

    history: deque = deque(maxlen=cfg.memory)
    steps: list[StepRecord] = []
    gnorm = float(np.linalg.norm(g))
    converged = gnorm <= cfg.grad_tol
    stalled = False
    it = 0
    while not converged and it < cfg.max_iters:
        d = -_two_loop(g, history)
        slope = float(g @ d)
        if not slope < 0:
            history.clear()
            d = -g
            slope = -float(g @ g)
        beta0 = 1.0 if history else min(1.0, 1.0 / gnorm)

        def phi(beta):
            fb, gb = fg(x + beta * d)
            return fb, float(gb @ d), gb

        try:
            beta, f_new, slope_new, g_new, _ = strong_wolfe_search(
                phi, f, slope, beta0, cfg.c1, cfg.c2, cfg.max_ls_trials)
        except LineSearchError:
            if history:
                # retry once along steepest descent
                history.clear()
                continue
            if abs(slope) <= _ROUNDOFF * max(1.0, abs(f)):
                # predicted decrease is below what f can resolve in floating point
                stalled = True
                log.debug("line search stalled at roundoff level: f=%.10e |g|=%.3e", f, gnorm)
                break
            raise
        if not np.all(np.isfinite(g_new)):
            raise NonFiniteError(f"non-finite gradient at iteration {it}")
        s = beta * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y):
            history.append((s, y, 1.0 / sy))
        steps.append(StepRecord(it, f, f_new, slope, slope_new, beta, gnorm))
        x = x + s
        f, g = f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
        log.debug("iter %d | %.10e | %.4e | step %.4e", it, f, gnorm, beta)
        converged = gnorm <= cfg.grad_tol
    return LbfgsResult(x.reshape(shape), f, gnorm, it, converged, n_evals, steps, stalled)


def train(X, Z, alpha: float = 1.0, cfg: LbfgsConfig = LbfgsConfig()) -> RegressionModel:
    """Fit ``W`` from a zero start; ``X`` rows are expected L2-normalized."""
    Z = np.asarray(Z, dtype=np.float64)
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    W0 = np.zeros((X.shape[1], Z.shape[1]))
    res = lbfgs_minimize(
        lambda W: ridge_objective(W, X, Z, alpha),
        lambda W: ridge_gradient(W, X, Z, alpha),
        W0,
        cfg,
    )
    if not (res.converged or res.stalled):
        log.warning("L-BFGS stopped after %d iterations with |g| = %.3e", res.n_iter, res.grad_norm)
    return RegressionModel(res.x, alpha)
