"""Adam and L-BFGS (two-loop recursion, strong-Wolfe line search) on flat vectors."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LossGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new params and the updated state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {params.shape}")
    if not np.isfinite(grad).all():
        raise NonFiniteGradient("non-finite gradient; Adam step rejected")
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    step = state.step + 1
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m, v, step, state.lr, b1, b2, state.eps)


# -- line search ------------------------------------------------------------------


@dataclass
class LineSearchResult:
    alpha: float
    f: float
    g: np.ndarray
    n_evals: int
    success: bool


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic through (a, fa, da), (b, fb, db), or None."""
    if a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    x = b - (b - a) * (db + d2 - d1) / denom
    return x if np.isfinite(x) else None


def strong_wolfe(
    fun: LossGrad,
    x: np.ndarray,
    f0: float,
    g0: np.ndarray,
    d: np.ndarray,
    alpha0: float = 1.0,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 25,
) -> LineSearchResult:
    """Bracketing + zoom search for a step meeting the strong Wolfe conditions.

    If the evaluation budget runs out, the best sufficient-decrease point seen
    is returned with ``success=False``; if there is none, alpha is 0.
    """
    dphi0 = float(g0 @ d)
    if not dphi0 < 0:
        return LineSearchResult(0.0, f0, g0, 0, False)
    evals = 0
    best = (0.0, f0, g0)

    def phi(alpha):
        nonlocal evals, best
        evals += 1
        f, g = fun(x + alpha * d)
        f = float(f)
        if not np.isfinite(f) or not np.isfinite(g).all():
            return np.inf, g, np.inf
        if f < best[1] and f <= f0 + c1 * alpha * dphi0:
            best = (alpha, f, g)
        return f, g, float(g @ d)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while evals < max_evals:
            width = hi - lo
            trial = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi) if np.isfinite(f_hi) else None
            lo_edge, hi_edge = min(lo, hi), max(lo, hi)
            margin = 0.1 * abs(width)
            if trial is None or not (lo_edge + margin <= trial <= hi_edge - margin):
                trial = lo + 0.5 * width
            f, g, dphi = phi(trial)
            if f > f0 + c1 * trial * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = trial, f, dphi
            else:
                if abs(dphi) <= -c2 * dphi0:
                    return LineSearchResult(trial, f, g, evals, True)
                if dphi * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = trial, f, dphi
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = alpha0
    result = None
    for i in range(max_evals):
        f, g, dphi = phi(alpha)
        if f > f0 + c1 * alpha * dphi0 or (i > 0 and f >= f_prev):
            result = zoom(prev, f_prev, d_prev, alpha, f, dphi)
            break
        if abs(dphi) <= -c2 * dphi0:
            result = LineSearchResult(alpha, f, g, evals, True)
            break
        if dphi >= 0:
            result = zoom(alpha, f, dphi, prev, f_prev, d_prev)
            break
        prev, f_prev, d_prev = alpha, f, dphi
        alpha *= 2.0
        if evals >= max_evals:
            break
    if result is not None:
        return result
    a, f, g = best
    return LineSearchResult(a, f, g, evals, False)


# -- L-BFGS -----------------------------------------------------------------------


@dataclass
class LbfgsState:
    m_hist: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 25
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)
    f: float | None = None
    g: np.ndarray | None = None
    n_iter: int = 0
    n_evals: int = 0
    stalled: bool = False
    skipped_pairs: int = 0

    def reset_memory(self) -> None:
        self.s_hist.clear()
        self.y_hist.clear()

    def direction(self, g: np.ndarray) -> np.ndarray:
        """-H g by the two-loop recursion with the usual s'y / y'y initial scaling."""
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(self.s_hist), reversed(self.y_hist)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if self.s_hist:
            s, y = self.s_hist[-1], self.y_hist[-1]
            q *= (s @ y) / (y @ y)
        for (s, y), (rho, a) in zip(zip(self.s_hist, self.y_hist), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q


def lbfgs_step(state: LbfgsState, fun: LossGrad, params: np.ndarray) -> tuple[np.ndarray, LbfgsState]:
    """One outer L-BFGS iteration.

    Only loss-decreasing steps are accepted. When the line search cannot find
    one, params are returned unchanged with ``state.stalled`` set and the
    curvature memory cleared.
    """
    x = np.asarray(params, dtype=np.float64)
    if state.f is None or state.g is None:
        f, g = fun(x)
        state.f, state.g = float(f), np.asarray(g, dtype=np.float64)
        state.n_evals += 1
    g = state.g
    state.stalled = False
    if not np.any(g):
        return x, state
    d = state.direction(g)
    if not g @ d < 0:
        state.reset_memory()
        d = -g
    alpha0 = 1.0 if state.s_hist else min(1.0, 1.0 / np.linalg.norm(g))
    ls = strong_wolfe(fun, x, state.f, g, d, alpha0, state.c1, state.c2, state.max_ls_evals)
    state.n_evals += ls.n_evals
    state.n_iter += 1
    if ls.alpha == 0.0 or not ls.f < state.f:
        state.stalled = True
        state.reset_memory()
        return x, state
    x_new = x + ls.alpha * d
    s = x_new - x
    y = ls.g - g
    sy = s @ y
    if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y) and sy > 0:
        state.s_hist.append(s)
        state.y_hist.append(y)
        while len(state.s_hist) > state.m_hist:
            state.s_hist.popleft()
            state.y_hist.popleft()
    else:
        state.skipped_pairs += 1
    state.f, state.g = ls.f, np.asarray(ls.g, dtype=np.float64)
    return x_new, state


def lbfgs_state_arrays(state: LbfgsState) -> dict[str, np.ndarray]:
    """Arrays that let a checkpoint restore an L-BFGS state exactly."""
    n = 0 if state.g is None else state.g.size
    return {
        "lbfgs_s": np.array(list(state.s_hist)).reshape(-1, n),
        "lbfgs_y": np.array(list(state.y_hist)).reshape(-1, n),
        "lbfgs_g": np.zeros(0) if state.g is None else state.g,
        "lbfgs_scalars": np.array(
            [np.nan if state.f is None else state.f, state.n_iter, state.n_evals, state.skipped_pairs], dtype=np.float64
        ),
    }


def lbfgs_state_from_arrays(arrays: dict[str, np.ndarray], **config) -> LbfgsState:
    state = LbfgsState(**config)
    state.s_hist.extend(np.array(r) for r in arrays["lbfgs_s"])
    state.y_hist.extend(np.array(r) for r in arrays["lbfgs_y"])
    f, n_iter, n_evals, skipped = arrays["lbfgs_scalars"]
    state.f = None if np.isnan(f) else float(f)
    state.g = None if arrays["lbfgs_g"].size == 0 else np.array(arrays["lbfgs_g"])
    state.n_iter, state.n_evals, state.skipped_pairs = int(n_iter), int(n_evals), int(skipped)
    return state
