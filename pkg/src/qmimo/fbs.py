"""Forward-backward splitting with spectral steps and non-monotone backtracking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from qmimo.ofdm import TonePlan, freq_to_taps, taps_to_freq

__all__ = ["FbsError", "FbsProblem", "FbsReport", "solve", "prox_time_support", "prox_pin_pilots"]


class FbsError(FloatingPointError):
    pass


@dataclass
class FbsProblem:
    """One convex solve ``min h(Ax) + g(x)``.

    Attributes
    ----------
    smooth : callable
        ``x -> (h(Ax), A^H grad h(Ax))``. The value is needed by the
        backtracking test. For complex ``x`` the gradient is
        ``d/dRe + i d/dIm``.
    prox : callable
        ``(z, tau) -> prox_g(z, tau)``.
    x0 : ndarray
        Starting point.
    tol : float
        Stop once ``||x_{k+1} - x_k|| / max(1, ||x_k||) <= tol``.
    max_iter : int
        Iteration budget.
    step0 : float, optional
        Initial step. Defaults to ``10 / L`` with ``L`` a secant estimate of
        the gradient Lipschitz constant at ``x0``.
    window : int
        Length of the non-monotone backtracking window.
    shrink : float
        Backtracking step reduction factor.
    """

    smooth: Callable[[np.ndarray], tuple]
    prox: Callable[[np.ndarray, float], np.ndarray]
    x0: np.ndarray
    tol: float = 1e-6
    max_iter: int = 500
    step0: Optional[float] = None
    window: int = 10
    shrink: float = 0.5

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class FbsReport:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    objective: list = field(default_factory=list)
    backtracks: int = 0
    # accepted steps that exhausted the backtracking budget
    unsafe_steps: int = 0


def _dot(a, b) -> float:
    return float(np.vdot(a, b).real)


def _norm(a) -> float:
    return float(np.linalg.norm(np.ravel(a)))


def _check(x, f, g, it, tau):
    if not np.isfinite(f) or not np.all(np.isfinite(g)) or not np.all(np.isfinite(x)):
        raise FbsError(f"non-finite iterate at iteration {it} (step {tau:.3e}, objective {f!r})")


def _initial_step(problem: FbsProblem, x, g) -> float:
    rng = np.random.default_rng(0)
    delta = rng.standard_normal(np.shape(x))
    if np.iscomplexobj(x):
        delta = delta + 1j * rng.standard_normal(np.shape(x))
    delta *= 1e-3 * max(1.0, _norm(x)) / _norm(delta)
    _, g2 = problem.smooth(x + delta)
    lip = _norm(g2 - g) / _norm(delta)
    return 10.0 / lip if lip > 0 and np.isfinite(lip) else 1.0


def solve(problem: FbsProblem) -> FbsReport:
    """Run FBS ``x <- prox(x - tau grad, tau)`` until the relative iterate change is below ``tol``."""
    x = np.array(problem.x0, copy=True)
    f, g = problem.smooth(x)
    _check(x, f, g, 0, np.nan)
    tau = problem.step0 if problem.step0 is not None else _initial_step(problem, x, g)
    history = [f]
    backtracks = unsafe = 0
    residual = np.inf
    it = 0
    for it in range(1, problem.max_iter + 1):
        m = max(history[-problem.window :])
        for attempt in range(60):
            x1 = problem.prox(x - tau * g, tau)
            dx = x1 - x
            f1, g1 = problem.smooth(x1)
            _check(x1, f1, g1, it, tau)
            bound = m + _dot(dx, g) + _dot(dx, dx) / (2 * tau)
            if f1 <= bound + 1e-12 * max(1.0, abs(m)):
                break
            tau *= problem.shrink
            backtracks += 1
        else:
            unsafe += 1

        residual = _norm(dx) / max(1.0, _norm(x))

        # spectral (Barzilai-Borwein) step with the adaptive BB1/BB2 switch
        dg = g1 - g
        sy = _dot(dx, dg)
        ss = _dot(dx, dx)
        yy = _dot(dg, dg)
        if sy > 0 and yy > 0:
            tau_s = ss / sy
            tau_m = sy / yy
            tau_next = tau_m if 2 * tau_m > tau_s else tau_s - 0.5 * tau_m
        else:
            tau_next = 0.0
        tau = tau_next if tau_next > 0 and np.isfinite(tau_next) else tau * 1.5

        x, f, g = x1, f1, g1
        history.append(f)
        if residual <= problem.tol:
            return FbsReport(x, it, residual, True, history, backtracks, unsafe)
    return FbsReport(x, it, residual, False, history, backtracks, unsafe)


def prox_time_support(h_freq, p: int, tau: float = 1.0) -> np.ndarray:
    """Project frequency responses (last axis = tones) onto channels with ``p`` taps."""
    taps = freq_to_taps(h_freq)
    if not 0 < p < taps.shape[-1]:
        raise ValueError("need 0 < p < W")
    taps[..., p:] = 0
    return taps_to_freq(taps)


def prox_pin_pilots(s_freq, pilots, plan: TonePlan, tau: float = 1.0) -> np.ndarray:
    """Pin pilot tones (axis 1) to ``pilots`` and zero the guard tones."""
    out = np.array(s_freq, copy=True)
    out[:, plan.pilot] = pilots
    out[:, plan.guard] = 0
    return out
