# src/optim/lbfgs.py
"""
Limited-memory BFGS with a strong-Wolfe line search.

Two-loop recursion over the last `memory` (s, y) pairs; the line search
brackets then zooms with safeguarded cubic interpolation. Nothing here
raises on numerical trouble: a non-finite objective value ends the run
with status "nonfinite" and the best iterate seen so far.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Optional, Tuple

import numpy as np

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iters"
STATUS_LINE_SEARCH = "line_search_failed"
STATUS_NONFINITE = "nonfinite"


@dataclass(frozen=True)
class LbfgsSettings:
    memory: int = 10
    max_inner_iters: int = 200
    grad_tol: float = 1e-5
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25

    def validate(self) -> None:
        if self.memory < 1:
            raise ValueError(f"L-BFGS memory must be >= 1, got {self.memory}")
        if self.max_inner_iters < 0:
            raise ValueError(f"max_inner_iters must be >= 0, got {self.max_inner_iters}")
        if self.grad_tol <= 0:
            raise ValueError(f"grad_tol must be > 0, got {self.grad_tol}")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError(f"Wolfe constants need 0 < c1 < c2 < 1, got {self.c1}, {self.c2}")


@dataclass
class LbfgsResult:
    x: np.ndarray
    loss: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    status: str
    history: List[float] = field(default_factory=list)  # loss at x0, then every accepted step
    message: str = ""


class _NonFinite(RuntimeError):
    pass


class _Counter:
    """Objective wrapper: counts calls, rejects non-finite output."""

    def __init__(self, objective: Objective):
        self.objective = objective
        self.calls = 0

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        self.calls += 1
        f, g = self.objective(x)
        f = float(f)
        g = np.asarray(g, dtype=np.float64).ravel()
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            raise _NonFinite(f"objective returned non-finite value at evaluation {self.calls}")
        return f, g


def _cubic_interpolate(x1, f1, g1, x2, f2, g2, bounds=None) -> float:
    """Minimiser of the cubic through (x1, f1, g1), (x2, f2, g2), clamped to bounds."""
    if bounds is not None:
        lo, hi = bounds
    else:
        lo, hi = (x1, x2) if x1 <= x2 else (x2, x1)

    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2_square = d1 * d1 - g1 * g2
    if d2_square >= 0.0:
        d2 = math.sqrt(d2_square)
        if x1 <= x2:
            pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        else:
            pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        if math.isfinite(pos):
            return min(max(pos, lo), hi)
    return (lo + hi) / 2.0


@dataclass
class _LineSearchOutcome:
    step: float
    loss: float
    grad: np.ndarray
    satisfied: bool


def strong_wolfe(
    fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x: np.ndarray,
    direction: np.ndarray,
    loss0: float,
    grad0: np.ndarray,
    step: float,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 25,
    tolerance_change: float = 1e-12,
) -> _LineSearchOutcome:
    """
    Find t with
        f(x + t d) <= f(x) + c1 t g.d      (sufficient decrease)
        |g(x + t d).d| <= c2 |g.d|          (curvature)
    Returns the best bracket end when the budget runs out.
    """
    gtd0 = float(grad0 @ direction)
    d_norm = float(np.max(np.abs(direction)))

    def phi(t: float):
        f, g = fn(x + t * direction)
        return f, g, float(g @ direction)

    t = step
    f_new, g_new, gtd_new = phi(t)
    evals = 1
    t_prev, f_prev, g_prev, gtd_prev = 0.0, loss0, grad0, gtd0

    bracket: List[float] = []
    bracket_f: List[float] = []
    bracket_g: List[np.ndarray] = []
    bracket_gtd: List[float] = []
    done = False

    # ---------- bracketing ----------
    while evals <= max_evals:
        if f_new > loss0 + c1 * t * gtd0 or (evals > 1 and f_new >= f_prev):
            bracket = [t_prev, t]
            bracket_f = [f_prev, f_new]
            bracket_g = [g_prev, g_new]
            bracket_gtd = [gtd_prev, gtd_new]
            break
        if abs(gtd_new) <= -c2 * gtd0:
            bracket, bracket_f, bracket_g = [t], [f_new], [g_new]
            done = True
            break
        if gtd_new >= 0:
            bracket = [t_prev, t]
            bracket_f = [f_prev, f_new]
            bracket_g = [g_prev, g_new]
            bracket_gtd = [gtd_prev, gtd_new]
            break

        min_step = t + 0.01 * (t - t_prev)
        max_step = t * 10.0
        next_t = _cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, bounds=(min_step, max_step))
        t_prev, f_prev, g_prev, gtd_prev = t, f_new, g_new, gtd_new
        t = next_t
        if evals == max_evals:
            break
        f_new, g_new, gtd_new = phi(t)
        evals += 1

    if not bracket:
        # budget spent while still extrapolating
        if f_prev < loss0:
            return _LineSearchOutcome(t_prev, f_prev, g_prev, False)
        return _LineSearchOutcome(0.0, loss0, grad0, False)

    # ---------- zoom ----------
    insufficient_progress = False
    low, high = (0, 1) if bracket_f[0] <= bracket_f[-1] else (1, 0)

    while not done and evals < max_evals:
        if abs(bracket[1] - bracket[0]) * d_norm < tolerance_change:
            break

        t = _cubic_interpolate(
            bracket[0], bracket_f[0], bracket_gtd[0],
            bracket[1], bracket_f[1], bracket_gtd[1],
        )

        # keep the trial away from the bracket ends
        eps = 0.1 * (max(bracket) - min(bracket))
        if min(max(bracket) - t, t - min(bracket)) < eps:
            if insufficient_progress or t >= max(bracket) or t <= min(bracket):
                if abs(t - max(bracket)) < abs(t - min(bracket)):
                    t = max(bracket) - eps
                else:
                    t = min(bracket) + eps
                insufficient_progress = False
            else:
                insufficient_progress = True
        else:
            insufficient_progress = False

        f_new, g_new, gtd_new = phi(t)
        evals += 1

        if f_new > loss0 + c1 * t * gtd0 or f_new >= bracket_f[low]:
            bracket[high], bracket_f[high], bracket_g[high], bracket_gtd[high] = t, f_new, g_new, gtd_new
            low, high = (0, 1) if bracket_f[0] <= bracket_f[1] else (1, 0)
        else:
            if abs(gtd_new) <= -c2 * gtd0:
                done = True
            elif gtd_new * (bracket[high] - bracket[low]) >= 0:
                bracket[high], bracket_f[high], bracket_g[high], bracket_gtd[high] = (
                    bracket[low], bracket_f[low], bracket_g[low], bracket_gtd[low],
                )
            bracket[low], bracket_f[low], bracket_g[low], bracket_gtd[low] = t, f_new, g_new, gtd_new

    if len(bracket) == 1:
        return _LineSearchOutcome(bracket[0], bracket_f[0], bracket_g[0], True)
    return _LineSearchOutcome(bracket[low], bracket_f[low], bracket_g[low], done)


def _two_loop(grad: np.ndarray, s_hist: Deque[np.ndarray], y_hist: Deque[np.ndarray], rho_hist: Deque[float]) -> np.ndarray:
    q = -grad.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def lbfgs_minimize(
    objective: Objective,
    x0: np.ndarray,
    settings: Optional[LbfgsSettings] = None,
    *,
    verbose: bool = False,
) -> LbfgsResult:
    """
    Minimise a smooth objective returning (loss, grad).

    Terminates on ||grad||_inf <= grad_tol, max_inner_iters, line-search
    failure, or a non-finite evaluation. Accepted-step losses never increase.

    Args:
        objective: x (flat float64) -> (loss, gradient like x).
        x0: starting point (flattened internally).
        settings: memory, iteration budget and Wolfe constants.

    Returns:
        LbfgsResult with the best iterate, its loss/grad and the loss history.
    """
    settings = settings or LbfgsSettings()
    settings.validate()

    fn = _Counter(objective)
    shape = np.shape(x0)
    x = np.array(x0, dtype=np.float64).ravel()

    try:
        f, g = fn(x)
    except _NonFinite as exc:
        return LbfgsResult(x.reshape(shape), float("nan"), np.full(x.size, np.nan).reshape(shape),
                           0, fn.calls, STATUS_NONFINITE, [], str(exc))

    history = [f]
    s_hist: Deque[np.ndarray] = deque(maxlen=settings.memory)
    y_hist: Deque[np.ndarray] = deque(maxlen=settings.memory)
    rho_hist: Deque[float] = deque(maxlen=settings.memory)

    status = STATUS_MAX_ITERS
    message = ""
    iterations = 0

    while True:
        if float(np.max(np.abs(g), initial=0.0)) <= settings.grad_tol:
            status = STATUS_CONVERGED
            break
        if iterations >= settings.max_inner_iters:
            status = STATUS_MAX_ITERS
            break

        d = _two_loop(g, s_hist, y_hist, rho_hist)
        gtd = float(g @ d)
        if not gtd < 0.0:
            # memory produced an ascent direction; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            d = -g
            gtd = float(g @ d)

        step = min(1.0, 1.0 / float(np.sum(np.abs(g)))) if not s_hist else 1.0

        try:
            ls = strong_wolfe(fn, x, d, f, g, step, settings.c1, settings.c2, settings.max_line_search)
        except _NonFinite as exc:
            status = STATUS_NONFINITE
            message = str(exc)
            break

        if ls.step <= 0.0 or not ls.loss < f:
            if ls.step > 0.0 and ls.loss == f and ls.satisfied:
                pass
            else:
                status = STATUS_LINE_SEARCH
                message = f"no decrease along the search direction at iteration {iterations}"
                break

        s = ls.step * d
        y = ls.grad - g
        sy = float(s @ y)
        if sy > 1e-10 * float(y @ y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)

        x = x + s
        f, g = ls.loss, ls.grad
        history.append(f)
        iterations += 1

        if verbose:
            print(f"  lbfgs iter {iterations}: loss={f:.6e} |g|inf={np.max(np.abs(g)):.3e}")

        if ls.step * float(np.max(np.abs(d))) == 0.0:
            status = STATUS_LINE_SEARCH
            message = "step vanished"
            break

    return LbfgsResult(
        x=x.reshape(shape),
        loss=f,
        grad=g.reshape(shape),
        iterations=iterations,
        evaluations=fn.calls,
        status=status,
        history=history,
        message=message,
    )
