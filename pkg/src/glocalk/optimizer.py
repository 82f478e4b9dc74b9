"""Full-batch L-BFGS with a strong-Wolfe line search, plus the epoch loop.

An "epoch" is one call to :func:`minimize` with a small iteration budget,
warm-started from the previous epoch's point. Curvature memory is cleared
between epochs unless asked otherwise.
"""

import logging
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .numkit import ConfigurationError, NumericError

logger = logging.getLogger(__name__)


@dataclass
class LbfgsConfig:
    history: int = 10
    maxiter: int = 5
    grad_tol: float = 1e-5
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search_steps: int = 20

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ConfigurationError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.history < 1:
            raise ConfigurationError("history must be >= 1")
        if self.maxiter < 0:
            raise ConfigurationError("maxiter must be >= 0")


@dataclass
class LineSearchResult:
    step: float
    x: np.ndarray
    f: float
    g: np.ndarray
    direction: np.ndarray
    phi0: float
    dphi0: float
    dphi: float
    n_evals: int
    ok: bool
    fell_back: bool = False


class CurvatureMemory:
    """Ring buffer of ``(s, y)`` pairs; pairs with ``s.y <= 0`` are rejected."""

    def __init__(self, history):
        self.pairs = deque(maxlen=history)

    def __len__(self):
        return len(self.pairs)

    def clear(self):
        self.pairs.clear()

    def push(self, s, y):
        sy = float(s @ y)
        if sy <= 0.0 or not np.isfinite(sy):
            return False
        self.pairs.append((s, y, 1.0 / sy))
        return True

    def direction(self, g):
        """Two-loop recursion: ``-H g`` with ``H0 = (s.y / y.y) I`` from the newest pair."""
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * (s @ q)
            q -= a * y
            alphas.append(a)
        if self.pairs:
            s, y, rho = self.pairs[-1]
            q *= 1.0 / (rho * (y @ y))
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q


def _safe_eval(f_and_grad, x):
    try:
        f, g = f_and_grad(x)
    except NumericError:
        return np.inf, None
    f = float(f)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return np.inf, None
    return f, np.asarray(g, dtype=np.float64)


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic matching values and slopes at ``a`` and ``b``, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0.0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2.0 * d2
    if denom == 0.0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe_line_search(f_and_grad, x, direction, initial_step=1.0, f0=None, g0=None,
                             c1=1e-4, c2=0.9, max_steps=20, step_max=1e10):
    """Find a step satisfying the strong Wolfe conditions along ``direction``.

    Bracketing then zoom with safeguarded cubic interpolation. If
    ``direction`` is not a descent direction the steepest-descent direction
    is used instead. Non-finite trial values count as failing the sufficient
    decrease test. ``ok`` is False when ``max_steps`` evaluations did not
    produce an acceptable step; ``x``/``f``/``g`` then hold the best
    trial point seen (or the start point if none improved).
    """
    if f0 is None or g0 is None:
        f0, g0 = f_and_grad(x)
        f0 = float(f0)
    d = np.asarray(direction, dtype=np.float64)
    dphi0 = float(g0 @ d)
    fell_back = False
    if not dphi0 < 0.0:
        logger.warning("direction is not a descent direction (g.d = %g); using -g", dphi0)
        d = -g0
        dphi0 = float(g0 @ d)
        fell_back = True
        if not dphi0 < 0.0:
            return LineSearchResult(0.0, x, f0, g0, d, f0, dphi0, dphi0, 0, False, True)

    n_evals = 0
    best = (0.0, x, f0, g0, dphi0)

    def phi(alpha):
        nonlocal n_evals, best
        n_evals += 1
        xa = x + alpha * d
        fa, ga = _safe_eval(f_and_grad, xa)
        da = float(ga @ d) if ga is not None else np.nan
        if fa < best[2]:
            best = (alpha, xa, fa, ga, da)
        return xa, fa, ga, da

    def done(alpha, xa, fa, ga, da, ok=True):
        return LineSearchResult(alpha, xa, fa, ga, d, f0, dphi0, da, n_evals, ok, fell_back)

    def armijo(alpha, fa):
        return fa <= f0 + c1 * alpha * dphi0

    def curvature(da):
        return abs(da) <= -c2 * dphi0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while n_evals < max_steps:
            width = hi - lo
            alpha = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                alpha = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            lo_b, hi_b = sorted((lo + 0.01 * width, hi - 0.01 * width))
            if alpha is None or not lo_b <= alpha <= hi_b:
                alpha = 0.5 * (lo + hi)
            xa, fa, ga, da = phi(alpha)
            if not armijo(alpha, fa) or fa >= f_lo:
                hi, f_hi, d_hi = alpha, fa, da
            else:
                if curvature(da):
                    return done(alpha, xa, fa, ga, da)
                if da * (hi - lo) >= 0.0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = alpha, fa, da
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = float(initial_step)
    result = None
    while n_evals < max_steps:
        xa, fa, ga, da = phi(alpha)
        if not armijo(alpha, fa) or (n_evals > 1 and fa >= f_prev):
            result = zoom(a_prev, f_prev, d_prev, alpha, fa, da)
            break
        if curvature(da):
            result = done(alpha, xa, fa, ga, da)
            break
        if da >= 0.0:
            result = zoom(alpha, fa, da, a_prev, f_prev, d_prev)
            break
        a_prev, f_prev, d_prev = alpha, fa, da
        alpha = min(2.0 * alpha, step_max)

    if result is not None:
        return result
    step, xb, fb, gb, db = best
    return done(step, xb, fb, gb, db, ok=False)


def minimize(f_and_grad, x0, cfg=None, memory=None, stage="", epoch=0):
    """Minimise ``f_and_grad`` from ``x0`` for at most ``cfg.maxiter`` iterations.

    Returns ``(x, trace)``. ``trace`` holds one dict per iteration with the
    loss after the step, max-norm of the gradient, the step length, the
    line-search endpoints (``phi0``, ``dphi0``, ``dphi``) and a ``flag`` that
    is ``None`` for accepted strong-Wolfe steps. A line-search failure ends
    the run at the best point found so far.
    """
    cfg = cfg or LbfgsConfig()
    memory = memory if memory is not None else CurvatureMemory(cfg.history)
    x = np.array(x0, dtype=np.float64)
    f, g = f_and_grad(x)
    f = float(f)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericError("objective is not finite at the starting point")
    trace = []
    for it in range(cfg.maxiter):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= cfg.grad_tol:
            break
        t0 = time.perf_counter()
        if len(memory):
            d = memory.direction(g)
            step0 = 1.0
        else:
            d = -g
            step0 = min(1.0, 1.0 / float(np.linalg.norm(g)))
        ls = strong_wolfe_line_search(f_and_grad, x, d, step0, f, g, cfg.c1, cfg.c2,
                                      cfg.max_line_search_steps)
        entry = {
            "stage": stage, "epoch": epoch, "iter": it,
            "step": ls.step, "phi0": ls.phi0, "dphi0": ls.dphi0, "dphi": ls.dphi,
            "n_evals": ls.n_evals, "flag": None,
        }
        if ls.fell_back:
            memory.clear()
        if not ls.ok:
            entry["flag"] = "line_search_failed"
            if ls.f < f:
                x, f, g = ls.x, ls.f, ls.g
            entry.update(loss=f, grad_norm=float(np.max(np.abs(g))),
                         wall_ms=1e3 * (time.perf_counter() - t0))
            trace.append(entry)
            logger.info("line search failed at iteration %d; stopping", it)
            break
        memory.push(ls.x - x, ls.g - g)
        x, f, g = ls.x, ls.f, ls.g
        entry.update(loss=f, grad_norm=float(np.max(np.abs(g))),
                     wall_ms=1e3 * (time.perf_counter() - t0))
        trace.append(entry)
    return x, trace


def run_epochs(f_and_grad, x0, epochs, maxiter_per_epoch, callbacks=(), cfg=None,
               reset_memory=True, stage=""):
    """Call :func:`minimize` ``epochs`` times, warm-starting each call.

    Each callback is invoked as ``cb(epoch, x, epoch_trace)`` after every
    epoch. Returns ``(x, trace)`` with the concatenated trace.
    """
    if epochs < 0:
        raise ConfigurationError("epochs must be >= 0")
    base = cfg or LbfgsConfig()
    cfg = LbfgsConfig(base.history, maxiter_per_epoch, base.grad_tol, base.c1, base.c2,
                      base.max_line_search_steps)
    memory = CurvatureMemory(cfg.history)
    x = np.array(x0, dtype=np.float64)
    trace = []
    for epoch in range(epochs):
        if reset_memory:
            memory.clear()
        x, tr = minimize(f_and_grad, x, cfg, memory, stage=stage, epoch=epoch)
        trace.extend(tr)
        for cb in callbacks:
            cb(epoch, x, tr)
    return x, trace


def check_trace(trace, c1=1e-4, c2=0.9, rtol=1e-10):
    """Return a list of problems found in ``trace`` (empty when it is clean).

    Checks strong Wolfe on every accepted entry and non-increasing loss.
    """
    problems = []
    prev = None
    for e in trace:
        if e["flag"] is None:
            slack = rtol * max(1.0, abs(e["phi0"]))
            if e["loss"] > e["phi0"] + c1 * e["step"] * e["dphi0"] + slack:
                problems.append(f"armijo violated at epoch {e['epoch']} iter {e['iter']}")
            if abs(e["dphi"]) > -c2 * e["dphi0"] * (1 + rtol):
                problems.append(f"curvature violated at epoch {e['epoch']} iter {e['iter']}")
        if prev is not None and e["loss"] > prev:
            problems.append(f"loss increased at epoch {e['epoch']} iter {e['iter']}")
        prev = e["loss"]
    return problems
