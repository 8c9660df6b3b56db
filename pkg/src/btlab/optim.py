"""Adam and L-BFGS with the two-phase training schedule.

Adam is the standard bias-corrected update. L-BFGS uses the two-loop
recursion with a strong-Wolfe line search and stops when the loss stagnates
to machine epsilon (relative, with a configurable absolute floor) or at the
iteration cap. Both are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MACHINE_EPS = float(np.finfo(np.float64).eps)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0

    def ensure(self, n: int):
        if self.m is None:
            self.m = np.zeros(n)
            self.v = np.zeros(n)
        if self.m.shape != (n,):
            raise ValueError("moment vectors do not match parameter length")


def adam_step(params: np.ndarray, grads: np.ndarray,
              state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError("params and grads must have the same length")
    if not np.all(np.isfinite(grads)):
        raise ArithmeticError("non-finite gradient in Adam step")
    state.ensure(params.size)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    return params - state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class LbfgsOptions:
    memory: int = 10
    max_iters: int = 1000
    c1: float = 1e-4
    c2: float = 0.9
    # relative machine-epsilon stagnation rule plus an absolute floor
    stag_rtol: float = MACHINE_EPS
    stag_atol: float = 0.0
    gtol: float = 0.0
    max_line_evals: int = 30

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")


@dataclass
class LbfgsResult:
    x: np.ndarray
    loss: float
    grad_norm: float
    n_iters: int
    converged: bool
    line_search_failed: bool = False
    trace: list = field(default_factory=list)


def _wolfe_line_search(fg, x, f0, g0, d, opts, alpha0=1.0):
    """Strong-Wolfe search along d (Nocedal-Wright bracket + zoom).

    Returns (alpha, f, g, n_evals) or None on failure.
    """
    dphi0 = float(g0 @ d)
    if dphi0 >= 0:
        return None
    c1, c2 = opts.c1, opts.c2

    def phi(a):
        fa, ga = fg(x + a * d)
        return fa, ga, float(ga @ d)

    def cubic_min(a_lo, f_lo, dp_lo, a_hi, f_hi, dp_hi):
        # minimizer of the cubic interpolant; fall back to bisection
        d1 = dp_lo + dp_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
        disc = d1 * d1 - dp_lo * dp_hi
        if disc < 0:
            return 0.5 * (a_lo + a_hi)
        d2 = np.sqrt(disc) * np.sign(a_hi - a_lo)
        denom = dp_hi - dp_lo + 2.0 * d2
        if denom == 0:
            return 0.5 * (a_lo + a_hi)
        a = a_hi - (a_hi - a_lo) * (dp_hi + d2 - d1) / denom
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        width = hi - lo
        if not np.isfinite(a) or a <= lo + 0.1 * width or a >= hi - 0.1 * width:
            return 0.5 * (a_lo + a_hi)
        return a

    def zoom(a_lo, f_lo, g_lo, dp_lo, a_hi, f_hi, dp_hi, evals):
        for _ in range(opts.max_line_evals):
            a = cubic_min(a_lo, f_lo, dp_lo, a_hi, f_hi, dp_hi)
            fa, ga, dpa = phi(a)
            evals += 1
            if fa > f0 + c1 * a * dphi0 or fa >= f_lo:
                a_hi, f_hi, dp_hi = a, fa, dpa
            else:
                if abs(dpa) <= -c2 * dphi0:
                    return a, fa, ga, evals
                if dpa * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, dp_hi = a_lo, f_lo, dp_lo
                a_lo, f_lo, g_lo, dp_lo = a, fa, ga, dpa
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                break
        return None

    a_prev, f_prev, dp_prev = 0.0, f0, dphi0
    g_prev = g0
    a = alpha0
    evals = 0
    for it in range(opts.max_line_evals):
        fa, ga, dpa = phi(a)
        evals += 1
        if fa > f0 + c1 * a * dphi0 or (it > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, g_prev, dp_prev, a, fa, dpa, evals)
        if abs(dpa) <= -c2 * dphi0:
            return a, fa, ga, evals
        if dpa >= 0:
            return zoom(a, fa, ga, dpa, a_prev, f_prev, dp_prev, evals)
        a_prev, f_prev, g_prev, dp_prev = a, fa, ga, dpa
        a *= 2.0
    return None


def lbfgs_minimize(loss_fn, x0: np.ndarray, opts: LbfgsOptions = None,
                   callback=None) -> LbfgsResult:
    """Minimize loss_fn (returning (value, gradient)) from x0.

    Stops at max_iters, at gradient tolerance (if set), when the loss
    stagnates below the machine-epsilon rule, or on line-search failure
    (best-so-far is returned with a flag). The loss at accepted iterates is
    non-increasing and every accepted step satisfies both strong Wolfe
    conditions.
    """
    opts = opts or LbfgsOptions()
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = loss_fn(x)
    f = float(f)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ArithmeticError("loss or gradient non-finite at start")
    trace = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    failed = False
    converged = False
    it = 0
    while it < opts.max_iters:
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0 or (opts.gtol > 0 and gnorm < opts.gtol):
            converged = True
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist),
                             reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist),
                                  reversed(alphas)):
            q += (a - rho * (y @ q)) * s
        d = -q
        if d @ g >= 0:
            d = -g
        alpha0 = min(1.0, 1.0 / gnorm) if not s_hist else 1.0
        res = _wolfe_line_search(loss_fn, x, f, g, d, opts, alpha0)
        if res is None:
            if s_hist:
                # retry once along steepest descent with fresh memory
                s_hist, y_hist, rho_hist = [], [], []
                res = _wolfe_line_search(loss_fn, x, f, g, -g, opts,
                                         min(1.0, 1.0 / gnorm))
            if res is None:
                failed = True
                break
            d = -g
        alpha, f_new, g_new, _ = res
        s = alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > opts.memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x = x + s
        it += 1
        trace.append(f_new)
        if callback is not None:
            callback(it, x, f_new, g_new)
        df = f - f_new
        f, g = f_new, g_new
        if df <= max(opts.stag_rtol * max(1.0, abs(f)), opts.stag_atol):
            converged = True
            break
    return LbfgsResult(x, f, float(np.linalg.norm(g)), it, converged,
                       failed, trace)
