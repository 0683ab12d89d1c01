"""Limited-memory BFGS with strong-Wolfe line search and the two-stage
kinematic -> physics refinement schedule.

The optimizer works on flat numpy vectors and only needs a value-and-
gradient callable, so loss internals stay out of this module. The LBFGS
memory is cleared between the two stages.
"""

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LbfgsConfig:
    history: int = 100
    base_step: float = 1.0  # initial line-search trial step
    c1: float = 1e-4
    c2: float = 0.9
    max_iter_kinematic: int = 250
    max_iter_physics: int = 500
    grad_tol: float = 1e-8  # infinity norm
    rel_decrease_tol: float = 1e-12  # over rel_decrease_window iterations
    rel_decrease_window: int = 10
    max_linesearch: int = 25

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.history < 1:
            raise ValueError("history must be >= 1")


@dataclass
class TraceRecord:
    iteration: int
    stage: int
    loss: float
    grad_norm: float
    step: float
    history_len: int
    terms: dict = field(default_factory=dict)


@dataclass
class MinimizeResult:
    x: np.ndarray
    loss: float
    trace: list
    iterations: int
    converged: bool
    line_search_failed: bool = False
    stop_reason: str = ""


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolant on [a, b]; None if degenerate."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sqrt(disc) * np.sign(b - a)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    if not np.isfinite(t):
        return None
    return t


class _LineSearch:
    """Strong-Wolfe line search (bracket + zoom with cubic interpolation)."""

    def __init__(self, f_and_g, c1, c2, max_iter):
        self.f_and_g = f_and_g
        self.c1, self.c2 = c1, c2
        self.max_iter = max_iter

    def search(self, x, f0, g0, d, step0):
        dg0 = float(g0 @ d)
        if dg0 >= 0:
            return None  # not a descent direction

        def phi(a):
            f, g = self.f_and_g(x + a * d)
            return f, g, float(g @ d)

        a_prev, f_prev, dg_prev = 0.0, f0, dg0
        a = step0
        result_prev = (f0, g0)
        for i in range(self.max_iter):
            f, g, dg = phi(a)
            if f > f0 + self.c1 * a * dg0 or (i > 0 and f >= f_prev):
                return self._zoom(x, f0, dg0, d, a_prev, f_prev, dg_prev, a, f, dg)
            if abs(dg) <= -self.c2 * dg0:
                return a, f, g
            if dg >= 0:
                return self._zoom(x, f0, dg0, d, a, f, dg, a_prev, f_prev, dg_prev)
            a_prev, f_prev, dg_prev = a, f, dg
            a = 2.0 * a
        return None

    def _zoom(self, x, f0, dg0, d, lo, f_lo, dg_lo, hi, f_hi, dg_hi):
        def phi(a):
            f, g = self.f_and_g(x + a * d)
            return f, g, float(g @ d)

        for _ in range(self.max_iter):
            a = _cubic_min(lo, f_lo, dg_lo, hi, f_hi, dg_hi)
            width = abs(hi - lo)
            left, right = min(lo, hi), max(lo, hi)
            if a is None or not (left + 0.01 * width < a < right - 0.01 * width):
                a = 0.5 * (lo + hi)
            f, g, dg = phi(a)
            if f > f0 + self.c1 * a * dg0 or f >= f_lo:
                hi, f_hi, dg_hi = a, f, dg
            else:
                if abs(dg) <= -self.c2 * dg0:
                    return a, f, g
                if dg * (hi - lo) >= 0:
                    hi, f_hi, dg_hi = lo, f_lo, dg_lo
                lo, f_lo, dg_lo = a, f, dg
            if abs(hi - lo) < 1e-16:
                break
        return None


def minimize(f_and_g, x0, config: LbfgsConfig = None, max_iter: int = None,
             stage: int = 0, trace: list = None, term_fn=None) -> MinimizeResult:
    """Minimize f via LBFGS two-loop recursion.

    f_and_g(x) -> (float, gradient). Curvature pairs with non-positive
    s^T y are skipped; a failed line search terminates gracefully with the
    best iterate so far. The accepted-loss trace is monotone
    non-increasing by the Armijo condition.
    """
    cfg = config or LbfgsConfig()
    if max_iter is None:
        max_iter = cfg.max_iter_physics
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = f_and_g(x)
    trace = trace if trace is not None else []
    s_hist, y_hist, rho_hist = [], [], []
    ls = _LineSearch(f_and_g, cfg.c1, cfg.c2, cfg.max_linesearch)
    recent = [f]
    it = 0
    failed = False
    reason = "max_iter"

    def record(step):
        trace.append(TraceRecord(
            iteration=len(trace), stage=stage, loss=f,
            grad_norm=float(np.abs(g).max()), step=step,
            history_len=len(s_hist),
            terms=term_fn() if term_fn else {}))

    record(0.0)
    if float(np.abs(g).max()) <= cfg.grad_tol:
        return MinimizeResult(x, f, trace, 0, True, False, "grad_tol")

    for it in range(1, max_iter + 1):
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist),
                             reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist),
                                  reversed(alphas)):
            q += s * (a - rho * (y @ q))
        d = -q

        hit = ls.search(x, f, g, d, cfg.base_step)
        if hit is None:
            failed = True
            reason = "line_search_failure"
            break
        step, f_new, g_new = hit
        s = step * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-16:
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > cfg.history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x = x + s
        f, g = f_new, g_new
        record(step)

        if float(np.abs(g).max()) <= cfg.grad_tol:
            reason = "grad_tol"
            break
        recent.append(f)
        if len(recent) > cfg.rel_decrease_window + 1:
            recent.pop(0)
            fref = recent[0]
            if abs(fref - f) <= cfg.rel_decrease_tol * max(abs(fref), 1.0):
                reason = "rel_decrease"
                break

    converged = reason in ("grad_tol", "rel_decrease")
    return MinimizeResult(x, f, trace, it, converged, failed, reason)


def two_stage_refine(problem, x0: np.ndarray, config: LbfgsConfig = None):
    """Kinematic stage (physics off) then physics stage, fresh LBFGS memory.

    `problem` must expose `enable_physics`, `loss_torch` and
    `last_breakdown`. Returns (x, trace) where the trace carries per-term
    losses at every accepted iterate.
    """
    from physmo.gradient import value_and_gradient

    cfg = config or LbfgsConfig()
    trace = []

    def f_and_g(x):
        return value_and_gradient(problem, x)

    def terms():
        bd = problem.last_breakdown
        return bd.as_dict() if bd is not None else {}

    was_enabled = problem.enable_physics
    problem.enable_physics = False
    res1 = minimize(f_and_g, x0, cfg, max_iter=cfg.max_iter_kinematic,
                    stage=1, trace=trace, term_fn=terms)
    problem.enable_physics = was_enabled
    if not was_enabled:
        return res1.x, trace, {"line_search_failed": res1.line_search_failed}

    # body shape and scale are settled kinematically; freezing them in the
    # physics stage keeps the dynamics terms from exploiting the monocular
    # size-distance ambiguity (a smaller body closer to the camera has
    # smaller normalized moment residuals but fits the images just as well)
    frozen = np.arange(res1.x.size - getattr(problem, "n_frozen_tail", 0),
                       res1.x.size)

    x1 = res1.x
    adjust = getattr(problem, "stage_boundary_adjust", None)
    if adjust is not None:
        x1 = adjust(x1)

    def f_and_g_frozen(x):
        f, g = f_and_g(x)
        g[frozen] = 0.0
        return f, g

    res2 = minimize(f_and_g_frozen, x1, cfg,
                    max_iter=cfg.max_iter_physics,
                    stage=2, trace=trace, term_fn=terms)
    failed = res1.line_search_failed or res2.line_search_failed
    return res2.x, trace, {"line_search_failed": failed}


def write_trace_csv(trace: list, path):
    """Iteration trace as CSV: iteration, stage, losses, grad norm, step."""
    term_keys = sorted({k for rec in trace for k in rec.terms})
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "stage", "loss", "grad_norm", "step",
                     "history_len"] + term_keys)
        for rec in trace:
            wr.writerow([rec.iteration, rec.stage, repr(rec.loss),
                         repr(rec.grad_norm), repr(rec.step),
                         rec.history_len]
                        + [repr(rec.terms.get(k, "")) for k in term_keys])
