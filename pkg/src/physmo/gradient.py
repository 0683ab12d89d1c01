"""Exact gradients of the objective plus a finite-difference verifier.

A problem is anything exposing `loss_torch(x: torch.Tensor) -> scalar or
LossBreakdown` over a flat 64-bit variable vector; gradients come from
reverse accumulation through the whole pipeline (spline eval, FK, inverse
dynamics, loss terms). Non-smooth points (max(., 0) kinks, tanh
saturation) take the subgradient that is 0 on the inactive branch.
"""

import numpy as np
import torch

from physmo.quaternions import DTYPE


class NonFiniteLossError(RuntimeError):
    """Raised when the objective is non-finite; names the offending term."""


def _total(out):
    return out.total if hasattr(out, "total") else out


def value_and_gradient(problem, x: np.ndarray):
    """Loss value and exact gradient at x; deterministic for fixed inputs."""
    xt = torch.as_tensor(np.asarray(x, dtype=np.float64)).clone()
    xt.requires_grad_(True)
    out = problem.loss_torch(xt)
    total = _total(out)
    if not torch.isfinite(total):
        term = "total"
        if hasattr(out, "TERMS"):
            for t in out.TERMS:
                if not torch.isfinite(getattr(out, t)):
                    term = t
                    break
        raise NonFiniteLossError(f"loss term {term!r} is non-finite")
    grad, = torch.autograd.grad(total, xt)
    return float(total.detach()), grad.numpy()


def finite_difference_gradient(problem, x: np.ndarray,
                               eps: float = 1e-5) -> np.ndarray:
    """Central differences per coordinate; O(dim) loss evaluations."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    with torch.no_grad():
        for i in range(x.size):
            xp = x.copy()
            xp[i] += eps
            fp = float(_total(problem.loss_torch(torch.as_tensor(xp))))
            xp[i] = x[i] - eps
            fm = float(_total(problem.loss_torch(torch.as_tensor(xp))))
            g[i] = (fp - fm) / (2 * eps)
    return g


def gradient_agreement(analytic: np.ndarray, numeric: np.ndarray,
                       floor_frac: float = 1e-3) -> float:
    """Max relative deviation, with a floor so near-zero entries do not
    dominate: denominator max(|g_fd|, |g_an|, floor_frac * ||g_fd||_inf)."""
    scale = max(np.abs(numeric).max(), 1e-12)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)),
                       floor_frac * scale)
    return float((np.abs(analytic - numeric) / denom).max())


def variable_class_agreement(problem, analytic: np.ndarray,
                             numeric: np.ndarray) -> dict:
    """Relative gradient error per variable class (vector 2-norm ratio).

    Classes follow the packing layout: coordinate knot values, coordinate
    knot tangents, contact-force channels (values and tangents), shape
    factors, and the scale variable. The norm-ratio metric is insensitive
    to finite-difference truncation noise on individual near-kink entries,
    which dominates an elementwise comparison at fixed step size.
    """
    layout = problem.layout
    K, C = problem.template.values.shape
    nf = layout.forces
    cols = np.arange(C)
    coord_cols = cols < nf.start

    def block(rows_offset, col_mask):
        idx = (rows_offset + np.arange(K)[:, None] * C + cols[col_mask]).ravel()
        return idx

    classes = {
        "knot_values": block(0, coord_cols),
        "knot_tangents": block(K * C, coord_cols),
        "forces": np.concatenate([block(0, ~coord_cols),
                                  block(K * C, ~coord_cols)]),
        "shape": np.arange(2 * K * C, analytic.size - 1),
        "scale": np.array([analytic.size - 1]),
    }
    out = {}
    for name, idx in classes.items():
        a, n = analytic[idx], numeric[idx]
        out[name] = float(np.linalg.norm(a - n)
                          / max(np.linalg.norm(n), 1e-12))
    return out
