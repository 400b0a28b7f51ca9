"""Central finite-difference gradient checking.

The numeric side only re-evaluates the forward function; it never touches
the backward machinery, so it is an independent oracle for it. Run it on
float64 tensors (h=1e-4 leaves ~1e-8 absolute noise there, far below the
1e-4 relative acceptance threshold).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numeric_gradient(fn, x: Tensor, indices, h: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar fn() w.r.t. x at the given flat indices."""
    flat = x.data.reshape(-1)
    out = np.zeros(len(indices), dtype=np.float64)
    for n, idx in enumerate(indices):
        orig = flat[idx]
        flat[idx] = orig + h
        hi = float(fn().data)
        flat[idx] = orig - h
        lo = float(fn().data)
        flat[idx] = orig
        out[n] = (hi - lo) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max |a-n| / max(|a|, |n|, floor); the floor keeps near-zero grads from dividing by noise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn, wrt: dict[str, Tensor], h: float = 1e-4,
                    max_per_tensor: int = 20, rng: np.random.Generator | None = None,
                    stats: dict | None = None) -> float:
    """Compare backward() against central differences on sampled coordinates.

    fn builds a fresh scalar loss from the current data of the tensors in
    ``wrt``; returns the worst relative error over all sampled coordinates.

    Piecewise-linear networks need one care: a step of h can sweep a ReLU
    kink, where the central difference itself is not a derivative estimate.
    Coordinates whose estimates at h and h/2 disagree (Richardson
    self-consistency, O(h^2) apart when smooth) are excluded; more than a
    quarter of coordinates failing it raises instead of passing silently.
    """
    rng = rng or np.random.default_rng(0)
    for t in wrt.values():
        if t.dtype != np.float64:
            raise TypeError("gradient checks must run on float64 tensors")
        t.grad = None
    loss = fn()
    backward(loss)
    worst = 0.0
    checked = skipped = 0
    for t in wrt.values():
        n = t.size
        if n <= max_per_tensor:
            indices = list(range(n))
        else:
            indices = sorted(rng.choice(n, size=max_per_tensor, replace=False).tolist())
        analytic_full = t.grad.reshape(-1) if t.grad is not None else np.zeros(n)
        analytic = analytic_full[indices]
        d_h = numeric_gradient(fn, t, indices, h=h)
        d_half = numeric_gradient(fn, t, indices, h=h / 2.0)
        gap = np.abs(d_h - d_half)
        smooth = gap <= np.maximum(1e-2 * np.maximum(np.abs(d_h), np.abs(d_half)), 1e-7)
        checked += int(smooth.sum())
        skipped += int((~smooth).sum())
        if smooth.any():
            worst = max(worst, relative_error(analytic[smooth], d_h[smooth]))
    total = checked + skipped
    if total and skipped > total // 4:
        raise RuntimeError(f"finite differences undefined on {skipped}/{total} coordinates; "
                           "the check point sits on too many kinks")
    if stats is not None:
        stats.update({"checked": checked, "skipped": skipped})
    return worst
