from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from amtl.autograd.tensor import Tensor


@dataclass
class GradCheckReport:
    passed: bool
    max_abs_error: float
    max_rel_error: float
    num_checked: int
    worst: tuple[int, int] | None = None  # (tensor position, flat coordinate)
    message: str = ""


def check_gradients(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-6,
    abs_floor: float = 1e-8,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward gradients against central finite differences.

    ``f`` is called with no arguments when ``x`` is a sequence (the tensors are
    perturbed in place), otherwise with ``x``. A coordinate passes when its
    relative error is at most ``tol``; when both gradients are below
    ``abs_floor`` in magnitude the absolute error is used instead.
    ``max_coords`` optionally checks a seeded random subset per tensor.
    On return each tensor's ``grad`` holds the analytic gradient.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    tensors = [x] if isinstance(x, Tensor) else list(x)
    call = (lambda: f(x)) if isinstance(x, Tensor) else f

    for t in tensors:
        t.grad = None
    out = call()
    if out.size != 1:
        raise ValueError(f"f must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        return GradCheckReport(False, np.inf, np.inf, 0, None, "f is non-finite at the base point")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    rng = np.random.default_rng(seed)
    max_abs = max_rel = 0.0
    worst = None
    checked = 0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            with np.errstate(all="ignore"):
                flat[i] = orig + eps
                fp = call().item()
                flat[i] = orig - eps
                fm = call().item()
                flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                return GradCheckReport(
                    False, np.inf, np.inf, checked, (ti, int(i)), f"non-finite value probing tensor {ti} coordinate {int(i)}"
                )
            numeric = (fp - fm) / (2 * eps)
            a = float(analytic[ti].reshape(-1)[i])
            err = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            rel = err / scale if scale >= abs_floor else err
            checked += 1
            if err > max_abs:
                max_abs = err
            if rel > max_rel:
                max_rel = rel
                worst = (ti, int(i))
    for t, g in zip(tensors, analytic):
        t.grad = g
    passed = max_rel <= tol
    msg = "ok" if passed else f"max relative error {max_rel:.3e} > tol {tol:.1e} at tensor {worst[0]} coordinate {worst[1]}"
    return GradCheckReport(passed, max_abs, max_rel, checked, worst, msg)
