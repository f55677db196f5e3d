"""Central-difference gradient verification.

The harness only ever calls the loss closure; it never touches the
analytic backward path, so the two stay independent. Parameters are
perturbed in place and restored, which keeps closures over the live
parameter objects valid.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional

import numpy as np

DEFAULT_EPS = 1e-5
DEFAULT_FLOOR = 1e-8


def numeric_gradient(
    loss_fn: Callable[[], float],
    param: np.ndarray,
    coords: Optional[np.ndarray] = None,
    eps: float = DEFAULT_EPS,
) -> dict[int, float]:
    """(f(x+eps) - f(x-eps)) / 2 eps at selected flat coordinates of `param`."""
    flat = param.reshape(-1)
    if coords is None:
        coords = np.arange(flat.size)
    grads: dict[int, float] = {}
    for c in coords:
        c = int(c)
        orig = flat[c]
        flat[c] = orig + eps
        lp = loss_fn()
        flat[c] = orig - eps
        lm = loss_fn()
        flat[c] = orig
        grads[c] = (lp - lm) / (2.0 * eps)
    return grads


def relative_error(a: float, b: float, floor: float = DEFAULT_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def max_gradient_error(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    coords_per_tensor: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    eps: float = DEFAULT_EPS,
    floor: float = DEFAULT_FLOOR,
) -> tuple[float, dict[str, float]]:
    """Worst relative error between analytic and numeric gradients.

    With `coords_per_tensor` set, only that many randomly chosen coordinates
    of each tensor are checked (rng required); otherwise every coordinate is.
    Returns (overall max, per-tensor max).
    """
    per_tensor: dict[str, float] = {}
    for name, arr in params.items():
        size = arr.size
        if coords_per_tensor is not None and coords_per_tensor < size:
            if rng is None:
                raise ValueError("coordinate subsampling requires an rng")
            coords = rng.choice(size, size=coords_per_tensor, replace=False)
        else:
            coords = np.arange(size)
        numeric = numeric_gradient(loss_fn, arr, coords, eps)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for c, g_num in numeric.items():
            worst = max(worst, relative_error(float(a_flat[c]), g_num, floor))
        per_tensor[name] = worst
    return max(per_tensor.values()), per_tensor
