"""Central finite-difference gradient verification."""
from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np


def gradient_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    h: float = 1e-6,
    max_coords: int | None = 20,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Largest relative error between analytic and numeric gradients.

    ``loss_fn`` must read the arrays in ``params`` at call time; each checked
    coordinate is perturbed in place and restored. At most ``max_coords``
    coordinates per array are checked (all when None).
    Relative error is |ga - gn| / max(|ga|, |gn|, floor); raise ``floor``
    when true gradients near zero would otherwise measure only rounding noise.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        if not np.shares_memory(flat, value):
            raise ValueError(f"parameter {name} is not contiguous; cannot perturb in place")
        ga_all = np.asarray(grads[name]).reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            gn = (up - down) / (2 * h)
            ga = float(ga_all[i])
            err = abs(ga - gn) / max(abs(ga), abs(gn), floor)
            worst = max(worst, err)
    return worst
