"""Central finite-difference gradient verification.

The numeric side only ever calls the forward pass, so it stays independent
of the hand-written backwards it is used to check.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, no_grad


def numeric_gradient(fn, x: Tensor, h: float = 1e-4) -> np.ndarray:
    """d fn() / d x by central differences, perturbing x in place."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if den == 0.0:
        return 0.0
    return float(num / den)


def check_gradients(fn, tensors: dict[str, Tensor], h: float = 1e-4) -> dict[str, float]:
    """Compare analytic and numeric gradients of scalar-valued fn().

    Returns the relative error per tensor name; callers assert a bound.
    """
    loss = fn()
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in tensors.items()}
    for t in tensors.values():
        t.grad = None
    errors = {}
    for name, t in tensors.items():
        errors[name] = relative_error(analytic[name], numeric_gradient(fn, t, h))
    return errors
