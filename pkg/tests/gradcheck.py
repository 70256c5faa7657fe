"""Finite-difference gradient checking used across the test suite."""

import numpy as np

from ctformer import tensor as T


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. array x (in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_loss, params: dict, h: float = 1e-6, floor: float = 1e-6):
    """Backprop build_loss() once, then compare every parameter's gradient
    against central differences. Returns the worst relative error."""
    T.clear_tape()
    for p in params.values():
        p.grad = None
    loss = build_loss()
    T.backward(loss)
    T.clear_tape()
    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)

        def scalar():
            with T.no_grad():
                return float(build_loss().data)

        numeric = numeric_grad(scalar, p.data, h=h)
        worst = max(worst, rel_error(analytic, numeric, floor=floor))
    return worst
