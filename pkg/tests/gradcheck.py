"""Finite-difference gradient oracle, independent of the autodiff backward pass.

Central differences with step h=1e-4 on float64 graphs. Used by the nn tests
and the acceptance suite.
"""

import numpy as np

H = 1e-4
REL_TOL = 1e-3


def numeric_grad(loss_fn, params: list) -> list:
    """loss_fn() -> scalar float, reading params[i].data. Central differences."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + H
            f_plus = loss_fn()
            flat[i] = orig - H
            f_minus = loss_fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * H)
        grads.append(g)
    return grads


def max_rel_error(analytic: list, numeric: list) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check(loss_builder, params: list) -> float:
    """loss_builder() must rebuild the graph and return the scalar loss Tensor.

    Returns the max relative error between backprop and central differences.
    """
    loss = loss_builder()
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = numeric_grad(lambda: float(loss_builder().data), params)
    return max_rel_error(analytic, numeric)
