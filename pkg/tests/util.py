"""Shared test oracles: finite differences and gradient checking."""

import numpy as np

from dibod import autodiff as ad


def numeric_grad(f, params, h=1e-5):
    """Central finite differences of scalar f() w.r.t. each param tensor.

    f must recompute the loss from the params' current .data.  Returns a
    list of arrays, one per param.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            dn = f()
            flat[i] = orig
            gflat[i] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(f_tensor, params):
    """Backward-pass gradients of the tape-recorded scalar f_tensor()."""
    for p in params:
        p.zero_grad()
    with ad.Tape():
        loss = f_tensor()
        ad.backward(loss)
    return [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
            for p in params]


def check_gradients(f_tensor, f_value, params, h=1e-5, rtol=1e-4):
    """Assert max relative error between analytic and numeric grads <= rtol."""
    ana = analytic_grad(f_tensor, params)
    num = numeric_grad(f_value, params, h=h)
    worst = 0.0
    for a, n in zip(ana, num):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    assert worst <= rtol, f"gradient mismatch: max rel err {worst:.3e} > {rtol}"
    return worst
