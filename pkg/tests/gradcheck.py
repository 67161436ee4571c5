"""Finite-difference gradient checking shared by the test modules."""

import numpy as np

from fourier_mts import autodiff as ad


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        hi = f()
        x[i] = orig - eps
        lo = f()
        x[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return g


def check_grads(build, arrays, rtol=1e-5, atol=1e-7):
    """Compare tape gradients of ``build(*tensors)`` (a scalar) with central differences."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.GradTape() as tape:
        loss = build(*tensors)
    grads = tape.backward(loss, wrt=tensors)
    for t, g in zip(tensors, grads):
        def f():
            return build(*[ad.Tensor(s.data) for s in tensors]).item()
        num = numeric_grad(f, t.data)
        np.testing.assert_allclose(g, num, rtol=rtol, atol=atol)
