"""Shared test oracles: central finite differences against the tape."""

import numpy as np

from shadowscan import autodiff as ad
from shadowscan.autodiff import GradTape, Tensor


def tape_grads(fn, tensors, weight):
    """Gradients of sum(fn(*tensors) * weight) from one backward pass."""
    for t in tensors:
        t.zero_grad()
    with GradTape() as tape:
        loss = ad.sum_all(ad.mul(fn(*tensors), Tensor(weight)))
    ad.backward(loss, tape)
    return [t.grad for t in tensors]


def numeric_grads(fn, tensors, weight, eps=1e-6):
    """The same gradients from central differences, element by element.

    fn must be deterministic; it is re-evaluated with single entries of the
    operand arrays nudged in place.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        for idx in np.ndindex(*t.data.shape):
            keep = t.data[idx]
            t.data[idx] = keep + eps
            hi = float(np.sum(fn(*tensors).data * weight))
            t.data[idx] = keep - eps
            lo = float(np.sum(fn(*tensors).data * weight))
            t.data[idx] = keep
            g[idx] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def assert_grads_match(fn, tensors, seed=0, tol=1e-4, eps=1e-6):
    """Tape gradients and finite differences agree for every operand."""
    rng = np.random.default_rng(seed)
    weight = rng.normal(size=fn(*tensors).shape)
    analytic = tape_grads(fn, tensors, weight)
    numeric = numeric_grads(fn, tensors, weight, eps)
    for t, a, n in zip(tensors, analytic, numeric):
        assert a is not None, f"missing gradient for operand of shape {t.shape}"
        scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        err = np.abs(a - n) / scale
        assert err.max() <= tol, f"gradient off by {err.max():.3e} (tol {tol})"
