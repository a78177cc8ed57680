"""Shared test utilities: a finite-difference gradient oracle and a
reference convolution written as bare loops.

Both exist so that test expectations never come from the code under
test: gradients are checked against central differences on the loss
value alone, and conv outputs against a four-deep for-loop.
"""

from __future__ import annotations

import numpy as np

from relight.tensor import Tensor, backward


def fd_gradcheck(make_loss, tensors, h=1e-5, samples=25, seed=0):
    """Compare backward() gradients with central finite differences.

    make_loss rebuilds the scalar loss Tensor from the tensors' current
    .data on every call. Returns the worst relative error across all
    checked coordinates; coordinates are subsampled for large tensors.
    """
    loss = make_loss()
    for t in tensors:
        t.zero_grad()
    backward(loss)
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
             for t in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, grad in zip(tensors, grads):
        flat = t.data.ravel()
        n = flat.size
        idx = np.arange(n) if n <= samples else rng.choice(n, samples, replace=False)
        scale = max(np.abs(grad).max(), 1e-8)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp = make_loss().item()
            flat[i] = old - h
            lm = make_loss().item()
            flat[i] = old
            fd = (lp - lm) / (2.0 * h)
            worst = max(worst, abs(fd - grad.ravel()[i]) / scale)
    return worst


def conv2d_reference(x, w, b, stride=1, padding=0):
    """Cross-correlation by explicit loops; the slow, obvious oracle."""
    B, C, H, W = x.shape
    Co, Ci, k, _ = w.shape
    assert Ci == C
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((B, Co, Ho, Wo))
    for bb in range(B):
        for co in range(Co):
            for yo in range(Ho):
                for xo in range(Wo):
                    patch = xp[bb, :, yo * stride:yo * stride + k,
                               xo * stride:xo * stride + k]
                    out[bb, co, yo, xo] = (patch * w[co]).sum() + b[co]
    return out


def tensors_of(*arrays):
    return [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)
            for a in arrays]
