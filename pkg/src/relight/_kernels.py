"""Numba inner loops for the hot paths of the tensor ops and the optimizer.

Everything here is an implementation detail: each kernel matches the plain
numpy expression it replaces to float64 round-off, and callers in
``tensor.py`` / ``train.py`` own all shape checking.  Kernels are compiled
once per process and cached on disk (``cache=True``), so repeated CLI
invocations do not pay the JIT cost again.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def conv3_gather(x, pad, stride, cols):
    """im2col for 3x3 kernels, zero padding folded into the gather.

    x: (B, C, H, W) C-contiguous.  cols: (B, C*9, Ho*Wo), written in full.
    """
    B, C, H, W = x.shape
    Ho = (H + 2 * pad - 3) // stride + 1
    Wo = (W + 2 * pad - 3) // stride + 1
    for b in range(B):
        for c in range(C):
            for ki in range(3):
                for kj in range(3):
                    row = (c * 3 + ki) * 3 + kj
                    for yo in range(Ho):
                        y = yo * stride + ki - pad
                        base = yo * Wo
                        if y < 0 or y >= H:
                            for xo in range(Wo):
                                cols[b, row, base + xo] = 0.0
                        else:
                            for xo in range(Wo):
                                xx = xo * stride + kj - pad
                                if 0 <= xx < W:
                                    cols[b, row, base + xo] = x[b, c, y, xx]
                                else:
                                    cols[b, row, base + xo] = 0.0


@njit(cache=True, fastmath=True)
def conv3_scatter(dcols, pad, stride, dx):
    """col2im for 3x3 kernels: accumulate column gradients back onto dx.

    dcols: (B, C*9, Ho*Wo).  dx: (B, C, H, W), zero-initialised by the caller.
    """
    B, C, H, W = dx.shape
    Ho = (H + 2 * pad - 3) // stride + 1
    Wo = (W + 2 * pad - 3) // stride + 1
    for b in range(B):
        for c in range(C):
            for ki in range(3):
                for kj in range(3):
                    row = (c * 3 + ki) * 3 + kj
                    for yo in range(Ho):
                        y = yo * stride + ki - pad
                        if y < 0 or y >= H:
                            continue
                        base = yo * Wo
                        for xo in range(Wo):
                            xx = xo * stride + kj - pad
                            if 0 <= xx < W:
                                dx[b, c, y, xx] += dcols[b, row, base + xo]


@njit(cache=True, fastmath=True)
def group_norm_fwd(x, groups, eps, out, istd):
    """Normalise each (sample, group) slice to zero mean, unit variance.

    out doubles as the xhat cache for the backward pass.
    istd: (B, groups) receives 1/sqrt(var + eps).
    """
    B, C, H, W = x.shape
    cpg = C // groups
    n = cpg * H * W
    for b in range(B):
        for g in range(groups):
            c0 = g * cpg
            acc = 0.0
            acc2 = 0.0
            for c in range(c0, c0 + cpg):
                for y in range(H):
                    for xx in range(W):
                        v = x[b, c, y, xx]
                        acc += v
                        acc2 += v * v
            mean = acc / n
            var = acc2 / n - mean * mean
            if var < 0.0:
                var = 0.0
            inv = 1.0 / np.sqrt(var + eps)
            istd[b, g] = inv
            for c in range(c0, c0 + cpg):
                for y in range(H):
                    for xx in range(W):
                        out[b, c, y, xx] = (x[b, c, y, xx] - mean) * inv


@njit(cache=True, fastmath=True)
def group_norm_bwd(g_out, xhat, istd, groups, dx):
    """dx = istd * (g - mean(g) - xhat * mean(g * xhat)) per (sample, group)."""
    B, C, H, W = g_out.shape
    cpg = C // groups
    n = cpg * H * W
    for b in range(B):
        for gr in range(groups):
            c0 = gr * cpg
            m1 = 0.0
            m2 = 0.0
            for c in range(c0, c0 + cpg):
                for y in range(H):
                    for xx in range(W):
                        gv = g_out[b, c, y, xx]
                        m1 += gv
                        m2 += gv * xhat[b, c, y, xx]
            m1 /= n
            m2 /= n
            inv = istd[b, gr]
            for c in range(c0, c0 + cpg):
                for y in range(H):
                    for xx in range(W):
                        dx[b, c, y, xx] = inv * (
                            g_out[b, c, y, xx] - m1 - xhat[b, c, y, xx] * m2
                        )


@njit(cache=True, fastmath=True)
def silu_bwd(g_out, x, sig, dx):
    """dx = g * sig * (1 + x * (1 - sig)), all arrays flat-compatible."""
    gf = g_out.ravel()
    xf = x.ravel()
    sf = sig.ravel()
    df = dx.ravel()
    for i in range(gf.size):
        s = sf[i]
        df[i] = gf[i] * (s * (1.0 + xf[i] * (1.0 - s)))


@njit(cache=True, fastmath=True)
def scale_shift_fwd(x, gamma, beta, out):
    """out[b, c] = x[b, c] * (1 + gamma[c]) + beta[c]."""
    B, C, H, W = x.shape
    for b in range(B):
        for c in range(C):
            gc = 1.0 + gamma[c]
            bc = beta[c]
            for y in range(H):
                for xx in range(W):
                    out[b, c, y, xx] = x[b, c, y, xx] * gc + bc


@njit(cache=True, fastmath=True)
def scale_shift_bwd(g_out, x, gamma, dx, dgamma, dbeta):
    """dx = g * (1 + gamma); dgamma[c] = sum g * x; dbeta[c] = sum g."""
    B, C, H, W = g_out.shape
    for c in range(C):
        dgamma[c] = 0.0
        dbeta[c] = 0.0
    for b in range(B):
        for c in range(C):
            gc = 1.0 + gamma[c]
            dg = 0.0
            db = 0.0
            for y in range(H):
                for xx in range(W):
                    gv = g_out[b, c, y, xx]
                    dx[b, c, y, xx] = gv * gc
                    dg += gv * x[b, c, y, xx]
                    db += gv
            dgamma[c] += dg
            dbeta[c] += db


@njit(cache=True, fastmath=True)
def sum_batch_spatial(g, out):
    """out[c] = sum over batch and positions of g[b, c, n]."""
    B, C, N = g.shape
    for c in range(C):
        out[c] = 0.0
    for b in range(B):
        for c in range(C):
            acc = 0.0
            for n in range(N):
                acc += g[b, c, n]
            out[c] += acc


@njit(cache=True, fastmath=True)
def sum_batch(a, out):
    """out[i, j] = sum over the leading axis of a[b, i, j]."""
    B, I, J = a.shape
    for i in range(I):
        for j in range(J):
            out[i, j] = a[0, i, j]
    for b in range(1, B):
        for i in range(I):
            for j in range(J):
                out[i, j] += a[b, i, j]


@njit(cache=True, fastmath=True)
def pool_sum2(g, out):
    """out[b, c, y, x] = sum of the matching 2x2 patch of g."""
    B, C, H, W = out.shape
    for b in range(B):
        for c in range(C):
            for y in range(H):
                for x in range(W):
                    y2 = 2 * y
                    x2 = 2 * x
                    out[b, c, y, x] = (g[b, c, y2, x2] + g[b, c, y2, x2 + 1]
                                       + g[b, c, y2 + 1, x2]
                                       + g[b, c, y2 + 1, x2 + 1])


@njit(cache=True, fastmath=True)
def adamw_step(p, g, m, v, lr, beta1, beta2, bc1, bc2, weight_decay, eps):
    """One AdamW update on flat views; m/v updated in place, then p."""
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * ((mi / bc1) / (np.sqrt(vi / bc2) + eps) + weight_decay * p[i])


@njit(cache=True, fastmath=True)
def ema_step(target, source, mu):
    """target = mu * target + (1 - mu) * source, on flat views."""
    om = 1.0 - mu
    for i in range(target.size):
        target[i] = mu * target[i] + om * source[i]
