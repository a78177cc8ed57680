"""Minimal reverse-mode autodiff over float64 numpy arrays.

The graph is dynamic: every op that sees a gradient-requiring input
records its parents and a backward closure, everything else stays a
plain value. `backward()` sweeps the recorded graph once per call and
adds fresh contributions into leaf `.grad` buffers, so calling it twice
without zeroing accumulates exactly twice the gradient.

Convolution uses an im2col gather plus batched matmul; at the sizes this
project runs (32x32 patches, tens of channels) that keeps a training
step inside BLAS instead of Python loops.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Iterator

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import _kernels
from .errors import CheckpointError, IOFailure, ShapeError

Array = np.ndarray

# Backward closures return one gradient array per parent (or None for a
# parent that does not require grad). A closure may hand back the incoming
# gradient itself, or views of it, as long as no two returned arrays share
# overlapping memory: the engine accumulates with += and never copies.
BackwardFn = Callable[[Array], tuple]


class Tensor:
    """A float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bw: BackwardFn | None = None

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _wrap(data: Array) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._bw = None
        return out

    @staticmethod
    def _node(data: Array, parents: tuple, bw: BackwardFn) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
        return out

    # -- basic introspection --------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, no graph. Shares the underlying buffer."""
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic ------------------------------------------------------

    def _check_same_shape(self, other: "Tensor", op: str) -> None:
        if self.data.shape != other.data.shape:
            raise ShapeError(f"{op}: shapes {self.shape} and {other.shape} differ")

    def __add__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(other, "add")
            return _track(self.data + other.data, (self, other),
                          lambda g: (g, g.copy()))
        s = float(other)
        return _track(self.data + s, (self,), lambda g: (g,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(other, "sub")
            return _track(self.data - other.data, (self, other),
                          lambda g: (g, -g))
        s = float(other)
        return _track(self.data - s, (self,), lambda g: (g,))

    def __rsub__(self, other):
        s = float(other)
        return _track(s - self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(other, "mul")
            a, b = self.data, other.data
            return _track(a * b, (self, other), lambda g: (g * b, g * a))
        s = float(other)
        return _track(self.data * s, (self,), lambda g: (g * s,))

    __rmul__ = __mul__

    def __neg__(self):
        return _track(-self.data, (self,), lambda g: (-g,))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; "
                            "multiply by a precomputed reciprocal")
        return self * (1.0 / float(other))

    # -- reductions and shape ops -----------------------------------------

    def sum(self) -> "Tensor":
        shape = self.data.shape
        return _track(np.asarray(self.data.sum()), (self,),
                      lambda g: (np.full(shape, g),))

    def mean(self) -> "Tensor":
        shape = self.data.shape
        n = self.data.size
        return _track(np.asarray(self.data.mean()), (self,),
                      lambda g: (np.full(shape, g / n),))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return _track(self.data.reshape(shape), (self,),
                      lambda g: (g.reshape(old),))

    def backward(self) -> None:
        backward(self)


def _track(data: Array, parents: tuple, bw: BackwardFn) -> Tensor:
    for p in parents:
        if p.requires_grad:
            return Tensor._node(data, parents, bw)
    return Tensor._wrap(data)


# -- backward engine -------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad for every reachable leaf.

    Intermediate nodes only relay gradients; .grad is populated on
    gradient-requiring tensors without parents (parameters, inputs).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward() on a tensor that does not require grad")

    # Depth-first topological order over the gradient-requiring subgraph.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    scratch: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = scratch.pop(id(node), None)
        if g is None:
            continue
        if node._bw is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._bw(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in scratch:
                scratch[pid] += pg
            else:
                scratch[pid] = pg


# -- neural net ops --------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW layout, square odd kernel.

    Forward gathers sliding windows into a [B, C*k*k, H'*W'] matrix and
    runs one batched matmul; the same matrix is reused for the kernel
    gradient, and the input gradient scatters back with k*k slice-adds.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be [B,C,H,W], got {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be [Co,Ci,k,k], got {kernel.shape}")
    B, C, H, W = x.data.shape
    Co, Ci, kh, kw = kernel.data.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if Ci != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {Ci}")
    if bias.data.shape != (Co,):
        raise ShapeError(f"conv2d: bias must be [{Co}], got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")

    k, p = kh, padding
    Hp, Wp = H + 2 * p, W + 2 * p
    if Hp < k or Wp < k:
        raise ShapeError(f"conv2d: {k}x{k} kernel does not fit padded input {Hp}x{Wp}")
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1

    if k == 1 and stride == 1 and p == 0:
        # Pointwise conv: the column matrix is just the input, no gather.
        cols = np.ascontiguousarray(x.data).reshape(B, C, H * W)
        scatter = None
    elif k == 3:
        cols = np.empty((B, C * 9, Ho * Wo))
        _kernels.conv3_gather(np.ascontiguousarray(x.data), p, stride, cols)
        scatter = "conv3"
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
        s0, s1, s2, s3 = xp.strides
        win = as_strided(xp, (B, C, k, k, Ho, Wo),
                         (s0, s1, s2, s3, s2 * stride, s3 * stride))
        cols = win.reshape(B, C * k * k, Ho * Wo)  # gather copy
        scatter = "slices"
    wmat = kernel.data.reshape(Co, C * k * k)
    out = np.matmul(wmat[None], cols)
    out += bias.data[None, :, None]
    out = out.reshape(B, Co, Ho, Wo)

    x_rg, w_rg, b_rg = x.requires_grad, kernel.requires_grad, bias.requires_grad
    cols_saved = cols if w_rg else None
    kshape = kernel.data.shape

    def bw(g: Array) -> tuple:
        gm = np.ascontiguousarray(g).reshape(B, Co, Ho * Wo)
        dw = db = dx = None
        if w_rg:
            per_sample = np.matmul(gm, cols_saved.transpose(0, 2, 1))
            dw = np.empty(per_sample.shape[1:])
            _kernels.sum_batch(per_sample, dw)
            dw = dw.reshape(kshape)
        if b_rg:
            db = np.empty(Co)
            _kernels.sum_batch_spatial(gm, db)
        if x_rg:
            dcols = np.matmul(wmat.T[None], gm)
            if scatter is None:
                dx = dcols.reshape(B, C, H, W)
            elif scatter == "conv3":
                dx = np.zeros((B, C, H, W))
                _kernels.conv3_scatter(dcols, p, stride, dx)
            else:
                dcols = dcols.reshape(B, C, k, k, Ho, Wo)
                dxp = np.zeros((B, C, Hp, Wp))
                for ki in range(k):
                    for kj in range(k):
                        dxp[:, :, ki:ki + stride * Ho:stride,
                            kj:kj + stride * Wo:stride] += dcols[:, :, ki, kj]
                dx = dxp[:, :, p:p + H, p:p + W] if p else dxp
        return (dx, dw, db)

    return _track(out, (x, kernel, bias), bw)


def group_norm(x: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Per-group standardization over (channels-in-group, H, W)."""
    if x.data.ndim != 4:
        raise ShapeError(f"group_norm: input must be [B,C,H,W], got {x.shape}")
    B, C, H, W = x.data.shape
    if groups < 1 or C % groups != 0:
        raise ShapeError(f"group_norm: {C} channels not divisible by {groups} groups")
    if eps <= 0:
        raise ValueError("group_norm: eps must be positive")

    out = np.empty((B, C, H, W))
    istd = np.empty((B, groups))
    _kernels.group_norm_fwd(np.ascontiguousarray(x.data), groups, eps, out, istd)

    def bw(g: Array) -> tuple:
        # out doubles as the xhat cache: downstream ops never mutate inputs.
        dx = np.empty((B, C, H, W))
        _kernels.group_norm_bwd(np.ascontiguousarray(g), out, istd, groups, dx)
        return (dx,)

    return _track(out, (x,), bw)


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), elementwise."""
    xd = x.data
    s = np.negative(xd)
    np.exp(s, out=s)
    s += 1.0
    np.reciprocal(s, out=s)
    out = xd * s

    def bw(g: Array) -> tuple:
        if xd.ndim == 4 and xd.flags["C_CONTIGUOUS"]:
            dx = np.empty_like(xd)
            _kernels.silu_bwd(np.ascontiguousarray(g), xd, s, dx)
            return (dx,)
        return (g * (s * (1.0 + xd * (1.0 - s))),)

    return _track(out, (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a vector: weight [Dout,Din] @ x [Din] + bias [Dout]."""
    if x.data.ndim != 1:
        raise ShapeError(f"linear: input must be a vector, got {x.shape}")
    dout, din = weight.data.shape
    if x.data.shape != (din,):
        raise ShapeError(f"linear: input has {x.data.shape[0]} features, weight expects {din}")
    if bias.data.shape != (dout,):
        raise ShapeError(f"linear: bias must be [{dout}], got {bias.shape}")

    xd, wd = x.data, weight.data
    out = wd @ xd + bias.data
    x_rg, w_rg, b_rg = x.requires_grad, weight.requires_grad, bias.requires_grad

    def bw(g: Array) -> tuple:
        dx = wd.T @ g if x_rg else None
        dw = np.outer(g, xd) if w_rg else None
        db = g.copy() if b_rg else None
        return (dx, dw, db)

    return _track(out, (x, weight, bias), bw)


def scale_shift_channels(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """x * (1 + gamma) + beta with gamma, beta broadcast per channel."""
    if x.data.ndim != 4:
        raise ShapeError(f"scale_shift_channels: input must be [B,C,H,W], got {x.shape}")
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError(f"scale_shift_channels: gamma/beta must be [{C}], "
                         f"got {gamma.shape} and {beta.shape}")

    xd = np.ascontiguousarray(x.data)
    gd = np.ascontiguousarray(gamma.data)
    out = np.empty_like(xd)
    _kernels.scale_shift_fwd(xd, gd, np.ascontiguousarray(beta.data), out)
    x_rg, g_rg, b_rg = x.requires_grad, gamma.requires_grad, beta.requires_grad

    def bw(g: Array) -> tuple:
        dx = np.empty_like(xd)
        dgamma = np.empty_like(gd)
        dbeta = np.empty_like(gd)
        _kernels.scale_shift_bwd(np.ascontiguousarray(g), xd, gd, dx, dgamma, dbeta)
        return (dx if x_rg else None,
                dgamma if g_rg else None,
                dbeta if b_rg else None)

    return _track(out, (x, gamma, beta), bw)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest2: input must be [B,C,H,W], got {x.shape}")
    B, C, H, W = x.data.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None],
                          (B, C, H, 2, W, 2)).reshape(B, C, 2 * H, 2 * W)

    def bw(g: Array) -> tuple:
        dx = np.empty((B, C, H, W))
        _kernels.pool_sum2(np.ascontiguousarray(g), dx)
        return (dx,)

    return _track(out, (x,), bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels: both inputs must be [B,C,H,W]")
    sa, sb = a.data.shape, b.data.shape
    if (sa[0], sa[2], sa[3]) != (sb[0], sb[2], sb[3]):
        raise ShapeError(f"concat_channels: batch/spatial dims differ, {sa} vs {sb}")
    ca = sa[1]
    out = np.concatenate((a.data, b.data), axis=1)

    def bw(g: Array) -> tuple:
        # Disjoint views of g; safe for in-place accumulation.
        return (g[:, :ca], g[:, ca:])

    return _track(out, (a, b), bw)


# -- parameter store -------------------------------------------------------


class ParameterStore:
    """Named parameters with stable insertion order."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=requires_grad)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def clone(self, requires_grad: bool = False) -> "ParameterStore":
        out = ParameterStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy(), requires_grad=requires_grad)
        return out

    def state(self) -> dict[str, Array]:
        return {name: t.data for name, t in self._params.items()}

    def load_state(self, arrays: dict[str, Array]) -> None:
        """Overwrite parameter values; names and shapes must match exactly."""
        missing = [n for n in self._params if n not in arrays]
        unexpected = [n for n in arrays if n not in self._params]
        if missing or unexpected:
            raise CheckpointError(
                f"parameter name mismatch (missing: {missing or 'none'}, "
                f"unexpected: {unexpected or 'none'})")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape}, "
                    f"model {t.data.shape}")
            t.data = arr.copy()


# -- checkpoint serialization ----------------------------------------------

CHECKPOINT_MAGIC = b"RLCK"
CHECKPOINT_VERSION = 1


def save_arrays(path, arrays: dict[str, Array], meta: dict | None = None) -> None:
    """Binary checkpoint: ordered (name, shape, float64 values) records.

    Layout: magic, u32 version, u32 meta length + JSON metadata, u32 record
    count, then per record u16 name length, name bytes, u8 ndim, u32 dims,
    little-endian float64 payload.
    """
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(meta_bytes)))
            fh.write(meta_bytes)
            fh.write(struct.pack("<I", len(arrays)))
            for name, arr in arrays.items():
                nb = name.encode("utf-8")
                a = np.ascontiguousarray(arr, dtype="<f8")
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<B", a.ndim))
                fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
                fh.write(a.tobytes())
    except OSError as exc:
        raise IOFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_arrays(path) -> tuple[dict[str, Array], dict]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except OSError as exc:
        raise IOFailure(f"cannot read checkpoint {path}: {exc}") from exc

    def fail() -> CheckpointError:
        return CheckpointError(f"truncated or corrupt checkpoint: {path}")

    view = memoryview(blob)
    if len(view) < 12 or bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    (meta_len,) = struct.unpack_from("<I", view, 8)
    pos = 12
    if pos + meta_len > len(view):
        raise fail()
    try:
        meta = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad checkpoint metadata in {path}") from exc
    pos += meta_len

    try:
        (count,) = struct.unpack_from("<I", view, pos)
        pos += 4
        arrays: dict[str, Array] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            end = pos + 8 * n
            if end > len(view):
                raise fail()
            arrays[name] = np.frombuffer(view[pos:end], dtype="<f8").reshape(dims).copy()
            pos = end
    except struct.error as exc:
        raise fail() from exc
    if pos != len(view):
        raise fail()
    return arrays, meta
