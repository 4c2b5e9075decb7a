"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

Every numeric array in the model (feature maps, projections, attention
maps, logits) is carried by :class:`Tensor`. Operations record their
parents and a vector-Jacobian product closure; ``backward()`` runs one
reverse sweep in topological order and accumulates gradients on every
reachable tensor with ``requires_grad``.

Matrix products go through ``np.einsum`` with ``optimize=False``. That
path sums the contraction axis sequentially per output element, so a
row's value never depends on how many other rows are computed alongside
it. The decoder's incremental-vs-full bit-exactness guarantees rely on
this.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

__all__ = [
    "Tensor",
    "add",
    "mul",
    "matmul",
    "conv2d",
    "softmax",
    "log_softmax",
    "relu",
    "exp",
    "log",
    "logaddexp",
    "masked_fill",
    "concat",
    "stack",
    "embedding",
    "LOG_ZERO",
]

# Stand-in for log(0) that keeps every intermediate finite. exp(LOG_ZERO - x)
# underflows to exactly 0.0 for any representable x, so impossible CTC paths
# contribute nothing to values or gradients.
LOG_ZERO = -1.0e30


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind in "iub":
        arr = arr.astype(np.float64)
    if arr.dtype.kind != "f":
        raise ContractError(f"tensor data must be real-valued, got dtype {arr.dtype}")
    return arr


class Tensor:
    """A real-valued array plus the bookkeeping for one reverse sweep.

    Leaf tensors are created directly; operation results carry parent
    references and a VJP closure. ``grad`` stays ``None`` until a
    ``backward()`` sweep reaches the tensor, and repeated sweeps
    accumulate unless the caller zeroes gradients in between.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data, parents, vjp):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"expected a scalar tensor, got shape {self.shape}")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- reverse sweep ----------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable ``requires_grad`` tensor.

        The receiver must be a scalar. Gradients accumulate across calls.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

        adjoint: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg

    # -- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_lift(other))

    def __rsub__(self, other):
        return add(_lift(other), -self)

    def __truediv__(self, other):
        return mul(self, _lift(other) ** -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    # -- method forms of the free functions ---------------------------------------

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def transpose(self):
        if self.ndim != 2:
            raise ShapeError(f"transpose() is for 2-d tensors, got shape {self.shape}")
        return permute(self, (1, 0))

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(data, (a, b), vjp)


def power(a, exponent) -> Tensor:
    a = _lift(a)
    if isinstance(exponent, Tensor):
        raise ContractError("power() supports python scalar exponents only")
    p = float(exponent)
    data = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._from_op(data, (a,), vjp)


def exp(a) -> Tensor:
    a = _lift(a)
    data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return Tensor._from_op(data, (a,), vjp)


def log(a) -> Tensor:
    a = _lift(a)
    data = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return Tensor._from_op(data, (a,), vjp)


def relu(a) -> Tensor:
    a = _lift(a)
    data = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0),)

    return Tensor._from_op(data, (a,), vjp)


def logaddexp(a, b) -> Tensor:
    """Elementwise log(exp(a) + exp(b)), stable for very negative inputs."""
    a, b = _lift(a), _lift(b)
    data = np.logaddexp(a.data, b.data)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g * np.exp(a.data - data), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(g * np.exp(b.data - data), b.data.shape)
        return ga, gb

    return Tensor._from_op(data, (a, b), vjp)


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with a constant; no gradient there."""
    a = _lift(a)
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, value, a.data)

    def vjp(g):
        return (_unbroadcast(np.where(mask, 0.0, g), a.data.shape),)

    return Tensor._from_op(data, (a,), vjp)


# -- contractions -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; extra leading axes broadcast like ``np.matmul``."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    data = np.einsum("...ij,...jk->...ik", a.data, b.data, optimize=False)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.einsum("...ik,...jk->...ij", g, b.data, optimize=False)
            ga = _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            gb = np.einsum("...ij,...ik->...jk", a.data, g, optimize=False)
            gb = _unbroadcast(gb, b.data.shape)
        return ga, gb

    return Tensor._from_op(data, (a, b), vjp)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [N,Cin,H,W] with ``kernel`` [Cout,Cin,kh,kw]."""
    x, kernel = _lift(x), _lift(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}"
        )
    n, cin, h, w = x.shape
    cout, ck, kh, kw = kernel.shape
    if ck != cin:
        raise ShapeError(
            f"conv2d: kernel channels {kernel.shape} do not match input {x.shape}"
        )
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ConfigError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    if (h + 2 * padding - kh) % stride or (w + 2 * padding - kw) % stride:
        raise ConfigError(
            f"conv2d: non-integral output extent for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    data = np.einsum("nchwij,ocij->nohw", windows, kernel.data, optimize=False)

    def vjp(g):
        gx = gk = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.einsum(
                        "nohw,oc->nchw", g, kernel.data[:, :, i, j], optimize=False
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        if kernel.requires_grad:
            gk = np.einsum("nohw,nchwij->ocij", g, windows, optimize=False)
        return gx, gk

    return Tensor._from_op(data, (x, kernel), vjp)


# -- normalizers -------------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax. -inf entries come out as exact zeros."""
    x = _lift(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * data, axis=axis, keepdims=True)
        return ((g - inner) * data,)

    return Tensor._from_op(data, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _lift(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    data = shifted - lse

    def vjp(g):
        return (g - np.exp(data) * np.sum(g, axis=axis, keepdims=True),)

    return Tensor._from_op(data, (x,), vjp)


# -- reductions ---------------------------------------------------------------------


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(a % ndim for a in axes)


def reduce_sum(x, axes=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    axes_t = _norm_axes(axes, x.ndim)
    data = np.sum(x.data, axis=axes_t, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes_t)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return Tensor._from_op(data, (x,), vjp)


def reduce_mean(x, axes=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    axes_t = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes_t])) if axes_t else 1
    data = np.mean(x.data, axis=axes_t, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes_t)
        return (np.broadcast_to(g / count, x.data.shape).copy(),)

    return Tensor._from_op(data, (x,), vjp)


# -- structural ops -------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return Tensor._from_op(data, (x,), vjp)


def permute(x, axes) -> Tensor:
    x = _lift(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} do not match tensor of rank {x.ndim}")
    data = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return Tensor._from_op(data, (x,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ContractError("concat requires at least one tensor")
    axis = axis % tensors[0].ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor._from_op(data, tuple(tensors), vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def _is_fancy(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def take(x, idx) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    x = _lift(x)
    data = x.data[idx]
    if data.base is not None:
        data = data.copy()
    fancy = _is_fancy(idx)

    def vjp(g):
        gx = np.zeros_like(x.data)
        if fancy:
            np.add.at(gx, idx, g)
        else:
            gx[idx] += g
        return (gx,)

    return Tensor._from_op(data, (x,), vjp)


def embedding(weight, ids) -> Tensor:
    """Row lookup into ``weight`` [V, d] by an integer id array."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError(f"embedding ids must be integers, got dtype {ids.dtype}")
    return take(weight, ids)
