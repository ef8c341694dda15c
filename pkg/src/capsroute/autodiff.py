"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation produces a new :class:`Tensor`.  When at least one input
requires a gradient the result keeps references to its parents and a closure
that maps the output adjoint to input adjoints.  :func:`backward` linearises
the graph into a :class:`Tape` (a topological order) and replays it in
reverse.

Broadcasting is limited on purpose: binary elementwise operations accept
operands of identical shape, or a Python scalar / 0-d tensor on one side.
Anything else must be made explicit with :func:`expand` or :func:`reshape`.
"""

from __future__ import annotations

import contextlib
import functools
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "no_grad",
    "backward",
    "grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "sqrt",
    "relu",
    "matmul",
    "einsum",
    "conv2d",
    "softmax",
    "vector_norm",
    "radial_map",
    "tsum",
    "mean",
    "reshape",
    "transpose",
    "expand",
    "numerical_gradient",
    "relative_error",
]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, analysis)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """An N-dimensional float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


class Tape:
    """A recorded computation: non-leaf tensors in topological order.

    ``nodes[k]`` never depends on ``nodes[m]`` for ``m > k``, so iterating the
    list backwards visits every operation after all of its consumers.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        return cls([n for n in order if n._parents])

    def backward(self, output: Tensor, seed: np.ndarray) -> dict[int, np.ndarray]:
        """Propagate ``seed`` (d loss / d output) and return adjoints keyed by ``id``."""
        adjoints: dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self.nodes):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(
                        f"{node.op}: adjoint shape {pg.shape} does not match input {parent.shape}"
                    )
                if parent.is_leaf:
                    parent.grad = pg if parent.grad is None else parent.grad + pg
                    continue
                key = id(parent)
                adjoints[key] = adjoints[key] + pg if key in adjoints else pg
        return adjoints


def backward(loss: Tensor, seed=None) -> Tape:
    """Accumulate d loss / d leaf into ``.grad`` of every leaf that requires it."""
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires a gradient")
    if seed is None:
        if loss.size != 1:
            raise ShapeError("seed is required for non-scalar outputs")
        seed = np.ones_like(loss.data)
    seed = np.asarray(seed, dtype=np.float64)
    if loss.is_leaf:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return Tape([])
    tape = Tape.record(loss)
    tape.backward(loss, seed)
    return tape


def grad(output: Tensor, inputs: Sequence[Tensor], seed=None) -> list[np.ndarray]:
    """Return d output / d input for each input, leaving the inputs' ``.grad`` as it was."""
    saved = [t.grad for t in inputs]
    for t in inputs:
        t.grad = None
    try:
        backward(output, seed)
        return [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]
    finally:
        for t, g in zip(inputs, saved):
            t.grad = g


# elementwise arithmetic ----------------------------------------------------

def _binary_operands(a, b, op: str):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ; expand explicitly")
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def _bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _node(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def _bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _node(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def _bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), _bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    out = a.data / b.data

    def _bw(g):
        return _reduce_to(g / b.data, a.shape), _reduce_to(-g * out / b.data, b.shape)

    return _node(out, (a, b), _bw, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    p = float(exponent)
    out = a.data**p

    def _bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _node(out, (a,), _bw, "power")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    a = _as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


# linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )

    def _bw(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), _bw, "matmul")


def _parse_einsum(spec: str) -> tuple[str, str, str]:
    spec = spec.replace(" ", "")
    lhs, _, out = spec.partition("->")
    if not _:
        raise ValueError("einsum spec needs an explicit '->' output")
    parts = lhs.split(",")
    if len(parts) != 2:
        raise ValueError("einsum supports exactly two operands")
    sa, sb = parts
    for s in (sa, sb, out):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index in einsum term {s!r}")
    if not set(out) <= set(sa) | set(sb):
        raise ValueError(f"output indices {out!r} not present in operands")
    return sa, sb, out


def _contract(sa: str, sb: str, so: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Evaluate ``einsum(sa,sb->so)`` as one batched matrix product.

    Indices are split into batch (in a, b and out), contracted (in a and b
    only), kept-from-a and kept-from-b; an index that lives in a single
    operand and not in the output is summed out first.
    """
    a_only = [c for c in sa if c not in sb and c not in so]
    b_only = [c for c in sb if c not in sa and c not in so]
    if a_only:
        a = a.sum(axis=tuple(sa.index(c) for c in a_only))
        sa = "".join(c for c in sa if c not in a_only)
    if b_only:
        b = b.sum(axis=tuple(sb.index(c) for c in b_only))
        sb = "".join(c for c in sb if c not in b_only)
    batch = [c for c in so if c in sa and c in sb]
    contr = [c for c in sa if c in sb and c not in so]
    keep_a = [c for c in sa if c not in sb]
    keep_b = [c for c in sb if c not in sa]
    size = {c: n for c, n in zip(sa, a.shape)}
    size.update({c: n for c, n in zip(sb, b.shape)})

    def prod(idx):
        return int(np.prod([size[c] for c in idx])) if idx else 1

    am = a.transpose([sa.index(c) for c in batch + keep_a + contr]).reshape(prod(batch), prod(keep_a), prod(contr))
    bm = b.transpose([sb.index(c) for c in batch + contr + keep_b]).reshape(prod(batch), prod(contr), prod(keep_b))
    res = np.matmul(am, bm).reshape([size[c] for c in batch + keep_a + keep_b])
    order = batch + keep_a + keep_b
    return np.ascontiguousarray(res.transpose([order.index(c) for c in so]))


def _einsum_adjoint(g, g_sub, other, other_sub, target_sub, target_shape):
    present = "".join(c for c in target_sub if c in g_sub or c in other_sub)
    partial = _contract(g_sub, other_sub, present, g, other)
    if present == target_sub:
        return partial
    # an index summed inside one operand only comes back as a broadcast
    shape = [n if c in present else 1 for c, n in zip(target_sub, target_shape)]
    return np.ascontiguousarray(np.broadcast_to(partial.reshape(shape), target_shape))


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand Einstein summation, e.g. ``einsum("ijdk,nik->nijd", w, u)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb, so = _parse_einsum(spec)
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise ShapeError(f"einsum {spec!r}: operand ranks {a.ndim}, {b.ndim} do not match")
    sizes: dict[str, int] = {}
    for sub_, shp in ((sa, a.shape), (sb, b.shape)):
        for c, n in zip(sub_, shp):
            if sizes.setdefault(c, n) != n:
                raise ShapeError(f"einsum {spec!r}: index {c!r} has sizes {sizes[c]} and {n}")
    out = _contract(sa, sb, so, a.data, b.data)

    def _bw(g):
        ga = _einsum_adjoint(g, so, b.data, sb, sa, a.shape) if a.requires_grad else None
        gb = _einsum_adjoint(g, so, a.data, sa, sb, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), _bw, "einsum")


# convolution ---------------------------------------------------------------

def _same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


@functools.lru_cache(maxsize=32)
def _col2im_matrix(n, hp, wp, ho, wo, kh, kw, stride):
    """0/1 matrix summing im2col rows back onto padded input pixels.

    Rows index ``(n, y, x)``; columns index ``(n, oy, ox, i, j)`` and hit pixel
    ``(stride * oy + i, stride * ox + j)``.
    """
    oy, ox, i, j = np.meshgrid(np.arange(ho), np.arange(wo), np.arange(kh), np.arange(kw), indexing="ij")
    pix = ((stride * oy + i) * wp + (stride * ox + j)).ravel()
    per = pix.size
    rows = (np.arange(n)[:, None] * (hp * wp) + pix[None, :]).ravel()
    return sparse.csr_matrix(
        (np.ones(n * per), (rows, np.arange(n * per))), shape=(n * hp * wp, n * per)
    )


def conv2d(x, kernels, stride: int = 1, padding: str = "valid") -> Tensor:
    """2-D cross-correlation (no kernel flip), NCHW layout.

    ``x`` is ``[C_in, H, W]`` or ``[N, C_in, H, W]``; ``kernels`` is
    ``[C_out, C_in, kh, kw]``.  ``padding="valid"`` uses no padding, so
    ``H' = (H - kh) // stride + 1``.  ``padding="same"`` zero-pads so that
    ``H' = ceil(H / stride)``, with any odd remainder going to the bottom/right.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    if stride < 1:
        raise ValueError("stride must be positive")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects CHW/NCHW input and OIHW kernels, got {x.shape}, {kernels.shape}")
    n, c, h, w = xd.shape
    o, ck, kh, kw = kernels.shape
    if ck != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {ck}")
    if padding == "valid":
        pads = ((0, 0), (0, 0))
    elif padding == "same":
        pads = (_same_padding(h, kh, stride), _same_padding(w, kw, stride))
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if h + sum(pads[0]) < kh or w + sum(pads[1]) < kw:
        raise ShapeError(f"conv2d: input {h}x{w} is smaller than kernel {kh}x{kw}")
    xp = np.pad(xd, ((0, 0), (0, 0), pads[0], pads[1])) if padding == "same" else xd
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    # im2col: one row per output position, columns ordered (C, kh, kw) like the kernels
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kmat = kernels.data.reshape(o, c * kh * kw)
    out = (cols @ kmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out[0] if unbatched else out)

    def _bw(g):
        gmat = (g[None] if unbatched else g).transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gk = (gmat.T @ cols).reshape(kernels.shape) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            # column order (kh, kw, C) so each row block is contiguous for the scatter
            kmat_hwc = kernels.data.transpose(0, 2, 3, 1).reshape(o, kh * kw * c)
            dcols = (gmat @ kmat_hwc).reshape(n * ho * wo * kh * kw, c)
            scatter = _col2im_matrix(n, xp.shape[2], xp.shape[3], ho, wo, kh, kw, stride)
            gxp = (scatter @ dcols).reshape(n, xp.shape[2], xp.shape[3], c).transpose(0, 3, 1, 2)
            gx = gxp[:, :, pads[0][0] : pads[0][0] + h, pads[1][0] : pads[1][0] + w]
            gx = np.ascontiguousarray(gx[0] if unbatched else gx)
        return gx, gk

    return _node(out, (x, kernels), _bw, "conv2d")


# reductions and normalisers -------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(out))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), _bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[k] for k in axes])) if axes else 1
    return div(tsum(a, axis=axes, keepdims=keepdims), float(count))


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = _as_tensor(x)
    ax = _norm_axis(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _node(y, (x,), _bw, "softmax")


def vector_norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the zero vector is 0."""
    x = _as_tensor(x)
    ax = _norm_axis(axis, x.ndim)[0]
    n = np.sqrt((x.data * x.data).sum(axis=ax, keepdims=True))

    def _bw(g):
        gk = g if keepdims else np.expand_dims(g, ax)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, gk * x.data / safe, 0.0),)

    return _node(n if keepdims else np.squeeze(n, axis=ax), (x,), _bw, "norm")


def radial_map(x, ratio: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]], axis: int = -1, op: str = "radial") -> Tensor:
    """Rescale each vector along ``axis`` by a function of its own length.

    ``out = x * h(|x|)``.  ``ratio(n)`` must return ``(h(n), h'(n) / n)``, both
    finite at ``n = 0``, so direction-preserving maps with a removable
    singularity at the origin (all squash variants) stay well defined.
    """
    x = _as_tensor(x)
    ax = _norm_axis(axis, x.ndim)[0]
    n = np.sqrt((x.data * x.data).sum(axis=ax, keepdims=True))
    h, dh_over_n = ratio(n)

    def _bw(g):
        return (g * h + x.data * (dh_over_n * (g * x.data).sum(axis=ax, keepdims=True)),)

    return _node(x.data * h, (x,), _bw, op)


# shape manipulation ---------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _node(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "transpose")


def expand(a, shape) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy rules); adjoints are summed back."""
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"cannot expand {a.shape} to {shape}") from exc
    lead = len(shape) - a.ndim

    def _bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(k for k, n in enumerate(a.shape) if n == 1 and g.shape[k] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (np.ascontiguousarray(g),)

    return _node(np.ascontiguousarray(out), (a,), _bw, "expand")


# finite differences ----------------------------------------------------------

def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4, indices: Iterable | None = None) -> np.ndarray:
    """Central finite differences of a scalar function of one array.

    When ``indices`` is given only those flat positions are perturbed and the
    result has one entry per index.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else list(indices)
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape) if indices is None else out


def relative_error(analytic, numeric) -> float:
    """``|a - n| / max(|a|, |n|)`` in the Euclidean norm; 0 when both vanish."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
