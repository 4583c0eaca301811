"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.

Values are float64 numpy arrays. Each operation returns a new `Tensor` holding
the result plus a closure that routes upstream gradients to its inputs, so any
scalar built from the primitive set below can be differentiated with a single
`backward` call. The primitive set is deliberately closed: matmul, conv2d,
add (including bias broadcast), relu, square, scalar scale, reduce_mean,
reshape, sin_sq_affine, softmax_cross_entropy, and the straight-through
substitution `ste`.

Graph structure is implicit: tensors record their parents, and every tensor
gets a monotonically increasing `node_id` at creation, so creation order is a
topological order of the DAG and the backward pass is a reverse sweep by id.
All computation is single-threaded and deterministic; any operation that would
produce a NaN/Inf raises `NonFiniteError` instead of returning.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DimensionError, NonFiniteError, ParameterError

_node_ids = itertools.count()


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot.

    Leaf tensors created with ``requires_grad=True`` are trainable parameters;
    tensors produced by operations carry the graph links used by `backward`.
    Data written by a producing op is never mutated afterwards (parameters are
    the single exception: the training loop updates them between steps, when
    no live graph references their values).
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor contains non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.node_id = next(_node_ids)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def backward(root: Tensor, params=()) -> None:
    """Populate `grad` on every tensor reachable from the scalar `root`.

    Gradients accumulate in reverse creation order, which is a valid reverse
    topological order because every parent predates its children. Parameters
    listed in `params` that the root does not depend on get a zero-filled
    gradient rather than none at all.
    """
    if root.data.size != 1:
        raise DimensionError(
            f"backward root must be a scalar, got shape {root.data.shape}"
        )
    reachable = []
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        reachable.append(node)
        stack.extend(node._parents)
    root._accum(np.ones_like(root.data))
    for node in sorted(reachable, key=lambda n: n.node_id, reverse=True):
        if node._backward is not None:
            node._backward(node.grad)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def zero_grads(tensors) -> None:
    """Drop accumulated gradients so the next backward starts fresh."""
    for t in tensors:
        t.grad = None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D tensors")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def _bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return Tensor(out_data, _parents=(a, b), _backward=_bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may be a bias vector broadcast over a batch.

    Supported shapes: identical shapes, [N,C]+[C] (dense bias), and
    [N,F,H,W]+[F] (conv bias per output channel). Nothing more general.
    """
    if a.shape == b.shape:
        out_data = a.data + b.data
        reduce_b = None
    elif a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        out_data = a.data + b.data
        reduce_b = (0,)
    elif a.data.ndim == 4 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        out_data = a.data + b.data.reshape(1, -1, 1, 1)
        reduce_b = (0, 2, 3)
    else:
        raise DimensionError(f"add cannot combine shapes {a.shape} and {b.shape}")

    def _bw(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g if reduce_b is None else g.sum(axis=reduce_b))

    return Tensor(out_data, _parents=(a, b), _backward=_bw)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0.0
    out_data = np.where(mask, x.data, 0.0)

    def _bw(g):
        x._accum(g * mask)

    return Tensor(out_data, _parents=(x,), _backward=_bw)


def square(x: Tensor) -> Tensor:
    out_data = x.data * x.data

    def _bw(g):
        x._accum(g * (2.0 * x.data))

    return Tensor(out_data, _parents=(x,), _backward=_bw)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply every element by the Python scalar `c`."""
    c = float(c)
    if not np.isfinite(c):
        raise ParameterError("scale factor must be finite")
    out_data = c * x.data

    def _bw(g):
        x._accum(c * g)

    return Tensor(out_data, _parents=(x,), _backward=_bw)


def reduce_mean(x: Tensor) -> Tensor:
    """Arithmetic mean of all entries, returned as a shape-[1] scalar."""
    if x.data.size == 0:
        raise DimensionError("reduce_mean of an empty tensor")
    n = x.data.size
    out_data = np.array([np.mean(x.data)])

    def _bw(g):
        x._accum(np.full(x.shape, g[0] / n))

    return Tensor(out_data, _parents=(x,), _backward=_bw)


def reshape(x: Tensor, shape) -> Tensor:
    """View `x` with a new shape of the same total size (row-major order)."""
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"cannot reshape size {x.data.size} to {shape}")
    out_data = x.data.reshape(shape).copy()

    def _bw(g):
        x._accum(g.reshape(x.shape))

    return Tensor(out_data, _parents=(x,), _backward=_bw)


def sin_sq_affine(x: Tensor, period: float, delta: float) -> Tensor:
    """Elementwise sin²(π·(x + delta) / period).

    Zero exactly where (x + delta) is an integer multiple of `period`, which
    is what lets a quantizer's level lattice be encoded as the minima of a
    smooth penalty. Gradient: (π/period)·sin(2π·(x + delta)/period).
    """
    period = float(period)
    delta = float(delta)
    if not period > 0.0:
        raise ParameterError(f"period must be positive, got {period}")
    t = (x.data + delta) / period
    s = np.sin(np.pi * t)
    out_data = s * s

    def _bw(g):
        x._accum(g * (np.pi / period) * np.sin(2.0 * np.pi * t))

    return Tensor(out_data, _parents=(x,), _backward=_bw)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels under softmax.

    Computed with max-subtraction so saturated logits cannot overflow.
    Gradient w.r.t. the logits is (softmax - onehot) / batch.
    """
    z = logits.data
    if z.ndim != 2:
        raise DimensionError("logits must be [batch, classes]")
    y = np.asarray(labels, dtype=np.int64)
    n, c = z.shape
    if y.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    if np.any(y < 0) or np.any(y >= c):
        raise IndexError(f"label out of range for {c} classes")
    zs = z - z.max(axis=1, keepdims=True)
    ez = np.exp(zs)
    sez = ez.sum(axis=1)
    losses = np.log(sez) - zs[np.arange(n), y]
    out_data = np.array([np.mean(losses)])

    def _bw(g):
        p = ez / sez[:, None]
        p[np.arange(n), y] -= 1.0
        logits._accum(p * (g[0] / n))

    return Tensor(out_data, _parents=(logits,), _backward=_bw)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of [N,C,H,W] input with an [F,C,Kh,Kw] kernel.

    No kernel flip. The output spatial size (H + 2·padding - Kh)/stride + 1
    must come out a positive integer or the shapes are rejected.
    """
    stride = int(stride)
    padding = int(padding)
    if stride < 1:
        raise ParameterError("stride must be a positive integer")
    if padding < 0:
        raise ParameterError("padding must be non-negative")
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"kernel channels {ck} != input channels {c}")
    ho, rh = divmod(h + 2 * padding - kh, stride)
    wo, rw = divmod(w + 2 * padding - kw, stride)
    ho += 1
    wo += 1
    if rh != 0 or rw != 0 or ho <= 0 or wo <= 0:
        raise DimensionError(
            f"conv2d output size not a positive integer for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # Gather every kernel-window offset as a strided slice: cols[n,c,i,j,oh,ow]
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    out_data = np.moveaxis(np.tensordot(cols, kernel.data, axes=([1, 2, 3], [1, 2, 3])), 3, 1)

    def _bw(g):
        if kernel.requires_grad:
            kernel._accum(np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5])))
        if x.requires_grad:
            # tensordot leaves (N,Ho,Wo,C,Kh,Kw); rearrange to match cols
            dcols = np.transpose(
                np.tensordot(g, kernel.data, axes=([1], [0])), (0, 3, 4, 5, 1, 2)
            )
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, i, j
                    ]
            x._accum(dxp[:, :, padding : padding + h, padding : padding + w])

    return Tensor(out_data, _parents=(x, kernel), _backward=_bw)


def ste(shadow: Tensor, quantized: np.ndarray) -> Tensor:
    """Use `quantized` values in the forward pass, gradients flow to `shadow`.

    The straight-through estimator: the quantizer is treated as the identity
    during backpropagation, so the full-precision shadow weights receive the
    gradient evaluated at the quantized point.
    """
    q = np.asarray(quantized, dtype=np.float64)
    if q.shape != shadow.shape:
        raise DimensionError("quantized values must match the shadow weight shape")

    def _bw(g):
        shadow._accum(g)

    return Tensor(q, _parents=(shadow,), _backward=_bw)
