"""Dense float64 tensors with tape-based reverse-mode autodiff.

Define-by-run: every op that touches a grad-requiring input records a
backward closure on the output node; `backward(loss)` walks the graph in
reverse topological order and accumulates exact gradients into `.grad`
buffers. Shapes are row-major numpy arrays; everything is 64-bit.

Hot inference paths do not go through this module (see pdp.kernels); the
tape exists for training, where the graph is rebuilt every step.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .rng import Rng


class OpShapeError(ValueError):
    """Raised when operand shapes are invalid for an op."""

    def __init__(self, op: str, shapes, msg: str = ""):
        detail = f"{op}: invalid shapes {[tuple(s) for s in shapes]}"
        if msg:
            detail += f" ({msg})"
        super().__init__(detail)
        self.op = op
        self.shapes = [tuple(s) for s in shapes]


class NonScalarLossError(ValueError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation / rollouts)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar (constants allowed on either side)
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __getitem__(self, key):
        return slice_(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g.reshape(t.data.shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to `shape` (the pre-broadcast operand shape)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad on every reachable grad-requiring tensor with d(loss)/d(t)."""
    if loss.data.size != 1:
        raise NonScalarLossError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._spent:
        raise RuntimeError("second backward on the same graph; re-run the forward pass first")
    loss._spent = True
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
            node.grad = None if node._parents else node.grad  # free intermediates


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise OpShapeError("add", [a.shape, b.shape]) from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise OpShapeError("sub", [a.shape, b.shape]) from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise OpShapeError("mul", [a.shape, b.shape]) from None

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 1:
        raise OpShapeError("matmul", [a.shape, b.shape], "operands must have ndim >= 1")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise OpShapeError("matmul", [a.shape, b.shape], "inner dimensions must agree") from None

    def bwd(g):
        at = np.swapaxes(a.data, -1, -2) if a.ndim >= 2 else a.data
        bt = np.swapaxes(b.data, -1, -2) if b.ndim >= 2 else b.data
        _accum(a, _unbroadcast(np.matmul(g, bt), a.data.shape))
        _accum(b, _unbroadcast(np.matmul(at, g), b.data.shape))

    return _make(data, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def bwd(g):
        _accum(x, g * (x.data > 0.0))

    return _make(data, (x,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    data = 0.5 * x.data * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        _accum(x, g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du))

    return _make(data, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bwd(g):
        _accum(x, g * (1.0 - t * t))

    return _make(t, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def bwd(g):
        _accum(x, g * e)

    return _make(e, (x,), bwd)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def bwd(g):
        _accum(x, g / x.data)

    return _make(data, (x,), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def bwd(g):
        _accum(x, g * inside)

    return _make(data, (x,), bwd)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise OpShapeError("minimum", [a.shape, b.shape])
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def bwd(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _make(data, (a, b), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise OpShapeError("layer_norm", [x.shape, gamma.shape, beta.shape])
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    data = y * gamma.data + beta.data

    def bwd(g):
        gy = g * gamma.data
        _accum(x, inv * (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True)))
        axes = tuple(range(x.ndim - 1))
        _accum(gamma, (g * y).sum(axis=axes))
        _accum(beta, g.sum(axis=axes))

    return _make(data, (x, gamma, beta), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape) / count)

    return _make(data, (x,), bwd)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(data, (x,), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements; scalar output."""
    if a.shape != b.shape:
        raise OpShapeError("mse", [a.shape, b.shape])
    diff = a.data - b.data
    data = np.asarray((diff * diff).mean())
    n = diff.size

    def bwd(g):
        s = 2.0 * g / n
        _accum(a, s * diff)
        _accum(b, -s * diff)

    return _make(data, (a, b), bwd)


def sinusoidal_embed(t: Tensor, dim: int, base: float = 10000.0) -> Tensor:
    """Map scalar positions (...,) to (..., dim) sin/cos features."""
    if dim % 2 != 0:
        raise OpShapeError("sinusoidal_embed", [t.shape], "dim must be even")
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    ang = t.data[..., None] * freqs
    data = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)

    def bwd(g):
        gs, gc = g[..., :half], g[..., half:]
        _accum(t, ((gs * np.cos(ang) - gc * np.sin(ang)) * freqs).sum(axis=-1))

    return _make(data, (t,), bwd)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise OpShapeError("concat", [t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(data, tuple(tensors), bwd)


def slice_(x: Tensor, key) -> Tensor:
    data = x.data[key]

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[key] = g
            _accum(x, full)

    return _make(data, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(data, (x,), bwd)


def transpose(x: Tensor, axes) -> Tensor:
    data = x.data.transpose(axes)
    inv = np.argsort(axes)

    def bwd(g):
        _accum(x, g.transpose(inv))

    return _make(data, (x,), bwd)


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Embedding lookup: table (V, d), idx int array (...,) -> (..., d)."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise OpShapeError("gather_rows", [table.shape], f"index out of range: {idx.min()}..{idx.max()}")
    data = table.data[idx]

    def bwd(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            _accum(table, full)

    return _make(data, (table,), bwd)


def dropout(x: Tensor, p: float, rng: Rng, training: bool) -> Tensor:
    """Inverted-scaling dropout; identity when not training."""
    if not training or p <= 0.0:
        return x
    keep = (rng.uniform(x.shape) >= p) / (1.0 - p)
    data = x.data * keep

    def bwd(g):
        _accum(x, g * keep)

    return _make(data, (x,), bwd)


def scaled_dot_product_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int = 1,
    dropout_p: float = 0.0,
    rng: Rng | None = None,
    training: bool = False,
) -> Tensor:
    """Multi-head attention on (B, T, d) inputs, composed from primitives."""
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise OpShapeError("scaled_dot_product_attention", [q.shape, k.shape, v.shape], "expect (B, T, d)")
    bq, tq, d = q.shape
    bk, tk, dk = k.shape
    if (bq, d) != (bk, dk) or k.shape != v.shape or d % n_heads != 0:
        raise OpShapeError("scaled_dot_product_attention", [q.shape, k.shape, v.shape])
    dh = d // n_heads
    qh = transpose(reshape(q, (bq, tq, n_heads, dh)), (0, 2, 1, 3))
    kh = transpose(reshape(k, (bk, tk, n_heads, dh)), (0, 2, 3, 1))
    vh = transpose(reshape(v, (bk, tk, n_heads, dh)), (0, 2, 1, 3))
    scores = mul(matmul(qh, kh), _as_tensor(1.0 / math.sqrt(dh)))
    probs = softmax(scores, axis=-1)
    if dropout_p > 0.0 and training:
        probs = dropout(probs, dropout_p, rng, training)
    out = matmul(probs, vh)
    return reshape(transpose(out, (0, 2, 1, 3)), (bq, tq, d))


def kl_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean over batch rows of KL(N(mu, exp(logvar)) || N(0, I)); scalar."""
    if mu.shape != logvar.shape:
        raise OpShapeError("kl_gaussian", [mu.shape, logvar.shape])
    ev = np.exp(logvar.data)
    per = 0.5 * (mu.data**2 + ev - 1.0 - logvar.data)
    rows = max(1, int(np.prod(mu.shape[:-1])))
    data = np.asarray(per.sum() / rows)

    def bwd(g):
        _accum(mu, g * mu.data / rows)
        _accum(logvar, g * 0.5 * (ev - 1.0) / rows)

    return _make(data, (mu, logvar), bwd)


_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "layer_norm": layer_norm,
    "softmax": softmax,
    "relu": relu,
    "gelu": gelu,
    "sinusoidal_embed": sinusoidal_embed,
    "concat": concat,
    "slice": slice_,
    "mean": mean,
    "mse": mse,
    "scaled_dot_product_attention": scaled_dot_product_attention,
    "dropout": dropout,
    "kl_gaussian": kl_gaussian,
}


def forward_op(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch by op name; the uniform surface used by the gradient-check suite."""
    if op_kind not in _OPS:
        raise KeyError(f"unknown op_kind {op_kind!r}; supported: {sorted(_OPS)}")
    return _OPS[op_kind](*inputs, **kwargs)
