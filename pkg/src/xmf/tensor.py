"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is the implicit DAG of parent links: each operation
returns a fresh ``Tensor`` holding references to its operands together with
a closure that applies the local gradient rule.  ``backward`` walks that DAG
once in reverse topological order (operands always precede their results,
so the order exists by construction).  Calling ``backward`` a second time on
the same loss without a new forward pass raises ``UsageError``.

Shapes follow numpy conventions.  Elementwise ops broadcast, and gradients
of broadcast operands are summed back to the operand's shape.  ``matmul``
and ``softmax_rows`` act on the last two / last axis, so the same primitives
serve single matrices and stacked batches alike.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

from .errors import DataError, ParameterError, ParseError, ShapeError, UsageError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Suspend graph recording inside the block.

    Used by evaluation loops and by the finite-difference probes in
    ``check_gradients``, where building a graph would only cost time.
    """
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense float64 array, optionally carrying a gradient.

    ``values`` is the payload, ``grad`` is populated by ``backward`` and is
    always the same shape as ``values``.  Tensors created by operations on
    ``requires_grad`` inputs remember their operands and local gradient rule.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn", "_op", "_backward_ran")

    def __init__(self, values, requires_grad: bool = False):
        v = np.asarray(values, dtype=np.float64)
        self.values = v if v.flags["C_CONTIGUOUS"] else np.ascontiguousarray(v)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = "leaf"
        self._backward_ran = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op!r})"

    # Arithmetic sugar; the module-level functions do the work.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        src = self

        def rule(g):
            _accumulate(src, np.full(src.values.shape, float(g)))

        return _node(self.values.sum(), (self,), "sum", rule)

    def mean(self) -> "Tensor":
        src = self
        n = self.values.size

        def rule(g):
            _accumulate(src, np.full(src.values.shape, float(g) / n))

        return _node(self.values.mean(), (self,), "mean", rule)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self
        old = self.values.shape

        def rule(g):
            _accumulate(src, g.reshape(old))

        return _node(self.values.reshape(shape), (self,), "reshape", rule)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values, parents, op, rule) -> Tensor:
    """Wrap an op result; record the graph edge only when gradients can flow."""
    out = Tensor(values)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = rule
        out._op = op
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.values.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {t.values.shape}")
    if t.grad is None:
        t.grad = g.copy()  # copy: g may alias a child's grad through a view
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        values = a.values + b.values
    except ValueError:
        raise ShapeError(f"add: cannot broadcast shapes {a.shape} and {b.shape}") from None

    def rule(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.values.shape))

    return _node(values, (a, b), "add", rule)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        values = a.values * b.values
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast shapes {a.shape} and {b.shape}") from None

    def rule(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.values, b.values.shape))

    return _node(values, (a, b), "mul", rule)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes (stacked batches broadcast)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        values = a.values @ b.values
    except ValueError:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from None

    def rule(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ _swap(b.values), a.values.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(_swap(a.values) @ g, b.values.shape))

    return _node(values, (a, b), "matmul", rule)


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    inverse = tuple(np.argsort(axes))

    def rule(g):
        _accumulate(x, np.transpose(g, inverse))

    return _node(np.transpose(x.values, axes), (x,), "permute", rule)


def transpose_last2(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return permute(x, axes)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    ax = axis % values.ndim
    sizes = [t.values.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _node(values, tuple(tensors), "concat", rule)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.values > 0  # subgradient 0 at the kink

    def rule(g):
        _accumulate(x, g * mask)

    return _node(np.where(mask, x.values, 0.0), (x,), "relu", rule)


def softmax_rows(x) -> Tensor:
    """Row-stochastic softmax over the last axis, max-subtracted for stability."""
    x = _as_tensor(x)
    if x.ndim < 1:
        raise ShapeError("softmax_rows needs at least one axis")
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        _accumulate(x, s * (g - inner))

    return _node(s, (x,), "softmax_rows", rule)


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate`` and scale survivors.

    Evaluation mode (``training=False``) and ``rate == 0`` return the input
    unchanged, so the inference path is exactly the identity.
    """
    if not (0.0 <= rate < 1.0):
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode requires an rng")
    mask = (rng.random(x.values.shape) >= rate) / (1.0 - rate)

    def rule(g):
        _accumulate(x, g * mask)

    return _node(x.values * mask, (x,), "dropout", rule)


def conv2d(x, kernels, stride: int = 1) -> Tensor:
    """Valid (no padding) 2-D cross-correlation.

    ``x`` is ``(c_in, h, w)`` or batched ``(b, c_in, h, w)``; ``kernels`` is
    ``(c_out, c_in, kh, kw)``.  Output spatial dims are
    ``floor((h - kh) / stride) + 1`` by ``floor((w - kw) / stride) + 1``.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ParameterError(f"stride must be a positive integer, got {stride}")
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be 4-D (c_out, c_in, kh, kw), got {kernels.shape}")
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d input must be 3-D or 4-D, got {x.shape}")
    squeeze = x.ndim == 3
    xv = x.values[None] if squeeze else x.values
    b, ci, h, w = xv.shape
    co, ck, kh, kw = kernels.shape
    if ck != ci:
        raise ShapeError(f"conv2d: input has {ci} channels but kernels expect {ck} (shapes {x.shape} vs {kernels.shape})")
    if kh > h or kw > w:
        raise ShapeError(f"conv2d: kernel {kernels.shape} larger than input {x.shape}")

    win = np.lib.stride_tricks.sliding_window_view(xv, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, oh * ow, ci * kh * kw)
    wmat = kernels.values.reshape(co, ci * kh * kw)
    out = (cols @ wmat.T).transpose(0, 2, 1).reshape(b, co, oh, ow)

    def rule(g):
        gb = g[None] if squeeze else g
        gmat = gb.transpose(0, 2, 3, 1).reshape(b, oh * ow, co)
        if kernels.requires_grad:
            gw = gmat.reshape(b * oh * ow, co).T @ cols.reshape(b * oh * ow, ci * kh * kw)
            _accumulate(kernels, gw.reshape(co, ci, kh, kw))
        if x.requires_grad:
            dwin = (gmat @ wmat).reshape(b, oh, ow, ci, kh, kw)
            dx = np.zeros_like(xv)
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _accumulate(x, dx[0] if squeeze else dx)

    return _node(out[0] if squeeze else out, (x, kernels), "conv2d", rule)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels under softmax."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    b, k = logits.shape
    if b < 1:
        raise DataError("cross_entropy needs at least one sample")
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise DataError(f"labels shape {labels.shape} does not match batch size {b}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")

    shifted = logits.values - logits.values.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(b), labels].mean()
    probs = np.exp(log_p)

    def rule(g):
        grad = probs.copy()
        grad[np.arange(b), labels] -= 1.0
        _accumulate(logits, float(g) * grad / b)

    return _node(loss, (logits,), "cross_entropy", rule)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable ``requires_grad`` tensor.

    Gradients accumulate across fan-out within one pass and across passes on
    leaves (zero them between optimizer steps).  A second call on the same
    loss without a fresh forward raises ``UsageError``.
    """
    if loss.values.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._backward_ran:
        raise UsageError("backward already ran for this loss; run a new forward pass first")
    loss._backward_ran = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.values)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def check_gradients(forward, params, eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    ``forward`` must be a deterministic closure returning a scalar loss that
    reads the current ``values`` of every tensor in ``params``.  Returns the
    worst relative error ``|a - n| / max(|a|, |n|, 1e-8)`` over all parameter
    elements.  Nondeterminism (two identical calls disagreeing) raises
    ``UsageError``, as does a non-scalar loss.
    """
    params = list(params)
    with no_grad():
        first = forward()
        second = forward()
    if first.values.size != 1:
        raise UsageError(f"check_gradients needs a scalar loss, got shape {first.shape}")
    if not np.array_equal(first.values, second.values):
        raise UsageError("forward closure is nondeterministic; disable dropout and fix the rng")

    for p in params:
        p.zero_grad()
    loss = forward()
    backward(loss)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat_a = a.reshape(-1)
            for i in range(p.values.size):
                orig = p.values.flat[i]
                p.values.flat[i] = orig + eps
                f_plus = float(forward().values)
                p.values.flat[i] = orig - eps
                f_minus = float(forward().values)
                p.values.flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                err = abs(flat_a[i] - numeric) / max(abs(flat_a[i]), abs(numeric), 1e-8)
                if err > worst:
                    worst = err
    return worst


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init on +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


# ---------------------------------------------------------------------------
# XTEN serialization: little-endian binary, magic "XTEN", u32 rank,
# u64 dims[], f64 data[] in row-major order.  Checkpoints concatenate one
# record per parameter.
# ---------------------------------------------------------------------------

XTEN_MAGIC = b"XTEN"


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ParseError(f"truncated XTEN stream: wanted {n} bytes, got {len(data)}")
    return data


def write_xten(fh, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype="<f8")
    fh.write(XTEN_MAGIC)
    fh.write(struct.pack("<I", a.ndim))
    if a.ndim:
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    fh.write(a.tobytes())


def read_xten(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != XTEN_MAGIC:
        raise ParseError(f"bad XTEN magic {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
    return data.astype(np.float64).reshape(dims)
