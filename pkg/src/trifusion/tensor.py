"""Dense f32 tensors with reverse-mode automatic differentiation.

A Tape records operations as they execute (define-by-run); backward() walks
the recorded nodes once in reverse and accumulates gradients into every
watched leaf.  Tapes are rebuilt per forward pass and are confined to one
thread; plain parameter arrays can be shared freely and watched on as many
tapes as needed.

Design constraints kept deliberately tight:
  * f32 buffers everywhere, row-major, explicit shapes;
  * no broadcasting except scalar * tensor (scale);
  * relu subgradient at exactly 0 is 0.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError


class Node:
    """One recorded operation: where its gradient flows and how."""

    __slots__ = ("idx", "edges", "needs", "leaf")

    def __init__(self, idx, edges, needs, leaf=None):
        self.idx = idx
        self.edges = edges  # tuple of (Node, grad_fn)
        self.needs = needs
        self.leaf = leaf  # leaf Tensor to deliver the gradient to


class Tape:
    """Append-only operation record; inputs always precede their consumers."""

    def __init__(self):
        self.nodes = []

    def _node(self, edges, needs, leaf=None):
        node = Node(len(self.nodes), edges, needs, leaf)
        self.nodes.append(node)
        return node

    def watch(self, data) -> "Tensor":
        """Wrap an array as a gradient-tracked leaf on this tape."""
        return Tensor(data, tape=self, requires_grad=True)


class Tensor:
    """Shape + flat f32 buffer, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node", "grad", "_f64")

    def __init__(self, data, tape=None, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        self.data = arr
        self.tape = None
        self.node = None
        self.grad = None
        self._f64 = None
        if tape is not None and requires_grad:
            self.tape = tape
            self.node = tape._node((), needs=True, leaf=self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        """Scalar value; f64 reduction result when one was kept."""
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        if self._f64 is not None:
            return float(self._f64)
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, tape={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return scale(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data, inputs_and_grads):
    """Build the output tensor, recording a node when any input is taped."""
    tape = None
    for t, _ in inputs_and_grads:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ContractError("operation mixes tensors from two tapes")
            tape = t.tape
    out = Tensor(data)
    if tape is None:
        return out
    edges = tuple((t.node, fn) for t, fn in inputs_and_grads if t.node is not None)
    needs = any(n.needs for n, _ in edges)
    if edges:
        out.tape = tape
        out.node = tape._node(edges, needs)
    return out


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, [(a, lambda g: g), (b, lambda g: g)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, [(a, lambda g: g * bd), (b, lambda g: g * ad)])


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(x.data * np.float32(s), [(x, lambda g: g * np.float32(s))])


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, np.float32(0.0)), [(x, lambda g: g * mask)])


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add one bias per leading channel of a (C, H, W) map.

    The only non-scalar broadcast in the op set; its gradient for b is the
    spatial sum per channel.
    """
    if x.data.ndim != 3 or b.data.ndim != 1 or b.data.shape[0] != x.data.shape[0]:
        raise DimensionError(f"bias_add: map {x.data.shape} vs bias {b.data.shape}")
    return _result(
        x.data + b.data[:, None, None],
        [(x, lambda g: g), (b, lambda g: g.sum(axis=(1, 2)))],
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul: expected 2-d operands, got {a.data.shape} x {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: inner dims {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, [(a, lambda g: g @ bd.T), (b, lambda g: ad.T @ g)])


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (C_in,H,W) with (C_out,C_in,kh,kw)."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: got input {x.data.shape}, kernel {w.data.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    ci, h, wi = x.data.shape
    co, wci, kh, kw = w.data.shape
    if wci != ci:
        raise DimensionError(f"conv2d: kernel expects {wci} channels, input has {ci}")
    if kh > h + 2 * padding or kw > wi + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{wi + 2 * padding}")
    xd, wd = x.data, w.data
    y = kernels.conv2d_forward(xd, wd, stride, padding)
    return _result(
        y,
        [
            (x, lambda g: kernels.conv2d_dx(g, wd, stride, padding, h, wi)),
            (w, lambda g: kernels.conv2d_dw(g, xd, stride, padding, kh, kw)),
        ],
    )


def conv2d_transpose(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d; kernel layout (C_in, C_out, kh, kw).

    Output spatial dims: stride*(H-1) + kh - 2*padding.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv2d_transpose: got input {x.data.shape}, kernel {w.data.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d_transpose: stride must be >= 1, got {stride}")
    ci, h, wi = x.data.shape
    wci, co, kh, kw = w.data.shape
    if wci != ci:
        raise DimensionError(f"conv2d_transpose: kernel expects {wci} channels, input has {ci}")
    ho = stride * (h - 1) + kh - 2 * padding
    wo = stride * (wi - 1) + kw - 2 * padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d_transpose: output dims {ho}x{wo} collapse")
    xd, wd = x.data, w.data
    y = kernels.conv2d_dx(xd, wd, stride, padding, ho, wo)
    return _result(
        y,
        [
            (x, lambda g: kernels.conv2d_forward(g, wd, stride, padding)),
            (w, lambda g: kernels.conv2d_dw(xd, g, stride, padding, kh, kw)),
        ],
    )


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x: Tensor, new_shape) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != x.data.size:
        raise DimensionError(f"reshape: {x.data.shape} -> {new_shape} changes element count")
    old_shape = x.data.shape
    return _result(x.data.reshape(new_shape), [(x, lambda g: g.reshape(old_shape))])


def transpose(x: Tensor, perm) -> Tensor:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(x.data.ndim)):
        raise DimensionError(f"transpose: {perm} is not a permutation of {x.data.ndim} axes")
    inv = np.argsort(perm)
    return _result(
        np.ascontiguousarray(np.transpose(x.data, perm)),
        [(x, lambda g: np.ascontiguousarray(np.transpose(g, inv)))],
    )


def concat_rows(parts) -> Tensor:
    """Stack 2-d blocks along axis 0; gradient slices back per block."""
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_rows: empty input")
    ncols = parts[0].data.shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != ncols:
            raise DimensionError("concat_rows: blocks must be 2-d with equal column counts")
    data = np.concatenate([p.data for p in parts], axis=0)

    def slice_grad(start, stop):
        return lambda g: g[start:stop]

    edges = []
    row = 0
    for p in parts:
        n = p.data.shape[0]
        edges.append((p, slice_grad(row, row + n)))
        row += n
    return _result(data, edges)


# ---------------------------------------------------------------------------
# reductions and nonlinear blocks


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-stable softmax along the last axis (max subtraction)."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (g - dot) * y

    return _result(y, [(x, grad)])


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor (f64 reduction kept for checks)."""
    total = x.data.sum(dtype=np.float64)
    shape = x.data.shape
    out = _result(np.float32(total), [(x, lambda g: np.full(shape, g, dtype=np.float32))])
    out._f64 = float(total)
    return out


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mse_loss")
    diff = a.data - b.data
    n = diff.size
    val = np.square(diff, dtype=np.float64).sum() / n
    out = _result(
        np.float32(val),
        [
            (a, lambda g: (np.float32(2.0 / n) * g) * diff),
            (b, lambda g: (np.float32(-2.0 / n) * g) * diff),
        ],
    )
    out._f64 = float(val)
    return out


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor):
    """Propagate d(loss)/d(leaf) to every watched leaf.

    Returns a dict mapping each leaf Tensor that received a gradient to its
    gradient array; the same array is stored on the leaf's .grad.
    """
    if loss.tape is None or loss.node is None:
        raise ContractError("backward: loss is not attached to a tape")
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    tape = loss.tape
    top = loss.node.idx
    gbuf = [None] * (top + 1)
    gbuf[top] = np.ones_like(loss.data)
    grads = {}
    for node in reversed(tape.nodes[: top + 1]):
        g = gbuf[node.idx]
        if g is None or not node.needs:
            continue
        gbuf[node.idx] = None
        if node.leaf is not None:
            leaf = node.leaf
            leaf.grad = g
            grads[leaf] = g
            continue
        for in_node, fn in node.edges:
            if not in_node.needs:
                continue
            contrib = fn(g)
            if gbuf[in_node.idx] is None:
                gbuf[in_node.idx] = contrib
            else:
                gbuf[in_node.idx] = gbuf[in_node.idx] + contrib
    return grads


def grad_check(f, x, eps: float = 1e-3, samples: int = 10, seed: int = 0) -> float:
    """Max relative error between backward() and central differences.

    f maps a Tensor to a scalar Tensor.  Coordinates whose input value is
    exactly 0 are excluded from sampling (relu kink).  The difference
    quotient is accumulated in f64; forward evaluations stay f32.
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    x = np.ascontiguousarray(x, dtype=np.float32)
    tape = Tape()
    xt = tape.watch(x)
    out = f(xt)
    if out.data.size != 1:
        raise ContractError("grad_check: f must be scalar-valued")
    backward(out)
    analytic = xt.grad.reshape(-1).astype(np.float64)

    flat = x.reshape(-1)
    eligible = np.nonzero(flat != 0.0)[0]
    if eligible.size == 0:
        raise ContractError("grad_check: no coordinate eligible for sampling")
    rng = np.random.default_rng(seed)
    k = min(samples, eligible.size)
    coords = rng.choice(eligible, size=k, replace=False)

    worst = 0.0
    for i in coords:
        i = int(i)
        xp = flat.copy()
        xp[i] = np.float32(flat[i] + np.float32(eps))
        fp = f(Tensor(xp.reshape(x.shape))).item()
        xm = flat.copy()
        xm[i] = np.float32(flat[i] - np.float32(eps))
        fm = f(Tensor(xm.reshape(x.shape))).item()
        step = float(xp[i]) - float(xm[i])
        fd = (fp - fm) / step
        denom = max(abs(fd), abs(analytic[i]), 1e-12)
        worst = max(worst, abs(fd - analytic[i]) / denom)
    return worst
