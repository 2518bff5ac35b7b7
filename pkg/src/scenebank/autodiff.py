"""Reverse-mode automatic differentiation over dense float64 tensors.

Implements exactly the primitives the scene-classification pipeline needs:
elementwise arithmetic, 2-D convolution, spatial reduction, softmax, and a
bias-corrected Adam update. Graphs are recorded eagerly as tensors are
combined; calling ``backward()`` on a scalar result accumulates gradients
into every reachable leaf created with ``requires_grad=True``.

Everything is float64. Desk-scale problem sizes make the extra precision
cheaper than the debugging time it saves, and the finite-difference test
harness depends on it.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "absolute",
    "square",
    "log",
    "clip",
    "elementwise",
    "conv2d",
    "spatial_sum",
    "softmax",
    "vsum",
    "mean",
    "pick",
    "dropout",
    "AdamState",
    "adam_step",
]

Array = np.ndarray


class Tensor:
    """Dense float64 array with optional gradient accumulation.

    Operation results remember their parents and a backward closure; leaves
    carry data only. ``grad`` stays ``None`` until the first backward pass
    reaches the tensor, and accumulates across repeated backward calls until
    ``zero_grad()``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @classmethod
    def _result(cls, data: Array, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

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

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: Array, fresh: bool = False) -> None:
        # fresh=True promises g is a newly allocated array this tensor may own.
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g if fresh else np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        ``self`` must hold a single scalar. Visits each recorded operation
        exactly once, in reverse topological order.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
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
                if id(parent) not in seen:
                    stack.append((parent, False))
        # Interior (op-result) grads are scratch space for this pass only;
        # leaf grads persist so repeated backward calls accumulate.
        for node in topo:
            if node._backward is not None:
                node.grad = None
        self._accumulate(np.ones_like(self.data), fresh=True)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar; scalars and ndarrays are lifted to constant tensors.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} are not broadcastable"
        ) from None


def add(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)
    _check_broadcast(x, y, "add")
    out_data = x.data + y.data

    def backward(g: Array) -> None:
        gx = _unbroadcast(g, x.shape)
        x._accumulate(gx, fresh=gx is not g)
        gy = _unbroadcast(g, y.shape)
        y._accumulate(gy, fresh=gy is not g)

    return Tensor._result(out_data, (x, y), backward)


def sub(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)
    _check_broadcast(x, y, "sub")
    out_data = x.data - y.data

    def backward(g: Array) -> None:
        gx = _unbroadcast(g, x.shape)
        x._accumulate(gx, fresh=gx is not g)
        y._accumulate(_unbroadcast(-g, y.shape), fresh=True)

    return Tensor._result(out_data, (x, y), backward)


def mul(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)
    _check_broadcast(x, y, "mul")
    out_data = x.data * y.data

    def backward(g: Array) -> None:
        x._accumulate(_unbroadcast(g * y.data, x.shape), fresh=True)
        y._accumulate(_unbroadcast(g * x.data, y.shape), fresh=True)

    return Tensor._result(out_data, (x, y), backward)


def relu(x) -> Tensor:
    x = _lift(x)
    mask = x.data > 0

    def backward(g: Array) -> None:
        x._accumulate(g * mask, fresh=True)

    return Tensor._result(np.where(mask, x.data, 0.0), (x,), backward)


def sigmoid(x) -> Tensor:
    x = _lift(x)
    d = x.data
    # Split by sign so exp never overflows.
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g: Array) -> None:
        x._accumulate(g * out_data * (1.0 - out_data), fresh=True)

    return Tensor._result(out_data, (x,), backward)


def absolute(x) -> Tensor:
    x = _lift(x)
    sign = np.sign(x.data)  # sign(0) == 0: subgradient at the kink is 0

    def backward(g: Array) -> None:
        x._accumulate(g * sign, fresh=True)

    return Tensor._result(np.abs(x.data), (x,), backward)


def square(x) -> Tensor:
    x = _lift(x)

    def backward(g: Array) -> None:
        x._accumulate(g * (2.0 * x.data), fresh=True)

    return Tensor._result(x.data * x.data, (x,), backward)


def log(x) -> Tensor:
    """Natural log. Callers are responsible for keeping arguments positive."""
    x = _lift(x)

    def backward(g: Array) -> None:
        x._accumulate(g / x.data, fresh=True)

    return Tensor._result(np.log(x.data), (x,), backward)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only strictly inside the bounds."""
    x = _lift(x)
    inside = (x.data > lo) & (x.data < hi)

    def backward(g: Array) -> None:
        x._accumulate(g * inside, fresh=True)

    return Tensor._result(np.clip(x.data, lo, hi), (x,), backward)


_UNARY_OPS = {"relu": relu, "sigmoid": sigmoid, "abs": absolute, "square": square}
_BINARY_OPS = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch an elementwise operation by name.

    Binary ops take two operands of equal shape or shapes broadcastable via
    singleton dimensions; unary ops take one.
    """
    if op in _UNARY_OPS:
        if len(operands) != 1:
            raise ValueError(f"elementwise {op!r} takes exactly one operand")
        return _UNARY_OPS[op](*operands)
    if op in _BINARY_OPS:
        if len(operands) != 2:
            raise ValueError(f"elementwise {op!r} takes exactly two operands")
        return _BINARY_OPS[op](*operands)
    raise ValueError(f"unknown elementwise op {op!r}")


def _im2col(padded: Array, k: int, stride: int, out_h: int, out_w: int) -> Array:
    """[B,C,Hp,Wp] -> [C*k*k, B*out_h*out_w] patch matrix (copies)."""
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    c = padded.shape[1]
    return windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, -1)


def conv2d(x, kernels, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with square kernels.

    x: [C_in,H,W] or batched [B,C_in,H,W]; kernels: [C_out,C_in,k,k];
    bias: [C_out]. Output spatial size follows
    floor((H + 2*padding - k)/stride) + 1. Differentiable w.r.t. all three
    tensor arguments. The heavy lifting is one BLAS matmul over an im2col
    patch matrix.
    """
    x, kernels, bias = _lift(x), _lift(kernels), _lift(bias)
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"conv2d: stride must be a positive integer, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ValueError(f"conv2d: padding must be a non-negative integer, got {padding!r}")
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ValueError(f"conv2d: kernels must be [C_out,C_in,k,k], got {kernels.shape}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ValueError(f"conv2d: input must be rank 3 or 4, got shape {x.shape}")
    x_data = x.data if batched else x.data[None]
    b_n, c_in, h, w = x_data.shape
    c_out, kc_in, k, _ = kernels.shape
    if kc_in != c_in:
        raise ValueError(
            f"conv2d: kernel C_in {kc_in} does not match input C_in {c_in}"
        )
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias must have shape ({c_out},), got {bias.shape}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ValueError(
            f"conv2d: kernel size {k} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError("conv2d: computed output has zero size")

    if padding:
        padded = np.pad(x_data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x_data
    cols = _im2col(padded, k, stride, out_h, out_w)
    w2 = kernels.data.reshape(c_out, c_in * k * k)
    out_mat = w2 @ cols
    out_mat += bias.data[:, None]
    out_data = np.ascontiguousarray(
        out_mat.reshape(c_out, b_n, out_h, out_w).transpose(1, 0, 2, 3)
    )

    def backward(g: Array) -> None:
        g4 = g if batched else g[None]
        if bias.requires_grad:
            bias._accumulate(g4.sum(axis=(0, 2, 3)), fresh=True)
        if kernels.requires_grad:
            g_mat = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(c_out, -1)
            kernels._accumulate((g_mat @ cols.T).reshape(kernels.shape), fresh=True)
        if x.requires_grad:
            # Scatter back through each kernel tap; channels-last keeps the
            # strided accumulation contiguous in the innermost axis.
            g_rows = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(-1, c_out)
            acc = np.zeros((b_n, h + 2 * padding, w + 2 * padding, c_in))
            for u in range(k):
                for v in range(k):
                    tap = np.ascontiguousarray(kernels.data[:, :, u, v])
                    contrib = (g_rows @ tap).reshape(b_n, out_h, out_w, c_in)
                    acc[:, u:u + stride * out_h:stride,
                        v:v + stride * out_w:stride, :] += contrib
            gx = acc[:, padding:padding + h, padding:padding + w, :]
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
            x._accumulate(gx if batched else gx[0], fresh=True)

    return Tensor._result(out_data if batched else out_data[0], (x, kernels, bias), backward)


def spatial_sum(x) -> Tensor:
    """Sum each channel map to a scalar: [N,H,W] -> [N] (or [B,N,H,W] -> [B,N])."""
    x = _lift(x)
    if x.ndim not in (3, 4):
        raise ValueError(f"spatial_sum: input must be rank 3 or 4, got shape {x.shape}")
    out_data = x.data.sum(axis=(-2, -1))

    def backward(g: Array) -> None:
        x._accumulate(
            np.broadcast_to(g[..., None, None], x.shape).copy(), fresh=True
        )

    return Tensor._result(out_data, (x,), backward)


def softmax(z) -> Tensor:
    """Numerically stabilized softmax over the last axis ([N] or [B,N], N >= 2)."""
    z = _lift(z)
    if z.ndim not in (1, 2):
        raise ValueError(f"softmax: input must be rank 1 or 2, got shape {z.shape}")
    if z.shape[-1] < 2:
        raise ValueError(f"softmax: needs at least 2 classes, got {z.shape[-1]}")
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g: Array) -> None:
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        z._accumulate(out_data * (g - inner), fresh=True)

    return Tensor._result(out_data, (z,), backward)


def vsum(x, axis: int | None = None) -> Tensor:
    """Sum to a scalar (axis=None) or over the last axis (axis=-1)."""
    x = _lift(x)
    if axis is None:
        out_data = np.asarray(x.data.sum())
    elif axis == -1:
        out_data = x.data.sum(axis=-1)
    else:
        raise ValueError("vsum supports axis=None or axis=-1")

    def backward(g: Array) -> None:
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).copy(), fresh=True)
        else:
            x._accumulate(np.broadcast_to(g[..., None], x.shape).copy(), fresh=True)

    return Tensor._result(out_data, (x,), backward)


def mean(x) -> Tensor:
    """Mean of all entries, as a scalar tensor."""
    x = _lift(x)
    n = x.size

    def backward(g: Array) -> None:
        x._accumulate(np.broadcast_to(g / n, x.shape).copy(), fresh=True)

    return Tensor._result(np.asarray(x.data.mean()), (x,), backward)


def pick(p, index) -> Tensor:
    """Select one entry per row: rank-1 p with int index -> scalar;
    rank-2 p with an index per row -> vector."""
    p = _lift(p)
    if p.ndim == 1:
        idx = int(index)
        if not 0 <= idx < p.shape[0]:
            raise ValueError(f"pick: index {idx} out of range [0, {p.shape[0]})")
        out_data = np.asarray(p.data[idx])

        def backward(g: Array) -> None:
            gp = np.zeros_like(p.data)
            gp[idx] = g
            p._accumulate(gp, fresh=True)

        return Tensor._result(out_data, (p,), backward)
    if p.ndim == 2:
        idx = np.asarray(index, dtype=np.int64)
        if idx.shape != (p.shape[0],):
            raise ValueError(
                f"pick: need one index per row, got {idx.shape} for {p.shape}"
            )
        if idx.min() < 0 or idx.max() >= p.shape[1]:
            raise ValueError("pick: row index out of range")
        rows = np.arange(p.shape[0])
        out_data = p.data[rows, idx]

        def backward(g: Array) -> None:
            gp = np.zeros_like(p.data)
            gp[rows, idx] = g
            p._accumulate(gp, fresh=True)

        return Tensor._result(out_data, (p,), backward)
    raise ValueError(f"pick: input must be rank 1 or 2, got shape {p.shape}")


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero entries with probability `rate`, scale the rest
    by 1/(1-rate). Identity when rate == 0."""
    x = _lift(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    gain = keep * scale

    def backward(g: Array) -> None:
        x._accumulate(g * gain, fresh=True)

    return Tensor._result(x.data * gain, (x,), backward)


class AdamState:
    """First/second moment buffers plus a shared step counter."""

    def __init__(self):
        self.step = 0
        self.m: dict[str, Array] = {}
        self.v: dict[str, Array] = {}


def adam_step(
    params: dict[str, Array],
    grads: dict[str, Array],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[dict[str, Array], AdamState]:
    """Bias-corrected Adam update, applied in place.

    The L2 term is folded into the gradient (grad + weight_decay * param)
    before the moment updates. Returns the mutated params and state.
    """
    if lr <= 0:
        raise ValueError(f"adam_step: learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: grad/param shape mismatch for {name!r}")
        if weight_decay:
            g = g + weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state
