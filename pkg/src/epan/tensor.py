"""Dense tensors with tape-based reverse-mode differentiation.

Only the handful of operations the deblurring network needs are provided.
Every operation records a closure that maps the upstream gradient to the
gradients of its inputs; :meth:`Tensor.backward` replays the closures in
reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ContractError, DimensionError, ParameterError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """N-dimensional real array with an optional gradient accumulator.

    4-D tensors use batch x channels x height x width layout.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], tuple] | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # -- arithmetic sugar ----------------------------------------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    # -- differentiation -----------------------------------------------
    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires grad with dLoss/dLeaf.

    Gradients accumulate on leaves across calls until they are reset.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------


def conv2d(input: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an (out, in, kH, kW) kernel."""
    x, w = input.data, weight.data
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be 4-D (N, C, H, W), got {x.ndim}-D")
    if w.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-D (out, in, kH, kW), got {w.ndim}-D")
    if w.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv2d channel axis mismatch: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise DimensionError(f"conv2d bias must have shape ({w.shape[0]},), got {bias.shape}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")

    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < kh:
        raise DimensionError(f"conv2d height axis too small: padded height {hp} < kernel height {kh}")
    if wp < kw:
        raise DimensionError(f"conv2d width axis too small: padded width {wp} < kernel width {kw}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    # (N, C, Ho, Wo, kH, kW) strided view gathered into a (C*kH*kW, N*Ho*Wo)
    # column matrix; this ordering copies contiguous runs along W
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = np.ascontiguousarray(windows.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * ho * wo)
    wmat = w.reshape(o, c * kh * kw)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    def _backward(g: np.ndarray):
        gmat = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gw = (gmat @ cols.T).reshape(w.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if input.requires_grad:
            # col2im in (C, N, H, W) layout keeps every slice contiguous along W
            dcols = (wmat.T @ gmat).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros((c, n, hp, wp), dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
            gx = np.ascontiguousarray(gx)
        return gx, gw, gb

    parents = (input, weight) if bias is None else (input, weight, bias)
    return _make(out, parents, _backward)


def upsample_nearest(input: Tensor, factor: int) -> Tensor:
    """Replicate every pixel into a ``factor`` x ``factor`` block."""
    if factor < 1:
        raise ParameterError(f"upsample factor must be >= 1, got {factor}")
    if input.ndim != 4:
        raise DimensionError(f"upsample input must be 4-D, got {input.ndim}-D")
    if factor == 1:
        return _make(input.data.copy(), (input,), lambda g: (g,))
    out = input.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = input.shape

    def _backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(out, (input,), _backward)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def sigmoid(input: Tensor) -> Tensor:
    x = input.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)

    def _backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (input,), _backward)


def relu(input: Tensor) -> Tensor:
    mask = input.data > 0
    out = np.where(mask, input.data, 0).astype(input.dtype, copy=False)
    return _make(out, (input,), lambda g: (g * mask,))


def clamp(input: Tensor, low: float, high: float) -> Tensor:
    """Clip to ``[low, high]``; the gradient is zero where clipping is active."""
    x = input.data
    inside = (x >= low) & (x <= high)
    out = np.clip(x, low, high)
    return _make(out, (input,), lambda g: (g * inside,))


def _is_mask_broadcast(a: np.ndarray, b: np.ndarray) -> bool:
    return (a.ndim == 4 and b.ndim == 4 and a.shape[1] == 1 and b.shape[1] > 1
            and a.shape[0] == b.shape[0] and a.shape[2:] == b.shape[2:])


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product.

    ``a`` may be a single-channel mask broadcast across the channels of ``b``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    broadcast = _is_mask_broadcast(a.data, b.data)
    if a.shape != b.shape and not broadcast:
        raise DimensionError(f"elementwise_mul shapes incompatible: {a.shape} vs {b.shape}")
    out = a.data * b.data

    def _backward(g):
        ga = g * b.data if a.requires_grad else None
        if ga is not None and broadcast:
            ga = ga.sum(axis=1, keepdims=True)
        gb = g * a.data if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), _backward)


elementwise_mul = mul


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes differ: {a.shape} vs {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + a.dtype.type(c), (a,), lambda g: (g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis, ``a`` first."""
    if a.ndim != 4 or b.ndim != 4:
        raise DimensionError("concat_channels needs 4-D inputs")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(
            f"concat_channels batch/spatial extents differ: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _make(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the numpy name
    shape = a.shape
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    return _make(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    out = np.asarray(a.data.mean(), dtype=a.dtype)
    return _make(out, (a,), lambda g: (np.full(shape, g / n, dtype=a.dtype),))


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment estimates for one parameter tensor."""

    __slots__ = ("first_moment", "second_moment", "step_count")

    def __init__(self, like: np.ndarray):
        self.first_moment = np.zeros_like(like)
        self.second_moment = np.zeros_like(like)
        self.step_count = 0


def adam_step(params: Sequence[Tensor], states: Sequence[AdamState], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7) -> None:
    """Apply one bias-corrected Adam update in place. Gradients are left as is."""
    if len(params) != len(states):
        raise ContractError(f"{len(params)} parameters but {len(states)} optimizer states")
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or '<unnamed>'} has no gradient")
    for p, st in zip(params, states):
        if st.first_moment.shape != p.shape:
            raise ContractError(f"optimizer state shape {st.first_moment.shape} != parameter shape {p.shape}")
        g = p.grad
        st.step_count += 1
        t = st.step_count
        st.first_moment *= beta1
        st.first_moment += (1.0 - beta1) * g
        st.second_moment *= beta2
        st.second_moment += (1.0 - beta2) * (g * g)
        m_hat = st.first_moment / (1.0 - beta1 ** t)
        v_hat = st.second_moment / (1.0 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


class Adam:
    """Adam optimiser bound to a fixed list of parameters."""

    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-7):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.states = [AdamState(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        adam_step(self.params, self.states, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
