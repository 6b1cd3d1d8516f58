"""
Reverse-mode automatic differentiation over dense numpy arrays.

A `Tape` records every primitive whose inputs require gradients while it is
the active tape of the current thread. `Tape.backward` walks the record in
reverse creation order, which is a topological order because an operation
can only be recorded after its inputs exist.

Broadcasting follows numpy rules for the elementwise primitives; gradients
are summed back to each operand's shape. `matmul` contracts the last axis of
the left operand with the second-to-last axis of the right one and
broadcasts leading batch axes. Shape errors name both operand shapes.

Subgradient conventions: relu'(0) = 0, abs'(0) = 0, and for maximum(x, s)
a tie x == s sends the whole gradient to x.
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import (
    Any,
    Callable,
    Dict,
    Iterator,
    List,
    Literal,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import scipy.fft

from .exceptions import ShapeError, StateError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int]
GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_state = threading.local()


def get_default_dtype() -> np.dtype:
    """Float width used for new tensors on this thread."""
    return getattr(_state, "dtype", np.dtype(np.float64))


def set_default_dtype(dtype: Any) -> None:
    """Set the float width for new tensors on this thread."""
    _state.dtype = np.dtype(dtype)


@contextmanager
def default_dtype(dtype: Any) -> Iterator[None]:
    """Temporarily switch the float width, e.g. float64 for gradient checks."""
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _tape_stack() -> List["Tape"]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def current_tape() -> Optional["Tape"]:
    """The innermost active tape of this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """
    Dense array with an optional gradient.

    Leaves created by the user hold parameters or constants. Results of
    primitives computed under an active tape keep a reference to their inputs
    and a closure producing the input adjoints.

    Attributes:
        data (np.ndarray): Values
        requires_grad (bool): Whether gradients flow into this tensor
        grad (np.ndarray, optional): Accumulated adjoint, leaves only
        name (str, optional): Label used in checkpoints and reports
    """

    __array_priority__ = 100

    def __init__(
        self,
        values: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Any = None,
    ):
        self.data = np.asarray(values, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._grad_fn: Optional[GradFn] = None
        self._op = ""
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._parents = ()
        out._grad_fn = None
        out._op = ""
        out._tape = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def copy(self) -> "Tensor":
        """Independent leaf with the same values, flags and name."""
        out = Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name,
                     dtype=self.data.dtype)
        return out

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __pow__(self, exponent: ArrayLike) -> "Tensor":
        return power(self, exponent)

    def __getitem__(self, index: Any) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)


class Tape:
    """
    Ordered record of primitive applications.

    Use as a context manager; while active, primitives with at least one
    gradient-requiring input are appended in creation order. A tape supports
    exactly one reverse pass.
    """

    def __init__(self) -> None:
        self.nodes: List[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Tensor) -> None:
        if self.consumed:
            raise TapeError("cannot record on a tape whose reverse pass already ran")
        node._tape = self
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        """
        Accumulate dLoss/dLeaf into `.grad` of every gradient-requiring leaf.

        Args:
            loss (Tensor): Scalar recorded on this tape

        Raises:
            TapeError: If the tape was already consumed or loss is not on it
            ShapeError: If loss is not a scalar
        """
        if self.consumed:
            raise TapeError("backward already ran on this tape; run the forward pass again")
        if loss._tape is not self:
            raise TapeError("loss is not on this tape")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

        adjoints: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = adjoints.pop(id(node), None)
            if upstream is None or node._grad_fn is None:
                continue
            for parent, grad in zip(node._parents, node._grad_fn(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                if grad.shape != parent.data.shape:
                    raise ShapeError(
                        f"{node._op}: adjoint shape {grad.shape} does not match "
                        f"input shape {parent.data.shape}"
                    )
                if parent.is_leaf:
                    grad = grad.astype(parent.data.dtype, copy=False)
                    parent.grad = grad.copy() if parent.grad is None else parent.grad + grad
                else:
                    key = id(parent)
                    adjoints[key] = grad if key not in adjoints else adjoints[key] + grad

        self.consumed = True
        self.nodes.clear()


def backward(loss: Tensor) -> None:
    """Run the reverse pass of the tape that recorded `loss`."""
    if loss._tape is None:
        raise TapeError("loss is not on a tape; compute it inside `with Tape():`")
    loss._tape.backward(loss)


def check_finite(tensor: Tensor, label: str = "") -> Tensor:
    """Debug assertion: raise FloatingPointError on NaN or Inf values."""
    if not np.all(np.isfinite(tensor.data)):
        raise FloatingPointError(f"non-finite values in {label or tensor.name or 'tensor'}")
    return tensor


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap constants; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: GradFn, op: str) -> Tensor:
    out = Tensor._wrap(np.asarray(data))
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
        out._op = op
        tape.record(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
        "div",
    )


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _result(a.data @ b.data, (a, b), grad_fn, "matmul")


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,),
                   lambda g: (g * mask,), "relu")


def maximum(a: ArrayLike, s: ArrayLike) -> Tensor:
    """Elementwise max(a, s); on ties the gradient goes to `a`."""
    a, s = as_tensor(a), as_tensor(s)
    _broadcast_check("maximum", a, s)
    take_a = a.data >= s.data
    return _result(
        np.where(take_a, a.data, s.data),
        (a, s),
        lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, s.shape)),
        "maximum",
    )


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def cos(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sin(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def tabs(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def power(base: ArrayLike, exponent: ArrayLike) -> Tensor:
    """
    base ** exponent with both operands differentiable.

    The exponent gradient uses log(base) and is only meaningful where base > 0;
    it is set to zero elsewhere.
    """
    base, exponent = as_tensor(base), as_tensor(exponent)
    _broadcast_check("power", base, exponent)
    out = np.power(base.data, exponent.data)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_base = g * exponent.data * np.power(base.data, exponent.data - 1)
        safe_log = np.log(np.where(base.data > 0, base.data, 1.0))
        grad_exp = g * out * safe_log
        return _unbroadcast(grad_base, base.shape), _unbroadcast(grad_exp, exponent.shape)

    return _result(out, (base, exponent), grad_fn, "power")


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Any, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _result(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims),),
        "sum",
    )


def mean(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size // max(np.asarray(out).size, 1)
    return _result(
        out,
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,),
        "mean",
    )


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    order = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(order))
    return _result(a.data.transpose(order), (a,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(a: ArrayLike, index: Any) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), grad_fn, "getitem")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(p.shape) for p in parts)
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _result(out, parts, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(p.shape) for p in parts)
        raise ShapeError(f"stack: incompatible shapes {shapes}") from None
    return _result(
        out,
        parts,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(parts))),
        "stack",
    )


def amax(a: ArrayLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    index = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, index, axis=axis)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(a.data)
        g_full = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, index, g_full, axis=axis)
        return (grad,)

    return _result(out if keepdims else np.squeeze(out, axis=axis), (a,), grad_fn, "amax")


def conv1d(x: ArrayLike, w: ArrayLike, mode: Literal["same", "valid", "full"] = "same") -> Tensor:
    """
    Linear convolution of every signal with every kernel.

    Args:
        x: (B, L) signals
        w: (K, N) kernels
        mode (str): "same" keeps L samples aligned like numpy.convolve,
                    "valid" keeps L - N + 1, "full" keeps L + N - 1

    Returns:
        Tensor: (B, K, L_out)
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"conv1d: expected (B, L) and (K, N), got {x.shape} and {w.shape}")
    length, taps = x.shape[1], w.shape[1]
    full = length + taps - 1
    if mode == "same":
        start, out_len = (taps - 1) // 2, length
    elif mode == "valid":
        if length < taps:
            raise ShapeError(f"conv1d valid: signal {x.shape} shorter than kernel {w.shape}")
        start, out_len = taps - 1, length - taps + 1
    elif mode == "full":
        start, out_len = 0, full
    else:
        raise ValueError(f"Unknown conv1d mode: {mode}")

    n_fft = scipy.fft.next_fast_len(full, real=True)
    x_hat = scipy.fft.rfft(x.data, n_fft, axis=-1)
    w_hat = scipy.fft.rfft(w.data, n_fft, axis=-1)
    y = scipy.fft.irfft(x_hat[:, None, :] * w_hat[None, :, :], n_fft, axis=-1)
    out = y[..., start : start + out_len].astype(x.data.dtype, copy=False)

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], np.ndarray]:
        padded = np.zeros(g.shape[:2] + (full,), dtype=g.dtype)
        padded[..., start : start + out_len] = g
        g_hat = scipy.fft.rfft(padded, n_fft, axis=-1)
        grad_x = None
        if x.requires_grad:
            grad_x = scipy.fft.irfft(
                (g_hat * np.conj(w_hat)[None, :, :]).sum(axis=1), n_fft, axis=-1
            )[:, :length].astype(x.data.dtype)
        grad_w = scipy.fft.irfft(
            (g_hat * np.conj(x_hat)[:, None, :]).sum(axis=0), n_fft, axis=-1
        )[:, :taps]
        return grad_x, grad_w.astype(w.data.dtype)

    return _result(out, (x, w), grad_fn, "conv1d")


def frame_sum(
    x: ArrayLike, frame_length: int, hop: int, weights: Optional[np.ndarray] = None
) -> Tensor:
    """
    Weighted sum over overlapping frames of the last axis.

    Args:
        x: (..., L) values
        frame_length (int): M
        hop (int): Frame step
        weights (np.ndarray, optional): M per-sample weights, ones when omitted

    Returns:
        Tensor: (..., T) with T = (L - M) // hop + 1
    """
    x = as_tensor(x)
    length = x.shape[-1]
    if length < frame_length:
        raise ShapeError(f"frame_sum: signal {x.shape} shorter than frame {frame_length}")
    n_frames = (length - frame_length) // hop + 1
    w = np.ones(frame_length) if weights is None else np.asarray(weights)
    w = w.astype(x.data.dtype)
    out = np.empty(x.shape[:-1] + (n_frames,), dtype=x.data.dtype)
    for t in range(n_frames):
        out[..., t] = x.data[..., t * hop : t * hop + frame_length] @ w

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        for t in range(n_frames):
            grad[..., t * hop : t * hop + frame_length] += g[..., t, None] * w
        return (grad,)

    return _result(out, (x,), grad_fn, "frame_sum")


def frame_max(x: ArrayLike, frame_length: int, hop: int) -> Tensor:
    """Maximum over overlapping frames of the last axis; shape as frame_sum."""
    x = as_tensor(x)
    length = x.shape[-1]
    if length < frame_length:
        raise ShapeError(f"frame_max: signal {x.shape} shorter than frame {frame_length}")
    n_frames = (length - frame_length) // hop + 1
    out = np.empty(x.shape[:-1] + (n_frames,), dtype=x.data.dtype)
    winners = np.empty(x.shape[:-1] + (n_frames,), dtype=np.int64)
    for t in range(n_frames):
        frame = x.data[..., t * hop : t * hop + frame_length]
        winners[..., t] = np.argmax(frame, axis=-1)
        out[..., t] = np.take_along_axis(frame, winners[..., t, None], axis=-1)[..., 0]

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        for t in range(n_frames):
            local = np.zeros(x.shape[:-1] + (frame_length,), dtype=grad.dtype)
            np.put_along_axis(local, winners[..., t, None], g[..., t, None], axis=-1)
            grad[..., t * hop : t * hop + frame_length] += local
        return (grad,)

    return _result(out, (x,), grad_fn, "frame_max")


def conv2d(x: ArrayLike, w: ArrayLike, dilation: int = 1) -> Tensor:
    """
    "Same"-padded 2-D convolution (cross-correlation), channel-last.

    Args:
        x: (B, H, W, C) input
        w: (kh, kw, C, O) odd-sized kernels
        dilation (int): Spacing between kernel taps

    Returns:
        Tensor: (B, H, W, O)
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    kh, kw = w.shape[0], w.shape[1]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd-sized, got {w.shape}")
    batch, height, width, _ = x.shape
    pad_h, pad_w = dilation * (kh - 1) // 2, dilation * (kw - 1) // 2
    padded = np.pad(x.data, ((0, 0), (pad_h, pad_h), (pad_w, pad_w), (0, 0)))

    def window(i: int, j: int) -> Tuple[slice, slice, slice, slice]:
        return (
            slice(None),
            slice(i * dilation, i * dilation + height),
            slice(j * dilation, j * dilation + width),
            slice(None),
        )

    out = np.zeros((batch, height, width, w.shape[3]), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            out += padded[window(i, j)] @ w.data[i, j]

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], np.ndarray]:
        grad_w = np.zeros_like(w.data)
        grad_padded = np.zeros_like(padded) if x.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                patch = padded[window(i, j)]
                grad_w[i, j] = np.tensordot(patch, g, axes=([0, 1, 2], [0, 1, 2]))
                if grad_padded is not None:
                    grad_padded[window(i, j)] += g @ w.data[i, j].T
        if grad_padded is None:
            return None, grad_w
        grad_x = grad_padded[:, pad_h : pad_h + height, pad_w : pad_w + width, :]
        return grad_x, grad_w

    return _result(out, (x, w), grad_fn, "conv2d")


@dataclass
class BatchNormState:
    """
    Running statistics of one batch-normalization layer.

    Statistics are per channel (last axis). The first training batch sets the
    running values directly; later batches blend with `momentum`.
    """

    n_channels: int
    momentum: float = 0.99
    eps: float = 1e-5
    running_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    running_var: np.ndarray = field(default=None)  # type: ignore[assignment]
    initialized: bool = False

    def __post_init__(self) -> None:
        if self.running_mean is None:
            self.running_mean = np.zeros(self.n_channels)
        if self.running_var is None:
            self.running_var = np.ones(self.n_channels)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        if not self.initialized:
            self.running_mean = batch_mean.astype(np.float64)
            self.running_var = batch_var.astype(np.float64)
            self.initialized = True
            return
        self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * batch_mean
        self.running_var = self.momentum * self.running_var + (1 - self.momentum) * batch_var

    def buffers(self) -> Dict[str, np.ndarray]:
        return {
            "running_mean": self.running_mean,
            "running_var": self.running_var,
            "initialized": np.array([1.0 if self.initialized else 0.0]),
        }

    def load_buffers(self, buffers: Mapping[str, np.ndarray]) -> None:
        self.running_mean = np.asarray(buffers["running_mean"], dtype=np.float64)
        self.running_var = np.asarray(buffers["running_var"], dtype=np.float64)
        self.initialized = bool(np.asarray(buffers["initialized"]).reshape(-1)[0])


def batchnorm(
    x: ArrayLike,
    state: BatchNormState,
    training: bool,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
) -> Tensor:
    """
    Normalize every channel (last axis) over all other axes.

    Training mode uses batch statistics and updates `state`; evaluation mode
    uses the running statistics.

    Raises:
        ShapeError: If the channel count does not match the state
        StateError: In evaluation mode before any training batch
    """
    x = as_tensor(x)
    if x.shape[-1] != state.n_channels:
        raise ShapeError(
            f"batchnorm: input {x.shape} has {x.shape[-1]} channels, state has {state.n_channels}"
        )
    axes = tuple(range(x.ndim - 1))
    dtype = x.data.dtype
    scale = np.ones(state.n_channels, dtype=dtype) if gamma is None else gamma.data
    shift = np.zeros(state.n_channels, dtype=dtype) if beta is None else beta.data

    if training:
        batch_mean = x.data.mean(axis=axes)
        batch_var = x.data.var(axis=axes)
        state.update(batch_mean, batch_var)
        mu, var = batch_mean, batch_var
    else:
        if not state.initialized:
            raise StateError("batchnorm evaluated before any training batch set its statistics")
        mu, var = state.running_mean.astype(dtype), state.running_var.astype(dtype)

    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(dtype)
    x_hat = (x.data - mu) * inv_std
    out = x_hat * scale + shift
    count = x.size // state.n_channels

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        d_hat = g * scale
        if training:
            grad_x = (inv_std / count) * (
                count * d_hat
                - d_hat.sum(axis=axes)
                - x_hat * (d_hat * x_hat).sum(axis=axes)
            )
        else:
            grad_x = d_hat * inv_std
        grads: List[Optional[np.ndarray]] = [grad_x]
        if gamma is not None:
            grads.append((g * x_hat).sum(axis=axes))
        if beta is not None:
            grads.append(g.sum(axis=axes))
        return tuple(grads)

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return _result(out.astype(dtype, copy=False), parents, grad_fn, "batchnorm")


def softmax_crossentropy(logits: ArrayLike, labels: np.ndarray) -> Tensor:
    """
    Mean categorical cross-entropy of integer labels.

    Args:
        logits: (B, C) unnormalized scores
        labels (np.ndarray): (B,) class indices

    Returns:
        Tensor: Scalar loss
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"softmax_crossentropy: logits {logits.shape} and labels {labels.shape} disagree"
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    batch = logits.shape[0]
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return _result(np.asarray(loss, dtype=logits.data.dtype), (logits,), grad_fn, "softmax_xent")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of raw scores (no gradient)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class GradCheckEntry:
    """One compared gradient component."""

    parameter: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    relative_error: float
    status: Literal["pass", "fail", "unreliable"]


@dataclass(frozen=True)
class GradCheckReport:
    """Result of grad_check."""

    entries: Tuple[GradCheckEntry, ...]
    tolerance: float
    step: float

    @property
    def passed(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    @property
    def max_relative_error(self) -> float:
        reliable = [e.relative_error for e in self.entries if e.status != "unreliable"]
        return max(reliable) if reliable else 0.0

    def failures(self) -> List[GradCheckEntry]:
        return [e for e in self.entries if e.status == "fail"]

    def unreliable(self) -> List[GradCheckEntry]:
        return [e for e in self.entries if e.status == "unreliable"]


def grad_check(
    f: Callable[[], Tensor],
    params: Union[Mapping[str, Tensor], Sequence[Tensor]],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    indices: Optional[Mapping[str, Sequence[Tuple[int, ...]]]] = None,
    absolute_floor: float = 1e-9,
    kink_tolerance: float = 1e-2,
) -> GradCheckReport:
    """
    Compare reverse-mode gradients with central finite differences.

    An entry is "unreliable" rather than failed when its one-sided
    differences disagree by more than `kink_tolerance` (relative), i.e. a
    non-differentiable point lies within one step of the sample point.

    Args:
        f: Deterministic closure returning a scalar Tensor built from params
        params: Named (or positional) gradient-requiring tensors
        step (float): Finite-difference step
        tolerance (float): Maximum accepted relative error
        indices: Optional subset of entries per parameter name
        absolute_floor (float): Differences below this pass regardless
        kink_tolerance (float): One-sided slope disagreement marking a kink

    Returns:
        GradCheckReport: Per-entry comparison
    """
    named: Dict[str, Tensor] = (
        dict(params) if isinstance(params, Mapping) else {f"p{i}": p for i, p in enumerate(params)}
    )
    for name, tensor in named.items():
        if tensor.data.dtype != np.float64:
            logger.warning(f"grad_check on {name} in {tensor.data.dtype}; use float64")
        tensor.zero_grad()

    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in named.items()
    }
    centre = float(loss.data)

    entries: List[GradCheckEntry] = []
    for name, tensor in named.items():
        targets = (
            [tuple(ix) for ix in indices[name]]
            if indices is not None and name in indices
            else [tuple(ix) for ix in np.ndindex(*tensor.shape)]
        )
        for ix in targets:
            original = tensor.data[ix].copy()
            tensor.data[ix] = original + step
            plus = float(f().data)
            tensor.data[ix] = original - step
            minus = float(f().data)
            tensor.data[ix] = original

            numeric = (plus - minus) / (2 * step)
            a = float(analytic[name][ix])
            diff = abs(a - numeric)
            rel = diff / max(abs(a), abs(numeric), absolute_floor)

            forward_slope = (plus - centre) / step
            backward_slope = (centre - minus) / step
            slope_scale = max(abs(forward_slope), abs(backward_slope), absolute_floor)
            kinked = abs(forward_slope - backward_slope) > kink_tolerance * slope_scale

            if diff <= absolute_floor or rel <= tolerance:
                status: Literal["pass", "fail", "unreliable"] = "pass"
            elif kinked:
                status = "unreliable"
            else:
                status = "fail"
            entries.append(GradCheckEntry(name, ix, a, numeric, rel, status))

    report = GradCheckReport(entries=tuple(entries), tolerance=tolerance, step=step)
    logger.info(
        f"grad_check: {len(entries)} entries, {len(report.failures())} failed, "
        f"{len(report.unreliable())} unreliable, max rel err {report.max_relative_error:.2e}"
    )
    return report
