"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that touches a graph-recorded tensor appends a node with an
ordered parent tuple and a backward closure. `Tensor.backward()` replays the
closures in reverse topological order, accumulating gradients additively at
fan-out points. Ordering is deterministic everywhere (tuples, not sets), so
repeated runs of the same graph produce bit-identical gradients.

Buffers are numpy arrays and stay float64 end to end. numpy is used for
storage and elementwise/BLAS kernels only; all differentiation logic lives
here.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, UsageError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends graph recording.

    Used for evaluation passes and for the finite-difference side of
    gradient checks, where building closures would only burn time.
    """

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- bookkeeping ------------------------------------------------------

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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph ------------------------------------------------------------

    def backward(self) -> None:
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that is not part of a recorded graph")
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
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data)
        if _recording(self, other):
            a, b = self, other

            def _backward(grad):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(grad, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(grad, b.shape))

            _attach(out, (a, b), _backward)
        return out

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data * other.data)
        if _recording(self, other):
            a, b = self, other

            def _backward(grad):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(grad * b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(grad * a.data, b.shape))

            _attach(out, (a, b), _backward)
        return out

    def __truediv__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data / other.data)
        if _recording(self, other):
            a, b = self, other

            def _backward(grad):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(grad / b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

            _attach(out, (a, b), _backward)
        return out

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise UsageError("pow supports constant scalar exponents only")
        p = float(exponent)
        out = Tensor(self.data ** p)
        if _recording(self):
            a = self

            def _backward(grad):
                a._accumulate(grad * p * a.data ** (p - 1.0))

            _attach(out, (a,), _backward)
        return out

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (_as_tensor(other) * -1.0)

    def __radd__(self, other):
        return self + other

    def __rmul__(self, other):
        return self * other

    def __rsub__(self, other):
        return _as_tensor(other) + (self * -1.0)

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    # -- elementwise nonlinearities ----------------------------------------

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0))
        if _recording(self):
            a = self

            def _backward(grad):
                a._accumulate(grad * (a.data > 0.0))

            _attach(out, (a,), _backward)
        return out

    def sigmoid(self) -> "Tensor":
        x = self.data
        pos = x >= 0.0
        z = np.empty_like(x)
        z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        z[~pos] = ex / (1.0 + ex)
        out = Tensor(z)
        if _recording(self):
            a = self

            def _backward(grad):
                a._accumulate(grad * z * (1.0 - z))

            _attach(out, (a,), _backward)
        return out

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        out = Tensor(t)
        if _recording(self):
            a = self

            def _backward(grad):
                a._accumulate(grad * (1.0 - t * t))

            _attach(out, (a,), _backward)
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        out = Tensor(e)
        if _recording(self):
            a = self

            def _backward(grad):
                a._accumulate(grad * e)

            _attach(out, (a,), _backward)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data))
        if _recording(self):
            a = self

            def _backward(grad):
                a._accumulate(grad / a.data)

            _attach(out, (a,), _backward)
        return out

    # -- reductions ---------------------------------------------------------

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum())
        if _recording(self):
            a = self

            def _backward(grad):
                a._accumulate(np.broadcast_to(grad, a.shape))

            _attach(out, (a,), _backward)
        return out

    def mean(self) -> "Tensor":
        n = float(self.data.size)
        out = Tensor(self.data.sum() / n)
        if _recording(self):
            a = self

            def _backward(grad):
                a._accumulate(np.broadcast_to(grad / n, a.shape))

            _attach(out, (a,), _backward)
        return out


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _recording(*tensors: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in tensors)


def _attach(out: Tensor, parents: tuple[Tensor, ...], backward) -> None:
    out.requires_grad = True
    out._parents = parents
    out._backward = backward


def relu(x: Tensor) -> Tensor:
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


# -- structured primitives --------------------------------------------------


def _require_nchw(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects a (N, C, H, W) tensor, got shape {x.shape}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over (N, C, H, W) with an (O, C, KH, KW) kernel.

    Forward lowers each input window to a column (im2col) and runs one batched
    matmul; backward scatter-adds columns back (col2im) and contracts the same
    columns against the output gradient for the kernel gradient.
    """
    _require_nchw(x, "conv2d")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (O, C, KH, KW), got shape {kernel.shape}")
    if stride < 1 or padding < 0:
        raise UsageError(f"conv2d needs stride >= 1 and padding >= 0, got stride={stride} padding={padding}")
    n, c, h, w = x.shape
    cout, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d kernel {kernel.shape} larger than padded input ({hp}, {wp})")
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1

    if padding:
        xp = np.zeros((n, c, hp, wp), dtype=np.float64)
        xp[:, :, padding:padding + h, padding:padding + w] = x.data
    else:
        xp = x.data

    patches = np.empty((n, c, kh, kw, hout, wout), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patches[:, :, i, j] = xp[:, :, i:i + stride * hout:stride, j:j + stride * wout:stride]
    cols = patches.reshape(n, c * kh * kw, hout * wout)
    k2 = kernel.data.reshape(cout, c * kh * kw)
    flat = np.matmul(k2, cols)
    if bias is not None:
        flat = flat + bias.data[:, None]
    out = Tensor(flat.reshape(n, cout, hout, wout))

    if _recording(x, kernel) or (bias is not None and _recording(bias)):
        parents = (x, kernel) if bias is None else (x, kernel, bias)

        def _backward(grad):
            go = grad.reshape(n, cout, hout * wout)
            if kernel.requires_grad:
                gk = np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0)
                kernel._accumulate(gk.reshape(kernel.shape))
            if bias is not None and bias.requires_grad:
                bias._accumulate(go.sum(axis=(0, 2)))
            if x.requires_grad:
                gcols = np.matmul(k2.T, go)
                gp = gcols.reshape(n, c, kh, kw, hout, wout)
                gxp = np.zeros((n, c, hp, wp), dtype=np.float64)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * hout:stride, j:j + stride * wout:stride] += gp[:, :, i, j]
                if padding:
                    gxp = gxp[:, :, padding:padding + h, padding:padding + w]
                x._accumulate(gxp)

        _attach(out, parents, _backward)
    return out


def max_pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties resolve to the first window position
    in row-major order. H and W must be divisible by the stride."""
    _require_nchw(x, "max_pool2d")
    if window != stride:
        raise UsageError(f"max_pool2d supports window == stride only, got window={window} stride={stride}")
    if window < 1:
        raise UsageError(f"max_pool2d window must be >= 1, got {window}")
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"max_pool2d needs H and W divisible by {window}, got input shape {x.shape}")
    k = window
    ho, wo = h // k, w // k
    windows = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    arg = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0])

    if _recording(x):
        def _backward(grad):
            gwin = np.zeros((n, c, ho, wo, k * k), dtype=np.float64)
            np.put_along_axis(gwin, arg[..., None], grad[..., None], axis=-1)
            gx = gwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            x._accumulate(gx)

        _attach(out, (x,), _backward)
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by a factor of 2 in H and W."""
    _require_nchw(x, "upsample_nearest2x")
    n, c, h, w = x.shape
    out = Tensor(x.data.repeat(2, axis=2).repeat(2, axis=3))

    if _recording(x):
        def _backward(grad):
            x._accumulate(grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

        _attach(out, (x,), _backward)
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (N, C, H, W) tensors along the channel axis."""
    _require_nchw(a, "concat_channels")
    _require_nchw(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels needs matching N, H, W: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))

    if _recording(a, b):
        def _backward(grad):
            if a.requires_grad:
                a._accumulate(grad[:, :ca])
            if b.requires_grad:
                b._accumulate(grad[:, ca:])

        _attach(out, (a, b), _backward)
    return out


def take_channel(x: Tensor, index: int) -> Tensor:
    """Slice out channel `index` as a (N, 1, H, W) tensor."""
    _require_nchw(x, "take_channel")
    if not 0 <= index < x.shape[1]:
        raise ShapeError(f"take_channel index {index} out of range for shape {x.shape}")
    out = Tensor(x.data[:, index:index + 1])

    if _recording(x):
        def _backward(grad):
            gx = np.zeros_like(x.data)
            gx[:, index:index + 1] = grad
            x._accumulate(gx)

        _attach(out, (x,), _backward)
    return out


def softmax_channels(x: Tensor) -> Tensor:
    """Numerically stable softmax across the channel axis of (N, C, H, W)."""
    _require_nchw(x, "softmax_channels")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    if _recording(x):
        def _backward(grad):
            dot = (grad * p).sum(axis=1, keepdims=True)
            x._accumulate(p * (grad - dot))

        _attach(out, (x,), _backward)
    return out


def batch_norm(x: Tensor, scale: Tensor, shift: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over the N, H, W axes.

    Training mode normalizes by the biased batch statistics, backpropagates
    through them, and folds the batch statistics into the running buffers as
    running = momentum * running + (1 - momentum) * batch. Eval mode treats
    the running buffers as constants.
    """
    _require_nchw(x, "batch_norm")
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"batch_norm scale/shift must have shape ({c},), got {scale.shape} and {shift.shape}")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"batch_norm running stats must have shape ({c},), got {running_mean.shape} and {running_var.shape}")

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    mu_b = mu[None, :, None, None]
    inv_b = inv[None, :, None, None]
    xhat = (x.data - mu_b) * inv_b
    out = Tensor(xhat * scale.data[None, :, None, None] + shift.data[None, :, None, None])

    if _recording(x, scale, shift):
        def _backward(grad):
            if scale.requires_grad:
                scale._accumulate((grad * xhat).sum(axis=(0, 2, 3)))
            if shift.requires_grad:
                shift._accumulate(grad.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gxhat = grad * scale.data[None, :, None, None]
                if training:
                    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                    s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
                    s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                    x._accumulate((inv_b / m) * (m * gxhat - s1 - xhat * s2))
                else:
                    x._accumulate(gxhat * inv_b)

        _attach(out, (x, scale, shift), _backward)
    return out
