"""Minimal reverse-mode automatic differentiation.

Just enough machinery to express the gamma-estimator forward pass and its
training losses: conv2d (3x3, stride 1, zero padding 1), fully-connected,
relu, sigmoid, channel concatenation, per-pixel inner product against a
broadcast vector, elementwise power with a fixed (floored) base, elementwise
affine maps, and reductions.

Each operation records a backward closure on the output tensor; calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients additively into every tensor that requires
them. The walk order is deterministic, so runs are bit-reproducible for a
fixed seed. Tensors built purely from non-gradient inputs record nothing,
which makes inference graph-free.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class GradientError(ValueError):
    """Raised when a gradient is unusable (non-finite) for an update."""


class NondeterministicComputation(RuntimeError):
    """Raised when two forward passes of a checked computation disagree."""


class Tensor:
    """An n-d array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Propagate d(self)/d(everything) from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
                # The graph is single-use; drop closures so intermediate
                # buffers can be reclaimed as soon as the walk passes them.
                node._backward = None
                node._parents = ()


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(value: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents) or any(
            p._parents for p in parents
        )
        out._parents = parents
        out._backward = backward
    return out


def _as_const(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

# Optional sink for relu activation signs. The finite-difference checker uses
# it to detect perturbations that step across a kink, where a two-point
# difference does not estimate the one-sided derivative.
_RELU_SIGN_SINK: list[bytes] | None = None


@contextmanager
def record_relu_signs(sink: list[bytes]):
    global _RELU_SIGN_SINK
    previous = _RELU_SIGN_SINK
    _RELU_SIGN_SINK = sink
    try:
        yield sink
    finally:
        _RELU_SIGN_SINK = previous


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    if _RELU_SIGN_SINK is not None:
        _RELU_SIGN_SINK.append(np.packbits(positive).tobytes())
    out = _make(x.data * positive, (x,), None)

    def backward():
        x.accumulate(out.grad * positive)

    out._backward = backward if out._parents else None
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    out = _make(s, (x,), None)

    def backward():
        x.accumulate(out.grad * s * (1.0 - s))

    out._backward = backward if out._parents else None
    return out


def affine(x: Tensor, scale: float = 1.0, shift=0.0) -> Tensor:
    """scale * x + shift, with scalar scale and scalar-or-array constant shift."""
    shift = _as_const(shift) if not np.isscalar(shift) else shift
    out = _make(x.data * scale + shift, (x,), None)

    def backward():
        x.accumulate(out.grad * scale)

    out._backward = backward if out._parents else None
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _make(a.data + b.data, (a, b), None)

    def backward():
        a.accumulate(out.grad)
        b.accumulate(out.grad)

    out._backward = backward if out._parents else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = _make(a.data * b.data, (a, b), None)

    def backward():
        a.accumulate(out.grad * b.data)
        b.accumulate(out.grad * a.data)

    out._backward = backward if out._parents else None
    return out


def square(x: Tensor) -> Tensor:
    out = _make(x.data * x.data, (x,), None)

    def backward():
        x.accumulate(out.grad * 2.0 * x.data)

    out._backward = backward if out._parents else None
    return out


def pow_fixed_base(base, exponent: Tensor) -> Tensor:
    """base ** exponent for a constant base map (floored away from zero upstream).

    Differentiable in the exponent only: d/de base**e = base**e * ln(base).
    """
    b = _as_const(base)
    if b.shape != exponent.shape:
        raise ValueError(f"pow base/exponent shape mismatch: {b.shape} vs {exponent.shape}")
    if np.any(b <= 0):
        raise ValueError("pow_fixed_base requires a strictly positive base")
    value = b**exponent.data
    out = _make(value, (exponent,), None)

    def backward():
        exponent.accumulate(out.grad * value * np.log(b))

    out._backward = backward if out._parents else None
    return out


def xlogx(x: Tensor) -> Tensor:
    """x * ln(x) with the 0 * ln 0 := 0 convention.

    Entries at exactly zero sit on an underflow plateau of the soft
    histogram, so their local derivative is taken as zero as well.
    """
    positive = x.data > 0
    safe = np.where(positive, x.data, 1.0)
    logs = np.log(safe)
    out = _make(np.where(positive, x.data * logs, 0.0), (x,), None)

    def backward():
        x.accumulate(out.grad * np.where(positive, logs + 1.0, 0.0))

    out._backward = backward if out._parents else None
    return out


def reciprocal(x: Tensor) -> Tensor:
    value = 1.0 / x.data
    out = _make(value, (x,), None)

    def backward():
        x.accumulate(-out.grad * value * value)

    out._backward = backward if out._parents else None
    return out


# ---------------------------------------------------------------------------
# shape / reduction primitives
# ---------------------------------------------------------------------------


def reduce_sum(x: Tensor) -> Tensor:
    out = _make(np.asarray(x.data.sum()), (x,), None)

    def backward():
        x.accumulate(np.broadcast_to(out.grad, x.shape).astype(x.dtype, copy=False))

    out._backward = backward if out._parents else None
    return out


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = _make(np.asarray(x.data.mean()), (x,), None)

    def backward():
        x.accumulate(np.broadcast_to(out.grad / n, x.shape).astype(x.dtype, copy=False))

    out._backward = backward if out._parents else None
    return out


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate (C, H, W) maps along the channel axis."""
    spatial = {p.shape[1:] for p in parts}
    if len(spatial) != 1:
        raise ValueError(f"concat spatial dims differ: {sorted(spatial)}")
    out = _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), None)

    def backward():
        offset = 0
        for p in parts:
            c = p.shape[0]
            p.accumulate(out.grad[offset : offset + c])
            offset += c

    out._backward = backward if out._parents else None
    return out


def channel_dot(features: Tensor, vec: Tensor) -> Tensor:
    """Per-pixel inner product of a (C, H, W) map with a broadcast (C,) vector."""
    if features.shape[0] != vec.shape[0]:
        raise ValueError(
            f"channel count {features.shape[0]} != vector length {vec.shape[0]}"
        )
    value = np.tensordot(vec.data, features.data, axes=(0, 0))
    out = _make(value, (features, vec), None)

    def backward():
        features.accumulate(vec.data[:, None, None] * out.grad[None, :, :])
        vec.accumulate(np.tensordot(out.grad, features.data, axes=((0, 1), (1, 2))))

    out._backward = backward if out._parents else None
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully-connected layer on a vector: weight @ x + bias."""
    if weight.shape[1] != x.shape[0] or weight.shape[0] != bias.shape[0]:
        raise ValueError(
            f"linear shape mismatch: W{weight.shape} x{x.shape} b{bias.shape}"
        )
    out = _make(weight.data @ x.data + bias.data, (x, weight, bias), None)

    def backward():
        x.accumulate(weight.data.T @ out.grad)
        weight.accumulate(np.outer(out.grad, x.data))
        bias.accumulate(out.grad)

    out._backward = backward if out._parents else None
    return out


# ---------------------------------------------------------------------------
# convolution (3x3, stride 1, zero padding 1)
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """2-d convolution of a (C, H, W) map with (O, C, 3, 3) kernels.

    Stride 1 with zero padding 1, so spatial dimensions are preserved.
    """
    c, h, w = x.shape
    if weight.data.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ValueError(f"conv2d expects (O, C, 3, 3) kernels, got {weight.shape}")
    if weight.shape[1] != c:
        raise ValueError(f"conv2d input channels {c} != kernel channels {weight.shape[1]}")
    o = weight.shape[0]
    if bias.shape != (o,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({o},)")

    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    hp, wp = h + 2, w + 2
    value = np.empty((o, h, w), dtype=x.dtype)
    value[:] = bias.data[:, None, None]
    # All nine kernel offsets in one matrix product against the full padded
    # frame (which is already contiguous, so BLAS takes its fast path); each
    # (O, hp, wp) block of the result is the layer output shifted by its
    # offset and lands on the accumulator under the matching slice.
    stacked = np.ascontiguousarray(
        weight.data.transpose(2, 3, 0, 1).reshape(9 * o, c)
    )
    partial = (stacked @ padded.reshape(c, hp * wp)).reshape(3, 3, o, hp, wp)
    for ky in range(3):
        for kx in range(3):
            value += partial[ky, kx, :, ky : ky + h, kx : kx + w]

    out = _make(value, (x, weight, bias), None)

    def backward():
        g = out.grad.reshape(o, h * w)
        dw = np.empty_like(weight.data)
        dpad = np.zeros_like(padded)
        for ky in range(3):
            for kx in range(3):
                patch = np.ascontiguousarray(
                    padded[:, ky : ky + h, kx : kx + w]
                ).reshape(c, h * w)
                dw[:, :, ky, kx] = g @ patch.T
                kernel = np.ascontiguousarray(weight.data[:, :, ky, kx])
                dpad[:, ky : ky + h, kx : kx + w] += (kernel.T @ g).reshape(c, h, w)
        x.accumulate(dpad[:, 1 : h + 1, 1 : w + 1])
        weight.accumulate(dw)
        bias.accumulate(g.sum(axis=1))

    out._backward = backward if out._parents else None
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter Adam moments and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update, in place.

    A non-finite gradient rejects the whole step (no parameter or state is
    touched) and reports which parameter was bad.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def finite_diff_check(
    compute,
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    samples_per_param: int = 4,
    rng: np.random.Generator | None = None,
    exclude=None,
    denom_floor: float = 1e-2,
) -> float:
    """Compare analytic gradients against central differences.

    ``compute()`` must return ``(loss_value, grads_dict)``, optionally with
    a third hashable element describing the relu activation pattern, and be
    a pure function of ``params``; it is re-run with coordinates of
    ``params`` perturbed in place. A random subset of coordinates per
    parameter is checked and the worst relative error is returned.

    Coordinates are skipped when ``exclude(name, idx)`` vetoes them or when
    the activation patterns at +h and -h disagree: the step then straddles a
    relu kink, where a symmetric difference estimates neither one-sided
    derivative. The relative error of a coordinate uses the denominator
    ``max(|analytic|, |numeric|, denom_floor)``, so gradients far below the
    floor are held to an absolute tolerance instead of a relative one.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    base = compute()
    again = compute()
    if base[0] != again[0]:
        raise NondeterministicComputation(
            f"forward passes disagree: {base[0]!r} vs {again[0]!r}"
        )
    grads = base[1]
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        n = min(samples_per_param, flat.size)
        indices = rng.choice(flat.size, size=n, replace=False)
        analytic_flat = grads[name].reshape(-1)
        for idx in indices:
            if exclude is not None and exclude(name, int(idx)):
                continue
            saved = flat[idx]
            flat[idx] = saved + h
            plus = compute()
            flat[idx] = saved - h
            minus = compute()
            flat[idx] = saved
            if len(plus) > 2 and plus[2] != minus[2]:
                continue
            numeric = (plus[0] - minus[0]) / (2.0 * h)
            analytic = analytic_flat[idx]
            denom = max(abs(numeric), abs(analytic), denom_floor)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
