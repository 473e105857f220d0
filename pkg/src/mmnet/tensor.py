"""Dense float64 tensors, a linear gradient tape and the differentiable ops
the pipeline needs.

Feature maps are plain ``numpy`` arrays laid out ``(height, width, channels)``;
every op also accepts any number of leading batch axes, so ``(N, H, W, C)``
batches go through the same code. Ops take ``Tensor`` or array arguments and
always return a ``Tensor``. When a :class:`GradientTape` is active and one of
the inputs requires a gradient, the op appends its backward closure to the
tape; :meth:`GradientTape.backward` replays the records in reverse.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Callable, Mapping, Sequence

import numpy as np

from mmnet.errors import ConfigError, ParseError, UsageError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


_TAPES: list[GradientTape] = []


class GradientTape:
    """Records op backward closures while active (``with GradientTape() as tape``).

    One tape belongs to one training step; it is not safe to share between
    threads.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> GradientTape:
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def backward(self, output: Tensor, grad=None) -> None:
        if grad is None:
            grad = np.ones_like(output.data)
        output.grad = np.asarray(grad, dtype=DTYPE)
        for out, inputs, backward_fn in reversed(self.records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for tensor, g in zip(inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                tensor.grad = g if tensor.grad is None else tensor.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    tape = _TAPES[-1] if _TAPES else None
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.records.append((out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = sigmoid_values(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def identity(a) -> Tensor:
    return as_tensor(a)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "identity": identity,
    "linear": identity,
}


# ---------------------------------------------------------------- reductions / reshaping


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def channel_sum(a) -> Tensor:
    """Sum over the last (channel) axis, keeping it as a size-1 axis."""
    a = as_tensor(a)
    return _result(
        a.data.sum(axis=-1, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
    )


def channels(a, start: int, stop: int) -> Tensor:
    """Slice ``[start:stop]`` of the last axis."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        full[..., start:stop] = g
        return (full,)

    return _result(a.data[..., start:stop].copy(), (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis) for k in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def avg_pool2d(a, size: int) -> Tensor:
    """Non-overlapping ``size x size`` mean pooling over the two axes before channels."""
    a = as_tensor(a)
    *lead, h, w, c = a.shape
    if h % size or w % size:
        raise ConfigError(f"pool size {size} does not divide spatial dims ({h}, {w})")
    blocks = a.data.reshape(*lead, h // size, size, w // size, size, c)
    out = blocks.mean(axis=(-4, -2))

    def backward(g):
        expanded = np.repeat(np.repeat(g, size, axis=-3), size, axis=-2)
        return (expanded / (size * size),)

    return _result(out, (a,), backward)


# ---------------------------------------------------------------- softmax / MLP


def softmax_values(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.data.size == 0 or a.shape[axis] == 0:
        raise UsageError("softmax of an empty vector")
    s = softmax_values(a.data, axis=axis)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _result(s, (a,), backward)


def linear(a, weight, bias) -> Tensor:
    """Affine map over the last axis, ``weight`` shaped ``(out, in)``."""
    a, weight, bias = as_tensor(a), as_tensor(weight), as_tensor(bias)
    if a.shape[-1] != weight.shape[1]:
        raise ConfigError(
            f"linear input width {a.shape[-1]} != weight in-features {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise ConfigError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    flat = a.data.reshape(-1, a.shape[-1])
    out = flat @ weight.data.T + bias.data

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        return (
            (g2 @ weight.data).reshape(a.shape),
            g2.T @ flat,
            g2.sum(axis=0),
        )

    return _result(out.reshape(*a.shape[:-1], weight.shape[0]), (a, weight, bias), backward)


@dataclass
class DenseLayer:
    weight: Tensor  # (out, in)
    bias: Tensor
    activation: str = "identity"


def mlp_forward(x, layers: Sequence[DenseLayer]) -> Tensor:
    """Apply affine+activation layers over the last axis.

    Leading axes are treated as independent positions, so one MLP is shared
    across every spatial location of a map.
    """
    out = as_tensor(x)
    for k, layer in enumerate(layers):
        if layer.activation not in ACTIVATIONS:
            raise ConfigError(f"layer {k}: unknown activation {layer.activation!r}")
        if out.shape[-1] != layer.weight.shape[1]:
            raise ConfigError(
                f"layer {k}: input width {out.shape[-1]} != weight in-features {layer.weight.shape[1]}"
            )
        out = ACTIVATIONS[layer.activation](linear(out, layer.weight, layer.bias))
    return out


# ---------------------------------------------------------------- convolution


@dataclass
class ConvParams:
    """Cross-correlation weights. ``kernel`` is ``(out, in, kh, kw)``."""

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.kernel = as_tensor(self.kernel)
        self.bias = as_tensor(self.bias)
        if self.kernel.data.ndim != 4:
            raise ConfigError(f"kernel must be rank 4, got shape {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ConfigError(
                f"bias shape {self.bias.shape} does not match out-channels {self.kernel.shape[0]}"
            )
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    def tensors(self) -> tuple[Tensor, Tensor]:
        return self.kernel, self.bias


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    n, hp, wp, c = x.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = x[
                :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :
            ]
    return cols.reshape(n * ho * wo, kh * kw * c), ho, wo


def conv2d(x, params: ConvParams) -> Tensor:
    """2D cross-correlation with zero padding over ``(..., H, W, C)`` input."""
    x = as_tensor(x)
    kernel, bias = params.kernel, params.bias
    cout, cin, kh, kw = kernel.shape
    stride, pad = params.stride, params.padding
    if x.data.ndim < 3:
        raise ConfigError(f"conv2d input must be (..., H, W, C), got shape {x.shape}")
    if x.shape[-1] != cin:
        raise ConfigError(f"conv2d channel axis: input has {x.shape[-1]}, kernel expects {cin}")
    *lead, h, w, _ = x.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ConfigError(
            f"conv2d spatial axes: input ({h}, {w}) too small for kernel ({kh}, {kw}) "
            f"with padding {pad}"
        )
    batch = x.data.reshape(-1, h, w, cin)
    n = batch.shape[0]
    pointwise = kh == 1 and kw == 1 and stride == 1 and pad == 0
    if pointwise:
        cols = batch.reshape(-1, cin)
    else:
        cols, ho, wo = _im2col(batch, kh, kw, stride, pad)
    wmat = kernel.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ wmat.T + bias.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        dk = (g2.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        db = g2.sum(axis=0)
        dcols = g2 @ wmat
        if pointwise:
            dx = dcols.reshape(x.shape)
        else:
            dcols = dcols.reshape(n, ho, wo, kh, kw, cin)
            dpad = np.zeros((n, h + 2 * pad, w + 2 * pad, cin), dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    dpad[
                        :,
                        i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride,
                        :,
                    ] += dcols[:, :, :, i, j, :]
            dx = dpad[:, pad : pad + h, pad : pad + w, :].reshape(x.shape)
        return dx, dk, db

    return _result(out.reshape(*lead, ho, wo, cout), (x, kernel, bias), backward)


# ---------------------------------------------------------------- losses


def bce_with_logits(logits, targets: np.ndarray, normalizer: float = 1.0) -> Tensor:
    """Summed binary cross-entropy on logits divided by ``normalizer``."""
    logits = as_tensor(logits)
    z = logits.data
    t = np.asarray(targets, dtype=DTYPE)
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        return ((sigmoid_values(z) - t) * (g / normalizer),)

    return _result(np.asarray(loss.sum() / normalizer), (logits,), backward)


def softmax_cross_entropy(logits, labels: np.ndarray, mask: np.ndarray, normalizer: float = 1.0) -> Tensor:
    """Cross-entropy of class ``labels`` over the last axis at positions where ``mask``."""
    logits = as_tensor(logits)
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=DTYPE)
    shifted = z - z.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / normalizer

    def backward(g):
        onehot = np.zeros_like(z)
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
        return ((np.exp(logp) - onehot) * mask[..., None] * (g / normalizer),)

    return _result(np.asarray(loss), (logits,), backward)


def l1_loss(pred, target: np.ndarray, mask: np.ndarray, normalizer: float = 1.0) -> Tensor:
    """Masked L1 summed over the last axis; ``mask`` broadcasts over that axis."""
    pred = as_tensor(pred)
    diff = pred.data - np.asarray(target, dtype=DTYPE)
    m = np.asarray(mask, dtype=DTYPE)[..., None]

    def backward(g):
        return (np.sign(diff) * m * (g / normalizer),)

    return _result(np.asarray((np.abs(diff) * m).sum() / normalizer), (pred,), backward)


# ---------------------------------------------------------------- initialization


def init_conv(
    rng: np.random.Generator,
    in_channels: int,
    out_channels: int,
    kernel_size: int,
    stride: int = 1,
    padding: int | None = None,
    scheme: str = "uniform",
) -> ConvParams:
    """Seeded conv weights.

    ``uniform`` draws kernel and bias from ``U[-s, s]``, ``s = sqrt(1/fan_in)``.
    ``relu`` draws the kernel from ``U[-sqrt(6/fan_in), sqrt(6/fan_in)]`` with
    zero bias, which keeps activation scale through deep ReLU stacks.
    """
    if padding is None:
        padding = kernel_size // 2
    fan_in = in_channels * kernel_size * kernel_size
    shape = (out_channels, in_channels, kernel_size, kernel_size)
    if scheme == "uniform":
        s = np.sqrt(1.0 / fan_in)
        kernel = rng.uniform(-s, s, size=shape)
        bias = rng.uniform(-s, s, size=out_channels)
    elif scheme == "relu":
        s = np.sqrt(6.0 / fan_in)
        kernel = rng.uniform(-s, s, size=shape)
        bias = np.zeros(out_channels)
    else:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    return ConvParams(
        Tensor(kernel, requires_grad=True), Tensor(bias, requires_grad=True), stride, padding
    )


def init_dense(rng: np.random.Generator, n_in: int, n_out: int, activation: str) -> DenseLayer:
    s = np.sqrt(1.0 / n_in)
    return DenseLayer(
        Tensor(rng.uniform(-s, s, size=(n_out, n_in)), requires_grad=True),
        Tensor(rng.uniform(-s, s, size=n_out), requires_grad=True),
        activation,
    )


# ---------------------------------------------------------------- gradient check


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    epsilon: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` maps tensors (one per entry of ``inputs``) to a tensor of any shape;
    it is reduced to a scalar by a fixed random projection. The per-coordinate
    error is ``|a - n| / max(|a|, |n|, floor)`` with ``floor`` one percent of
    the largest analytic gradient of that input, so coordinates whose gradient
    is negligible are judged on absolute error. ``max_coords`` samples that
    many coordinates per input instead of checking them all.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise UsageError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=DTYPE) for a in inputs]
    probe = fn(*[Tensor(a) for a in arrays]).data
    projection = rng.standard_normal(probe.shape)

    def objective(arrs) -> float:
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data * projection))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with GradientTape() as tape:
        loss = sum_all(mul(fn(*leaves), projection))
    tape.backward(loss)

    worst = 0.0
    for k, arr in enumerate(arrays):
        analytic = leaves[k].grad if leaves[k].grad is not None else np.zeros_like(arr)
        floor = max(1e-2 * float(np.abs(analytic).max(initial=0.0)), 1e-10)
        coords = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            coords = rng.choice(arr.size, size=max_coords, replace=False)
        for flat_index in coords:
            idx = np.unravel_index(flat_index, arr.shape)
            original = arr[idx]
            arr[idx] = original + epsilon
            f_plus = objective(arrays)
            arr[idx] = original - epsilon
            f_minus = objective(arrays)
            arr[idx] = original
            numeric = (f_plus - f_minus) / (2 * epsilon)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"MMNT"
CHECKPOINT_VERSION = 1


def write_checkpoint(stream: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    """Little-endian records: name length, name, rank, dims, float64 payload."""
    stream.write(CHECKPOINT_MAGIC)
    stream.write(struct.pack("<I", CHECKPOINT_VERSION))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        stream.write(struct.pack("<I", len(encoded)))
        stream.write(encoded)
        stream.write(struct.pack("<I", arr.ndim))
        stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        stream.write(arr.tobytes())


def read_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < 8:
        raise ParseError("checkpoint truncated in header", offset=len(data))
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"bad checkpoint magic {data[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", offset=4)
    pos = 8
    out: dict[str, np.ndarray] = {}

    def need(n: int, what: str) -> None:
        if pos + n > len(data):
            raise ParseError(f"checkpoint truncated reading {what}", offset=pos)

    while pos < len(data):
        need(4, "name length")
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need(name_len, "name")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        need(4, "rank")
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need(4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(dims, dtype=np.int64))
        need(8 * count, f"payload of {name!r}")
        out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).astype(DTYPE)
        pos += 8 * count
    return out


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        write_checkpoint(fh, tensors)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    try:
        return read_checkpoint(Path(path).read_bytes())
    except ParseError as exc:
        raise ParseError(exc.message, offset=exc.offset, path=str(path)) from None
