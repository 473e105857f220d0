"""Motion-aided LSTM: warp the memory with codec motion, feed rescaled residuals
as the new input, and update with sigmoid gates and ReLU candidates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mmnet.errors import ConfigError, UsageError
from mmnet.tensor import (
    ConvParams,
    Tensor,
    add,
    as_tensor,
    channels,
    concat,
    conv2d,
    init_conv,
    mul,
    relu,
    scale,
    sigmoid,
)
from mmnet.warp import warp_all

GATE_ORDER = ("g", "i", "c", "o")


@dataclass
class MemoryState:
    cell: Tensor
    hidden: Tensor


@dataclass
class CellParams:
    """``gates`` stacks W_g, W_i, W_c, W_o along output channels in that order.

    ``residual_direct`` is only used by the no-LSTM propagation variant.
    """

    residual_conv: ConvParams
    gates: ConvParams
    residual_direct: ConvParams | None = None

    @property
    def channels(self) -> int:
        return self.gates.out_channels // 4

    @classmethod
    def from_gates(cls, residual_conv: ConvParams, w_g: ConvParams, w_i: ConvParams,
                   w_c: ConvParams, w_o: ConvParams, residual_direct: ConvParams | None = None) -> CellParams:
        parts = (w_g, w_i, w_c, w_o)
        ref = w_g
        for p in parts:
            if p.kernel.shape != ref.kernel.shape or (p.stride, p.padding) != (ref.stride, ref.padding):
                raise ConfigError("gate convolutions must share one channel/kernel configuration")
        kernel = np.concatenate([p.kernel.data for p in parts], axis=0)
        bias = np.concatenate([p.bias.data for p in parts], axis=0)
        gates = ConvParams(Tensor(kernel, True), Tensor(bias, True), ref.stride, ref.padding)
        return cls(residual_conv, gates, residual_direct)

    def gate(self, name: str) -> ConvParams:
        k = GATE_ORDER.index(name)
        c = self.channels
        return ConvParams(
            Tensor(self.gates.kernel.data[k * c : (k + 1) * c]),
            Tensor(self.gates.bias.data[k * c : (k + 1) * c]),
            self.gates.stride,
            self.gates.padding,
        )

    def named_tensors(self, prefix: str = "cell") -> dict[str, Tensor]:
        out = {
            f"{prefix}.residual.kernel": self.residual_conv.kernel,
            f"{prefix}.residual.bias": self.residual_conv.bias,
            f"{prefix}.gates.kernel": self.gates.kernel,
            f"{prefix}.gates.bias": self.gates.bias,
        }
        if self.residual_direct is not None:
            out[f"{prefix}.direct.kernel"] = self.residual_direct.kernel
            out[f"{prefix}.direct.bias"] = self.residual_direct.bias
        return out


def init_cell(rng: np.random.Generator, feature_channels: int, residual_channels: int = 8,
              image_channels: int = 3, kernel_size: int = 3, select_bias: float = 5.0,
              input_bias: float = -5.0, gate_scale: float = 0.1) -> CellParams:
    """Seeded cell parameters that start close to pure propagation.

    The selection gate ``g`` starts open (bias ``select_bias``), the input
    gate ``i`` nearly closed (bias ``input_bias``) and gate kernels are shrunk
    by ``gate_scale``, so an untrained cell carries the warped memory forward
    almost unchanged across a GOP.
    """
    residual_conv = init_conv(rng, image_channels, residual_channels, 1)
    gates = init_conv(rng, feature_channels + residual_channels, 4 * feature_channels, kernel_size)
    gates.kernel.data *= gate_scale
    c = feature_channels
    gates.bias.data[:c] += select_bias
    gates.bias.data[c : 2 * c] += input_bias
    direct = init_conv(rng, image_channels, feature_channels, 1)
    direct.kernel.data *= gate_scale
    direct.bias.data[:] = 0.0
    return CellParams(residual_conv, gates, direct)


def init_state(f_atten) -> MemoryState:
    """Cell and hidden both start as independent copies of the fused I-frame features."""
    f = as_tensor(f_atten)
    return MemoryState(scale(f, 1.0), scale(f, 1.0))


def step(
    state: MemoryState,
    motion: np.ndarray | None,
    residual: np.ndarray | None,
    params: CellParams,
    use_mv: bool = True,
    use_residual: bool = True,
    use_lstm: bool = True,
) -> tuple[MemoryState, Tensor]:
    """One P-frame update. Returns the new state and the frame's feature map (the cell)."""
    cell, hidden = state.cell, state.hidden
    if cell.shape != hidden.shape:
        raise UsageError(f"cell {cell.shape} and hidden {hidden.shape} dims differ")
    if use_mv:
        if motion is None:
            raise UsageError("motion field required when use_mv is set")
        if tuple(np.shape(motion)[-3:-1]) != tuple(cell.shape[-3:-1]):
            raise UsageError(f"motion dims {np.shape(motion)[-3:-1]} != feature dims {cell.shape[-3:-1]}")
        cell, hidden = warp_all([cell, hidden], motion)
    if use_residual:
        if residual is None:
            raise UsageError("residual grid required when use_residual is set")
        if tuple(np.shape(residual)[-3:-1]) != tuple(cell.shape[-3:-1]):
            raise UsageError(f"residual dims {np.shape(residual)[-3:-1]} != feature dims {cell.shape[-3:-1]}")

    if not use_lstm:
        new_cell = cell
        if use_residual:
            if params.residual_direct is None:
                raise ConfigError("no-LSTM propagation with residuals needs residual_direct weights")
            new_cell = add(cell, conv2d(residual, params.residual_direct))
        return MemoryState(new_cell, new_cell), new_cell

    if use_residual:
        rescaled = conv2d(residual, params.residual_conv)
    else:
        rescaled = Tensor(np.zeros((*hidden.shape[:-1], params.residual_conv.out_channels)))
    x = concat([hidden, rescaled], axis=-1)
    pre = conv2d(x, params.gates)
    c = params.channels
    g = sigmoid(channels(pre, 0, c))
    i = sigmoid(channels(pre, c, 2 * c))
    candidate = relu(channels(pre, 2 * c, 3 * c))
    o = sigmoid(channels(pre, 3 * c, 4 * c))
    new_cell = add(mul(g, cell), mul(i, candidate))
    new_hidden = mul(o, relu(new_cell))
    return MemoryState(new_cell, new_hidden), new_cell


def propagate_sequence(
    init,
    inputs: Sequence[tuple[np.ndarray, np.ndarray]],
    params: CellParams,
    use_mv: bool = True,
    use_residual: bool = True,
    use_lstm: bool = True,
) -> list[Tensor]:
    """Features ``[c_1 .. c_n]`` for the P-frames of one GOP, starting from ``init``."""
    state = init_state(init)
    outputs = []
    for motion, residual in inputs:
        state, out = step(state, motion, residual, params, use_mv, use_residual, use_lstm)
        outputs.append(out)
    return outputs
