"""Pyramidal feature attention: embed every level to the coarsest grid, squeeze
channels into per-position scale descriptors, and fuse the levels with
softmax weights from a position-shared MLP."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mmnet.errors import ConfigError
from mmnet.tensor import (
    ConvParams,
    DenseLayer,
    Tensor,
    add,
    as_tensor,
    channel_sum,
    channels,
    concat,
    conv2d,
    init_dense,
    mlp_forward,
    mul,
    softmax,
)


@dataclass
class AttentionParams:
    embeds: list[ConvParams]  # one per level, finest first
    mlp: list[DenseLayer]

    def named_tensors(self, prefix: str = "attention") -> dict[str, Tensor]:
        out = {}
        for k, p in enumerate(self.embeds):
            out[f"{prefix}.embed{k}.kernel"] = p.kernel
            out[f"{prefix}.embed{k}.bias"] = p.bias
        for k, layer in enumerate(self.mlp):
            out[f"{prefix}.mlp{k}.weight"] = layer.weight
            out[f"{prefix}.mlp{k}.bias"] = layer.bias
        return out


def init_attention(
    rng: np.random.Generator,
    level_channels: Sequence[int],
    hidden: int = 16,
    top_bias: float = 4.0,
) -> AttentionParams:
    """Warm start that passes the coarsest level through.

    The coarsest embedding is a 1x1 identity, finer embeddings start at zero
    and the output layer starts with zero weights and ``top_bias`` on the
    coarsest logit, so a head trained on top-level features stays valid when
    attention is switched on.
    """
    n_levels = len(level_channels)
    if n_levels < 2:
        raise ConfigError("pyramid attention needs at least 2 levels")
    target = level_channels[-1]
    embeds = []
    for level, cin in enumerate(level_channels):
        stride = 2 ** (n_levels - 1 - level)
        kernel = np.zeros((target, cin, stride, stride))
        if stride == 1:
            if cin != target:
                raise ConfigError(f"coarsest level has {cin} channels, target is {target}")
            kernel[:, :, 0, 0] = np.eye(target)
        embeds.append(ConvParams(Tensor(kernel, True), Tensor(np.zeros(target), True), stride, 0))
    first = init_dense(rng, n_levels, hidden, "relu")
    last = DenseLayer(
        Tensor(np.zeros((n_levels, hidden)), True),
        Tensor(np.eye(n_levels)[-1] * top_bias, True),
        "identity",
    )
    return AttentionParams(embeds, [first, last])


def embed_level(f, level: int, n_levels: int, params: ConvParams, target_hw: tuple[int, int] | None = None,
                target_channels: int | None = None) -> Tensor:
    """Map level ``level`` (1-based, ``n_levels`` coarsest) onto the coarsest grid."""
    expected = 2 ** (n_levels - level)
    if params.stride != expected:
        raise ConfigError(f"level {level} of {n_levels} needs embedding stride {expected}, got {params.stride}")
    out = conv2d(f, params)
    if target_channels is not None and out.shape[-1] != target_channels:
        raise ConfigError(f"embedding of level {level} gives {out.shape[-1]} channels, expected {target_channels}")
    if target_hw is not None and tuple(out.shape[-3:-1]) != tuple(target_hw):
        raise ConfigError(f"embedding of level {level} gives dims {out.shape[-3:-1]}, expected {target_hw}")
    return out


def scale_descriptor(embedded) -> Tensor:
    """Channel sum at every position, shape ``(..., h, w, 1)``."""
    return channel_sum(embedded)


def attention_fuse(embedded: Sequence, mlp: Sequence[DenseLayer]) -> tuple[Tensor, Tensor]:
    """Return the fused map and the per-position weights ``(..., h, w, L)``."""
    embedded = [as_tensor(e) for e in embedded]
    n_levels = len(embedded)
    if mlp[0].weight.shape[1] != n_levels:
        raise ConfigError(f"MLP expects {mlp[0].weight.shape[1]} descriptors, got {n_levels} levels")
    if mlp[-1].weight.shape[0] != n_levels:
        raise ConfigError(f"MLP produces {mlp[-1].weight.shape[0]} logits for {n_levels} levels")
    shape = embedded[0].shape
    for e in embedded[1:]:
        if e.shape != shape:
            raise ConfigError(f"embedded levels disagree in shape: {shape} vs {e.shape}")
    descriptors = concat([scale_descriptor(e) for e in embedded], axis=-1)
    alpha = softmax(mlp_forward(descriptors, mlp), axis=-1)
    fused = mul(channels(alpha, 0, 1), embedded[0])
    for level in range(1, n_levels):
        fused = add(fused, mul(channels(alpha, level, level + 1), embedded[level]))
    return fused, alpha


def pyramid_attention(levels: Sequence, params: AttentionParams) -> tuple[Tensor, Tensor]:
    n_levels = len(levels)
    if len(params.embeds) != n_levels:
        raise ConfigError(f"{len(params.embeds)} embeddings for {n_levels} levels")
    top = as_tensor(levels[-1])
    embedded = [
        embed_level(f, k + 1, n_levels, p, top.shape[-3:-1], params.embeds[-1].out_channels)
        for k, (f, p) in enumerate(zip(levels, params.embeds))
    ]
    return attention_fuse(embedded, params.mlp)
