"""Macroblock motion / residual rescaling to the feature grid and bilinear feature warping.

A ``MotionField`` is an array ``(h, w, 2)`` of backward displacements
``(dy, dx)`` in feature cells: output cell ``p`` samples the previous map at
``p + motion[p]``. Samples outside the map contribute zero.
"""

from __future__ import annotations

import numpy as np

from mmnet.errors import ConfigError, UsageError
from mmnet.tensor import DTYPE, Tensor, _result, as_tensor


def _stride(frame_hw: tuple[int, int], feature_hw: tuple[int, int]) -> int:
    (fh, fw), (gh, gw) = frame_hw, feature_hw
    if gh <= 0 or gw <= 0 or fh % gh or fw % gw or fh // gh != fw // gw:
        raise ConfigError(f"frame dims {frame_hw} are not an integer multiple of feature dims {feature_hw}")
    return fh // gh


def mv_to_feature_grid(
    mvs: np.ndarray,
    frame_hw: tuple[int, int],
    feature_hw: tuple[int, int],
    stride: int | None = None,
    block_size: int = 16,
) -> np.ndarray:
    """Area-average block motion over each feature cell, then divide by the stride."""
    s = _stride(frame_hw, feature_hw)
    if stride is not None and stride != s:
        raise ConfigError(f"stride {stride} inconsistent with frame {frame_hw} / features {feature_hw}")
    rows, cols, _ = mvs.shape
    if rows * block_size != frame_hw[0] or cols * block_size != frame_hw[1]:
        raise ConfigError(f"{rows}x{cols} blocks of {block_size} px do not tile frame {frame_hw}")
    per_pixel = np.repeat(np.repeat(np.asarray(mvs, dtype=DTYPE), block_size, axis=0), block_size, axis=1)
    gh, gw = feature_hw
    return per_pixel.reshape(gh, s, gw, s, 2).mean(axis=(1, 3)) / s


def residual_to_feature_grid(residual: np.ndarray, feature_hw: tuple[int, int]) -> np.ndarray:
    """Per-channel mean over each ``stride x stride`` pixel tile."""
    h, w, c = residual.shape
    s = _stride((h, w), feature_hw)
    gh, gw = feature_hw
    return np.asarray(residual, dtype=DTYPE).reshape(gh, s, gw, s, c).mean(axis=(1, 3))


def _corners(motion: np.ndarray):
    """Flat source indices and bilinear weights for the four neighbours of each sample."""
    h, w = motion.shape[-3], motion.shape[-2]
    py, px = np.meshgrid(np.arange(h, dtype=DTYPE), np.arange(w, dtype=DTYPE), indexing="ij")
    sy = py + motion[..., 0]
    sx = px + motion[..., 1]
    y0, x0 = np.floor(sy), np.floor(sx)
    fy, fx = sy - y0, sx - x0
    out = []
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            yy, xx = y0 + oy, x0 + ox
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = (np.clip(yy, 0, h - 1) * w + np.clip(xx, 0, w - 1)).astype(np.intp)
            out.append((idx.reshape(idx.shape[0], -1), (wy * wx * valid).reshape(idx.shape[0], -1)))
    return out


def _prepare(feat: np.ndarray, motion: np.ndarray):
    feat = np.asarray(feat, dtype=DTYPE)
    motion = np.asarray(motion, dtype=DTYPE)
    if feat.ndim < 3 or motion.ndim < 3 or motion.shape[-1] != 2:
        raise UsageError(f"expected feat (..., H, W, C) and motion (..., H, W, 2); got {feat.shape}, {motion.shape}")
    if feat.shape[-3:-1] != motion.shape[-3:-1]:
        raise UsageError(f"feature dims {feat.shape[-3:-1]} != motion dims {motion.shape[-3:-1]}")
    lead = feat.shape[:-3]
    h, w, c = feat.shape[-3:]
    motion = np.broadcast_to(motion, (*lead, h, w, 2)).reshape(-1, h, w, 2)
    return feat.reshape(-1, h * w, c), motion, feat.shape


def bilinear_warp(feat: np.ndarray, motion: np.ndarray, corners=None) -> np.ndarray:
    """``out(p) = sum_q G(q, p + motion(p)) feat(q)`` with the separable tent kernel."""
    flat, motion, shape = _prepare(feat, motion)
    batch = np.arange(flat.shape[0])[:, None]
    out = np.zeros_like(flat)
    for idx, weight in corners or _corners(motion):
        out += weight[..., None] * flat[batch, idx]
    return out.reshape(shape)


def bilinear_warp_backward(grad: np.ndarray, motion: np.ndarray, corners=None) -> np.ndarray:
    """Adjoint of :func:`bilinear_warp` for fixed motion."""
    flat_grad, motion, shape = _prepare(grad, motion)
    n, hw, c = flat_grad.shape
    out = np.zeros((n * hw, c), dtype=DTYPE)
    offsets = (np.arange(n) * hw)[:, None]
    for idx, weight in corners or _corners(motion):
        np.add.at(out, (idx + offsets).ravel(), (weight[..., None] * flat_grad).reshape(-1, c))
    return out.reshape(shape)


def warp(feat, motion: np.ndarray) -> Tensor:
    """Taped :func:`bilinear_warp`; motion is treated as a constant."""
    return warp_all([feat], motion)[0]


def warp_all(feats, motion: np.ndarray) -> list[Tensor]:
    """Warp several same-shaped maps with one motion field, sharing the interpolation weights."""
    feats = [as_tensor(f) for f in feats]
    motion = np.asarray(motion, dtype=DTYPE)
    _, flat_motion, _ = _prepare(feats[0].data, motion)
    corners = _corners(flat_motion)
    return [
        _result(
            bilinear_warp(f.data, motion, corners),
            (f,),
            lambda g: (bilinear_warp_backward(g, motion, corners),),
        )
        for f in feats
    ]
