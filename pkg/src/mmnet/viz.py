"""Binary PPM/PGM images, motion-field colour coding and memory heatmaps."""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np

from mmnet.errors import ParseError, UsageError
from mmnet.synth import pixel_levels, quantize_pixels


def encode_pnm(image: np.ndarray) -> bytes:
    """``uint8`` ``(h, w, 3)`` → P6, ``(h, w)`` → P5."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise UsageError(f"image must be uint8, got {image.dtype}")
    if image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    elif image.ndim == 2:
        magic = b"P5"
    else:
        raise UsageError(f"unsupported image shape {image.shape}")
    h, w = image.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(image).tobytes()


def decode_pnm(data: bytes, path: str | None = None) -> np.ndarray:
    """Parse a binary P5/P6 image with maxval 255 (header comments allowed)."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("truncated image header", offset=pos, path=path)
        tokens.append(data[start:pos])
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported image magic {magic!r}", offset=0, path=path)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("non-integer image header field", offset=pos, path=path) from None
    if maxval != 255 or w <= 0 or h <= 0:
        raise ParseError(f"unsupported image header {w}x{h} maxval {maxval}", offset=pos, path=path)
    pos += 1  # single whitespace before the raster
    depth = 3 if magic == b"P6" else 1
    size = w * h * depth
    if len(data) - pos != size:
        raise ParseError(f"raster has {len(data) - pos} bytes, expected {size}", offset=pos, path=path)
    raster = np.frombuffer(data, dtype=np.uint8, count=size, offset=pos)
    return raster.reshape((h, w, 3) if depth == 3 else (h, w)).copy()


def write_image(path: str | Path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(image))


def read_image(path: str | Path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes(), str(path))


def write_frame(path: str | Path, frame: np.ndarray) -> None:
    """Float frame in [0, 1] → 8-bit PPM."""
    write_image(path, pixel_levels(frame))


def read_frame(path: str | Path) -> np.ndarray:
    """8-bit PPM → float frame on the codec's pixel grid."""
    image = read_image(path)
    if image.ndim != 3:
        raise ParseError("expected a colour (P6) frame", offset=0, path=str(path))
    return quantize_pixels(image.astype(np.float64) / 255.0)


def motion_field_image(motion: np.ndarray) -> np.ndarray:
    """Colour-wheel coding of an ``(h, w, 2)`` field of ``(dy, dx)``.

    Hue is the direction ``atan2(dy, dx)``, saturation is the magnitude over
    the field's maximum, value is 1. Zero motion renders white.
    """
    motion = np.asarray(motion, dtype=np.float64)
    if motion.ndim != 3 or motion.shape[-1] != 2:
        raise UsageError(f"motion field must be (h, w, 2), got {motion.shape}")
    if motion.shape[0] == 0 or motion.shape[1] == 0:
        raise UsageError("motion field has zero size")
    dy, dx = motion[..., 0], motion[..., 1]
    mag = np.hypot(dy, dx)
    peak = mag.max()
    sat = mag / peak if peak > 0 else np.zeros_like(mag)
    hue = (np.arctan2(dy, dx) / (2 * np.pi)) % 1.0
    rgb = np.empty(motion.shape[:2] + (3,))
    for idx in np.ndindex(*motion.shape[:2]):
        rgb[idx] = colorsys.hsv_to_rgb(hue[idx], sat[idx], 1.0)
    return np.round(rgb * 255.0).astype(np.uint8)


def upscale_nearest(image: np.ndarray, factor_hw: tuple[int, int]) -> np.ndarray:
    return np.repeat(np.repeat(image, factor_hw[0], axis=0), factor_hw[1], axis=1)


def viz_motion_field(motion: np.ndarray, out_path: str | Path | None = None, block: int = 1) -> np.ndarray:
    """Render (and optionally write as P6) a motion field, each vector as a ``block``-pixel square."""
    image = upscale_nearest(motion_field_image(motion), (block, block))
    if out_path is not None:
        write_image(out_path, image)
    return image


def memory_heatmap(cell: np.ndarray, frame_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Channel-mean ``|cell|``, min-max scaled to 8-bit grey, nearest-upscaled to ``frame_hw``."""
    cell = np.asarray(cell, dtype=np.float64)
    if cell.ndim != 3 or cell.shape[0] == 0 or cell.shape[1] == 0:
        raise UsageError(f"memory must be a non-empty (h, w, C) map, got {cell.shape}")
    energy = np.abs(cell).mean(axis=-1)
    lo, hi = energy.min(), energy.max()
    norm = (energy - lo) / (hi - lo) if hi > lo else np.zeros_like(energy)
    grey = np.round(norm * 255.0).astype(np.uint8)
    if frame_hw is None:
        return grey
    gh, gw = grey.shape
    if frame_hw[0] % gh or frame_hw[1] % gw:
        raise UsageError(f"frame dims {frame_hw} are not a multiple of memory dims {grey.shape}")
    return upscale_nearest(grey, (frame_hw[0] // gh, frame_hw[1] // gw))


def viz_memory(cell: np.ndarray, out_path: str | Path | None = None,
               frame_hw: tuple[int, int] | None = None) -> np.ndarray:
    image = memory_heatmap(cell, frame_hw)
    if out_path is not None:
        write_image(out_path, image)
    return image
