"""Block-matching codec simulator (I/P frames only) and the ``.mmgp`` sidecar format.

Motion vectors use the backward convention: the prediction for a block at
``(y, x)`` of the current frame is read from ``(y + dy, x + dx)`` of the
reference (reconstructed previous) frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from mmnet.errors import ConfigError, DecodeError, ParseError

MACROBLOCK = 16
DEFAULT_GOP_LEN = 12
DEFAULT_SEARCH_RANGE = 8


class MacroblockMotion(NamedTuple):
    block_row: int
    block_col: int
    mv: tuple[float, float]  # (dy, dx) pixels


@dataclass(frozen=True, eq=False)
class PFrameData:
    mvs: np.ndarray  # (rows, cols, 2) backward (dy, dx) per block
    residual: np.ndarray  # (H, W, 3) signed
    block_size: int = MACROBLOCK

    def motions(self) -> Iterator[MacroblockMotion]:
        rows, cols, _ = self.mvs.shape
        for r in range(rows):
            for c in range(cols):
                yield MacroblockMotion(r, c, (float(self.mvs[r, c, 0]), float(self.mvs[r, c, 1])))


@dataclass(frozen=True, eq=False)
class Gop:
    iframe: np.ndarray  # (H, W, 3)
    pframes: tuple[PFrameData, ...]

    @property
    def n(self) -> int:
        return len(self.pframes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.iframe.shape[0], self.iframe.shape[1]

    def __len__(self) -> int:
        return 1 + len(self.pframes)


def gops_equal(a: Sequence[Gop], b: Sequence[Gop]) -> bool:
    if len(a) != len(b):
        return False
    for ga, gb in zip(a, b):
        if ga.n != gb.n or not np.array_equal(ga.iframe, gb.iframe):
            return False
        for pa, pb in zip(ga.pframes, gb.pframes):
            if pa.block_size != pb.block_size:
                return False
            if not (np.array_equal(pa.mvs, pb.mvs) and np.array_equal(pa.residual, pb.residual)):
                return False
    return True


# ---------------------------------------------------------------- encoder


def luma(frame: np.ndarray) -> np.ndarray:
    return frame.mean(axis=-1)


def _candidates(search_range: int) -> list[tuple[int, int]]:
    r = range(-search_range, search_range + 1)
    # smallest |mv| first, then row-major scan order
    return sorted(((dy, dx) for dy in r for dx in r), key=lambda m: (m[0] ** 2 + m[1] ** 2, m[0], m[1]))


def block_sad(cur_luma: np.ndarray, ref_luma: np.ndarray, dy: int, dx: int, block: int = MACROBLOCK) -> np.ndarray:
    """SAD of every block for one candidate vector; ``inf`` where the source leaves the frame."""
    h, w = cur_luma.shape
    rows, cols = h // block, w // block
    out = np.full((rows, cols), np.inf)
    ys = np.arange(rows) * block + dy
    xs = np.arange(cols) * block + dx
    ok_r = (ys >= 0) & (ys + block <= h)
    ok_c = (xs >= 0) & (xs + block <= w)
    if not ok_r.any() or not ok_c.any():
        return out
    r0, r1 = np.flatnonzero(ok_r)[[0, -1]]
    c0, c1 = np.flatnonzero(ok_c)[[0, -1]]
    cur = cur_luma[r0 * block : (r1 + 1) * block, c0 * block : (c1 + 1) * block]
    src = ref_luma[r0 * block + dy : (r1 + 1) * block + dy, c0 * block + dx : (c1 + 1) * block + dx]
    diff = np.abs(cur - src).reshape(r1 - r0 + 1, block, c1 - c0 + 1, block)
    out[r0 : r1 + 1, c0 : c1 + 1] = diff.sum(axis=(1, 3))
    return out


def estimate_motion(cur: np.ndarray, ref: np.ndarray, search_range: int, block: int = MACROBLOCK) -> np.ndarray:
    """Exhaustive integer block matching on luma; returns ``(rows, cols, 2)`` vectors."""
    cl, rl = luma(cur), luma(ref)
    rows, cols = cur.shape[0] // block, cur.shape[1] // block
    best = np.full((rows, cols), np.inf)
    mvs = np.zeros((rows, cols, 2))
    for dy, dx in _candidates(search_range):
        sad = block_sad(cl, rl, dy, dx, block)
        better = sad < best
        best[better] = sad[better]
        mvs[better] = (dy, dx)
    return mvs


def motion_compensate(ref: np.ndarray, mvs: np.ndarray, block: int = MACROBLOCK) -> np.ndarray:
    """Prediction frame built from ``ref`` block by block; fractional vectors are bilinear."""
    h, w, _ = ref.shape
    rows, cols, _ = mvs.shape
    if rows * block != h or cols * block != w:
        raise DecodeError(f"motion grid {rows}x{cols} with block {block} does not tile a {h}x{w} frame")
    pred = np.empty_like(ref)
    for r in range(rows):
        for c in range(cols):
            dy, dx = mvs[r, c]
            y0, x0 = r * block + dy, c * block + dx
            if y0 < 0 or x0 < 0 or np.ceil(y0) + block > h or np.ceil(x0) + block > w:
                raise DecodeError(f"block ({r}, {c}) motion ({dy}, {dx}) points outside the frame")
            dst = pred[r * block : (r + 1) * block, c * block : (c + 1) * block]
            if float(dy).is_integer() and float(dx).is_integer():
                yi, xi = int(y0), int(x0)
                dst[...] = ref[yi : yi + block, xi : xi + block]
            else:
                yi, xi = int(np.floor(y0)), int(np.floor(x0))
                fy, fx = y0 - yi, x0 - xi
                win = np.pad(ref, ((0, 1), (0, 1), (0, 0)))[yi : yi + block + 1, xi : xi + block + 1]
                dst[...] = (
                    (1 - fy) * (1 - fx) * win[:-1, :-1]
                    + (1 - fy) * fx * win[:-1, 1:]
                    + fy * (1 - fx) * win[1:, :-1]
                    + fy * fx * win[1:, 1:]
                )
    return pred


def block_match_encode(
    frames: Sequence[np.ndarray],
    gop_len: int = DEFAULT_GOP_LEN,
    search_range: int = DEFAULT_SEARCH_RANGE,
    quantize_residual: bool = False,
) -> list[Gop]:
    """Split ``frames`` into GOPs and encode every P-frame against its reconstructed predecessor.

    With ``quantize_residual`` the residual is rounded to 1/255 steps; the
    closed loop keeps every reconstructed frame within 1/510 of its source.
    """
    if gop_len < 1:
        raise ConfigError(f"gop_len must be >= 1, got {gop_len}")
    if search_range < 0:
        raise ConfigError(f"search_range must be >= 0, got {search_range}")
    gops = []
    for start in range(0, len(frames), gop_len):
        chunk = [np.asarray(f, dtype=np.float64) for f in frames[start : start + gop_len]]
        h, w = chunk[0].shape[:2]
        if h % MACROBLOCK or w % MACROBLOCK:
            raise ConfigError(f"frame dims ({h}, {w}) not divisible by macroblock size {MACROBLOCK}")
        ref = chunk[0]
        pframes = []
        for cur in chunk[1:]:
            if cur.shape != chunk[0].shape:
                raise ConfigError(f"frame shape {cur.shape} differs from GOP shape {chunk[0].shape}")
            mvs = estimate_motion(cur, ref, search_range)
            pred = motion_compensate(ref, mvs)
            residual = cur - pred
            if quantize_residual:
                residual = np.round(residual * 255.0) / 255.0
            pframes.append(PFrameData(mvs, residual))
            ref = pred + residual
        gops.append(Gop(chunk[0], tuple(pframes)))
    return gops


def decode_reconstruct(gop: Gop) -> list[np.ndarray]:
    frames = [gop.iframe.copy()]
    for p in gop.pframes:
        frames.append(motion_compensate(frames[-1], p.mvs, p.block_size) + p.residual)
    return frames


def decode_all(gops: Sequence[Gop]) -> list[np.ndarray]:
    return [f for g in gops for f in decode_reconstruct(g)]


# ---------------------------------------------------------------- sidecar

SIDECAR_MAGIC = b"MMGP"
SIDECAR_VERSION = 1


def _planes(img: np.ndarray) -> bytes:
    return np.ascontiguousarray(np.moveaxis(img, -1, 0), dtype="<f4").tobytes()


def export_sidecar(gops: Sequence[Gop]) -> bytes:
    """Serialize GOPs; float payloads are little-endian float32, images channel-planar."""
    out = [SIDECAR_MAGIC, struct.pack("<II", SIDECAR_VERSION, len(gops))]
    for g in gops:
        h, w = g.shape
        out.append(struct.pack("<III", h, w, g.n))
        out.append(_planes(g.iframe))
        for p in g.pframes:
            rows, cols, _ = p.mvs.shape
            out.append(struct.pack("<HII", p.block_size, rows, cols))
            out.append(np.ascontiguousarray(p.mvs, dtype="<f4").tobytes())
            out.append(_planes(p.residual))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated stream reading {what}", offset=self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float64)


def import_sidecar(data: bytes) -> list[Gop]:
    rd = _Reader(data)
    magic = rd.take(4, "magic")
    if magic != SIDECAR_MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    (version,) = rd.unpack("<I", "version")
    if version != SIDECAR_VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    (count,) = rd.unpack("<I", "GOP count")
    gops = []
    for gi in range(count):
        at = rd.pos
        h, w, n = rd.unpack("<III", f"GOP {gi} header")
        if h == 0 or w == 0:
            raise ParseError(f"GOP {gi} has empty frame dims {h}x{w}", offset=at)
        iframe = np.moveaxis(rd.floats(3 * h * w, f"GOP {gi} I-frame").reshape(3, h, w), 0, -1)
        pframes = []
        for k in range(n):
            at = rd.pos
            block, rows, cols = rd.unpack("<HII", f"GOP {gi} P-frame {k} header")
            if block == 0 or rows * block != h or cols * block != w:
                raise ParseError(
                    f"GOP {gi} P-frame {k}: block grid {rows}x{cols} of size {block} does not tile {h}x{w}",
                    offset=at,
                )
            mvs = rd.floats(rows * cols * 2, f"GOP {gi} P-frame {k} motion").reshape(rows, cols, 2)
            residual = np.moveaxis(rd.floats(3 * h * w, f"GOP {gi} P-frame {k} residual").reshape(3, h, w), 0, -1)
            pframes.append(PFrameData(mvs, residual, block))
        gops.append(Gop(np.ascontiguousarray(iframe), tuple(pframes)))
    if rd.pos != len(data):
        raise ParseError(f"{len(data) - rd.pos} trailing bytes after last GOP", offset=rd.pos)
    return gops
