"""Synthetic ground-truthed clips: textured shapes moving over a textured background."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mmnet.errors import ConfigError, ParseError

CLASS_NAMES = ("rectangle", "ellipse", "triangle")

# Pixels are 8-bit levels snapped to a 2**-16 grid: exactly representable in
# float32 and closed under subtraction, which keeps the codec bit-exact.
_GRID = 2.0**16


def quantize_pixels(values: np.ndarray) -> np.ndarray:
    levels = np.round(np.clip(values, 0.0, 1.0) * 255.0)
    return np.round(levels / 255.0 * _GRID) / _GRID


def pixel_levels(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class ObjectSpec:
    """Explicit object placement; ``y``/``x`` is the top-left corner in pixels."""

    class_id: int
    height: int
    width: int
    y: float
    x: float
    vy: float
    vx: float


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    n_frames: int = 24
    n_objects: int = 2
    size_range: tuple[int, int] = (16, 28)
    speed_range: tuple[float, float] = (0.0, 2.0)
    texture_noise: float = 0.08
    objects: tuple[ObjectSpec, ...] | None = None


@dataclass(frozen=True)
class TruthBox:
    object_id: int
    class_id: int
    box: tuple[int, int, int, int]  # y1, x1, y2, x2; y2/x2 exclusive


@dataclass
class SyntheticSceneTruth:
    frames: list[list[TruthBox]]
    velocities: dict[int, tuple[float, float]] = field(default_factory=dict)

    def tracks(self) -> dict[int, list[tuple[int, tuple[int, int, int, int]]]]:
        out: dict[int, list] = {}
        for t, boxes in enumerate(self.frames):
            for tb in boxes:
                out.setdefault(tb.object_id, []).append((t, tb.box))
        return out


def shape_mask(class_id: int, height: int, width: int) -> np.ndarray:
    """Boolean mask whose tight bounding box is the full ``height x width`` box."""
    yy = np.arange(height)[:, None] + 0.5
    xx = np.arange(width)[None, :] + 0.5
    if class_id == 0:
        return np.ones((height, width), dtype=bool)
    if class_id == 1:
        ry, rx = height / 2.0, width / 2.0
        return ((yy - ry) / ry) ** 2 + ((xx - rx) / rx) ** 2 <= 1.0
    if class_id == 2:
        half = np.maximum((np.arange(height)[:, None] + 1) / height * width / 2.0, 0.5)
        return np.abs(xx - width / 2.0) <= half
    raise ConfigError(f"unknown class id {class_id}")


def _background(rng: np.random.Generator, h: int, w: int, noise: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    img = np.full((h, w, 3), 0.45) + rng.uniform(-0.1, 0.1, size=3)
    for _ in range(4):
        fy, fx = rng.uniform(0.02, 0.15, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.03, 0.08, size=3)
        img += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)[..., None]
    img += noise * rng.standard_normal((h, w, 3))
    return img


def _random_objects(cfg: SceneConfig, rng: np.random.Generator) -> list[ObjectSpec]:
    lo, hi = cfg.size_range
    if hi > min(cfg.height, cfg.width) or lo < 1:
        raise ConfigError(f"object size range {cfg.size_range} does not fit a {cfg.height}x{cfg.width} frame")
    specs = []
    for _ in range(cfg.n_objects):
        class_id = int(rng.integers(len(CLASS_NAMES)))
        oh, ow = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        y = float(rng.uniform(0, cfg.height - oh))
        x = float(rng.uniform(0, cfg.width - ow))
        speed = float(rng.uniform(*cfg.speed_range))
        angle = float(rng.uniform(0, 2 * np.pi))
        specs.append(ObjectSpec(class_id, oh, ow, y, x, speed * np.sin(angle), speed * np.cos(angle)))
    return specs


def _bounce(pos: float, vel: float, limit: float) -> tuple[float, float]:
    pos += vel
    while pos < 0 or pos > limit:
        if pos < 0:
            pos, vel = -pos, -vel
        else:
            pos, vel = 2 * limit - pos, -vel
        if limit == 0:
            return 0.0, vel
    return pos, vel


def generate_synthetic_video(cfg: SceneConfig, seed: int) -> tuple[list[np.ndarray], SyntheticSceneTruth]:
    """Render ``cfg.n_frames`` frames of constant-velocity objects bouncing at the borders."""
    rng = np.random.default_rng(seed)
    specs = list(cfg.objects) if cfg.objects is not None else _random_objects(cfg, rng)
    for k, s in enumerate(specs):
        if s.height > cfg.height or s.width > cfg.width:
            raise ConfigError(f"object {k} ({s.height}x{s.width}) larger than frame {cfg.height}x{cfg.width}")
        if not (0 <= s.y <= cfg.height - s.height and 0 <= s.x <= cfg.width - s.width):
            raise ConfigError(f"object {k} starts outside the frame at ({s.y}, {s.x})")
    background = _background(rng, cfg.height, cfg.width, cfg.texture_noise)

    sprites = []
    for s in specs:
        color = rng.uniform(0.1, 0.95, size=3)
        color[rng.integers(3)] = rng.choice([0.05, 0.95])
        stripes = 0.08 * np.sign(np.sin(np.arange(s.width) * rng.uniform(0.5, 1.5)))[None, :, None]
        texture = color + stripes + cfg.texture_noise * rng.standard_normal((s.height, s.width, 3))
        sprites.append((shape_mask(s.class_id, s.height, s.width), texture))

    state = [[s.y, s.x, s.vy, s.vx] for s in specs]
    frames, truth_frames = [], []
    for _ in range(cfg.n_frames):
        img = background.copy()
        boxes = []
        for k, (s, (mask, texture)) in enumerate(zip(specs, sprites)):
            y1, x1 = int(np.round(state[k][0])), int(np.round(state[k][1]))
            region = img[y1 : y1 + s.height, x1 : x1 + s.width]
            region[mask] = texture[mask]
            boxes.append(TruthBox(k, s.class_id, (y1, x1, y1 + s.height, x1 + s.width)))
        frames.append(quantize_pixels(img))
        truth_frames.append(boxes)
        for k, s in enumerate(specs):
            state[k][0], state[k][2] = _bounce(state[k][0], state[k][2], cfg.height - s.height)
            state[k][1], state[k][3] = _bounce(state[k][1], state[k][3], cfg.width - s.width)

    velocities = {k: (s.vy, s.vx) for k, s in enumerate(specs)}
    return frames, SyntheticSceneTruth(truth_frames, velocities)


# ---------------------------------------------------------------- truth files


def format_truth(truth: SyntheticSceneTruth) -> str:
    """One line per box: ``frame_idx class y1 x1 y2 x2 object_id``."""
    lines = ["# frame_idx class y1 x1 y2 x2 object_id"]
    for t, boxes in enumerate(truth.frames):
        for tb in boxes:
            y1, x1, y2, x2 = tb.box
            lines.append(f"{t} {tb.class_id} {y1} {x1} {y2} {x2} {tb.object_id}")
    return "\n".join(lines) + "\n"


def parse_truth(text: str, n_frames: int | None = None, path: str | None = None) -> SyntheticSceneTruth:
    rows = []
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            parts = stripped.split()
            if len(parts) not in (6, 7):
                raise ParseError(f"expected 6 or 7 fields, got {len(parts)}", offset=offset, path=path)
            try:
                vals = [int(float(p)) for p in parts]
            except ValueError:
                raise ParseError(f"non-numeric field in {stripped!r}", offset=offset, path=path) from None
            # without identities every box is its own one-frame track
            obj = vals[6] if len(vals) == 7 else -(len(rows) + 1)
            rows.append((vals[0], TruthBox(obj, vals[1], tuple(vals[2:6]))))
        offset += len(line.encode())
    count = max([r[0] for r in rows], default=-1) + 1
    if n_frames is not None:
        count = max(count, n_frames)
    frames: list[list[TruthBox]] = [[] for _ in range(count)]
    for t, tb in rows:
        frames[t].append(tb)
    return SyntheticSceneTruth(frames)
