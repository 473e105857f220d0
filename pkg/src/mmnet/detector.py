"""Toy end-to-end detector: pyramidal extractor on I-frames, attention fusion,
memory propagation over P-frames and an anchor-free per-cell head."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from mmnet.attention import AttentionParams, init_attention, pyramid_attention
from mmnet.codec import Gop
from mmnet.errors import ConfigError, NumericError, UsageError
from mmnet.lstm import CellParams, init_cell, init_state, step
from mmnet.synth import TruthBox
from mmnet.tensor import (
    ConvParams,
    GradientTape,
    Tensor,
    add,
    bce_with_logits,
    channels,
    conv2d,
    init_conv,
    l1_loss,
    relu,
    softmax_cross_entropy,
    sigmoid_values,
)
from mmnet.warp import mv_to_feature_grid, residual_to_feature_grid

HEAD_OBJ = 0
HEAD_CLS = slice(1, 4)


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExtractorConfig:
    stage_widths: tuple[int, ...] = (16, 32, 64)
    convs_per_stage: int = 4
    stem_width: int | None = None
    # subtracted from pixels before the stem; centres [0, 1] frames
    input_offset: float = 0.5

    def __post_init__(self):
        if len(self.stage_widths) < 2:
            raise ConfigError("extractor needs at least 2 stages")
        if self.convs_per_stage < 1:
            raise ConfigError("convs_per_stage must be >= 1")

    @property
    def n_stages(self) -> int:
        return len(self.stage_widths)

    @property
    def stage_strides(self) -> tuple[int, ...]:
        return tuple(2 ** (k + 2) for k in range(self.n_stages))

    @property
    def total_stride(self) -> int:
        return self.stage_strides[-1]


@dataclass(frozen=True)
class ModelConfig:
    extractor: ExtractorConfig = ExtractorConfig()
    n_classes: int = 3
    default_size: float = 24.0
    residual_channels: int = 8
    attention_hidden: int = 16
    # initial objectness logit, about 1% foreground
    objectness_prior: float = -4.6

    @property
    def feature_channels(self) -> int:
        return self.extractor.stage_widths[-1]

    @property
    def head_channels(self) -> int:
        return 1 + self.n_classes + 4


@dataclass(frozen=True)
class AblationConfig:
    use_mv: bool = True
    use_residual: bool = True
    use_lstm: bool = True
    use_pyramid_attention: bool = True
    name: str = "custom"

    def __post_init__(self):
        if not (self.use_mv or self.use_lstm):
            raise ConfigError(f"config {self.name!r}: need motion warping or the LSTM to propagate features")


# Table-1 style grid: (a) LSTM only ... (f) full model with pyramid attention.
ABLATIONS = {
    "a": AblationConfig(False, False, True, False, "a"),
    "b": AblationConfig(False, True, True, False, "b"),
    "c": AblationConfig(True, True, False, False, "c"),
    "d": AblationConfig(True, False, True, False, "d"),
    "e": AblationConfig(True, True, True, False, "e"),
    "f": AblationConfig(True, True, True, True, "f"),
}
FULL = ABLATIONS["f"]


@dataclass(frozen=True)
class DetectionBox:
    class_id: int
    score: float
    box: tuple[float, float, float, float]  # y1, x1, y2, x2


GopDetections = list  # list[list[DetectionBox]], one entry per frame of the GOP


# ---------------------------------------------------------------- parameters


@dataclass
class Extractor:
    stem: ConvParams
    stages: list[list[ConvParams]]


@dataclass
class MMNetModel:
    config: ModelConfig
    extractor: Extractor
    attention: AttentionParams
    cell: CellParams
    head: ConvParams

    def extractor_tensors(self) -> dict[str, Tensor]:
        out = {"extractor.stem.kernel": self.extractor.stem.kernel, "extractor.stem.bias": self.extractor.stem.bias}
        for s, stage in enumerate(self.extractor.stages):
            for k, p in enumerate(stage):
                out[f"extractor.s{s}.c{k}.kernel"] = p.kernel
                out[f"extractor.s{s}.c{k}.bias"] = p.bias
        return out

    def head_tensors(self) -> dict[str, Tensor]:
        return {"head.kernel": self.head.kernel, "head.bias": self.head.bias}

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            **self.extractor_tensors(),
            **self.attention.named_tensors(),
            **self.cell.named_tensors(),
            **self.head_tensors(),
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        tensors = self.named_tensors()
        missing = sorted(set(tensors) - set(state))
        if missing:
            raise ConfigError(f"checkpoint lacks tensors: {', '.join(missing[:5])}")
        for name, t in tensors.items():
            if state[name].shape != t.shape:
                raise ConfigError(f"checkpoint tensor {name} has shape {state[name].shape}, expected {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)

    def copy(self) -> MMNetModel:
        return copy.deepcopy(self)


def init_extractor(rng: np.random.Generator, cfg: ExtractorConfig, image_channels: int = 3) -> Extractor:
    stem_width = cfg.stem_width or cfg.stage_widths[0]
    stem = init_conv(rng, image_channels, stem_width, 3, stride=2, scheme="relu")
    stages, cin = [], stem_width
    for width in cfg.stage_widths:
        convs = [init_conv(rng, cin, width, 3, stride=2, scheme="relu")]
        for _ in range(cfg.convs_per_stage - 1):
            convs.append(init_conv(rng, width, width, 3, scheme="relu"))
        # residual branches start small so the identity path dominates
        for p in convs[1:]:
            p.kernel.data *= 0.5
        stages.append(convs)
        cin = width
    return Extractor(stem, stages)


def init_model(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> MMNetModel:
    rng = np.random.default_rng(seed)
    extractor = init_extractor(rng, cfg.extractor)
    attention = init_attention(rng, cfg.extractor.stage_widths, cfg.attention_hidden)
    cell = init_cell(rng, cfg.feature_channels, cfg.residual_channels)
    head = init_conv(rng, cfg.feature_channels, cfg.head_channels, 1)
    head.bias.data[HEAD_OBJ] = cfg.objectness_prior
    return MMNetModel(cfg, extractor, attention, cell, head)


# ---------------------------------------------------------------- forward passes


def extract_pyramid(frames, model: MMNetModel) -> list[Tensor]:
    """One feature map per stage (strides 4, 8, 16 for three stages)."""
    x = np.asarray(frames.data if isinstance(frames, Tensor) else frames, dtype=np.float64)
    h, w = x.shape[-3], x.shape[-2]
    stride = model.config.extractor.total_stride
    if h % stride or w % stride:
        raise ConfigError(f"frame dims ({h}, {w}) not divisible by total stride {stride}")
    out = relu(conv2d(x - model.config.extractor.input_offset, model.extractor.stem))
    levels = []
    for stage in model.extractor.stages:
        out = relu(conv2d(out, stage[0]))
        for p in stage[1:]:
            out = relu(add(out, conv2d(out, p)))
        levels.append(out)
    return levels


def iframe_features(levels: Sequence, model: MMNetModel, use_attention: bool) -> Tensor:
    if use_attention:
        fused, _ = pyramid_attention(levels, model.attention)
        return fused
    top = levels[-1]
    return top if isinstance(top, Tensor) else Tensor(top)


def head_forward(features, model: MMNetModel) -> Tensor:
    return conv2d(features, model.head)


def cell_centers(grid_hw: tuple[int, int], stride: int) -> tuple[np.ndarray, np.ndarray]:
    gh, gw = grid_hw
    cy = (np.arange(gh) + 0.5) * stride
    cx = (np.arange(gw) + 0.5) * stride
    return np.meshgrid(cy, cx, indexing="ij")


def encode_box(box, center: tuple[float, float], stride: float, default_size: float) -> np.ndarray:
    """Head regression targets ``(dy, dx, log h, log w)`` of ``box`` for one cell."""
    y1, x1, y2, x2 = box
    return np.array([
        ((y1 + y2) / 2 - center[0]) / stride,
        ((x1 + x2) / 2 - center[1]) / stride,
        np.log((y2 - y1) / default_size),
        np.log((x2 - x1) / default_size),
    ])


def decode_boxes(offsets: np.ndarray, stride: float, default_size: float) -> np.ndarray:
    """Inverse of :func:`encode_box` for every cell of ``offsets (..., h, w, 4)``."""
    gh, gw = offsets.shape[-3], offsets.shape[-2]
    cy, cx = cell_centers((gh, gw), stride)
    by = cy + offsets[..., 0] * stride
    bx = cx + offsets[..., 1] * stride
    bh = default_size * np.exp(np.clip(offsets[..., 2], -10, 10))
    bw = default_size * np.exp(np.clip(offsets[..., 3], -10, 10))
    return np.stack([by - bh / 2, bx - bw / 2, by + bh / 2, bx + bw / 2], axis=-1)


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iy = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ix = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iy * ix
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> list[int]:
    """Greedy suppression by descending score; ties keep the lower index first."""
    order = np.argsort(-scores, kind="stable")
    keep: list[int] = []
    for idx in order:
        if keep and box_iou_matrix(boxes[idx], boxes[keep]).max() > iou_threshold:
            continue
        keep.append(int(idx))
    return keep


def detect(features, model: MMNetModel, score_threshold: float = 0.5, nms_iou: float = 0.5) -> list[DetectionBox]:
    """Decode the head on one ``(h, w, C)`` feature map into scored, suppressed boxes."""
    raw = features if isinstance(features, np.ndarray) else features.data
    out = head_forward(raw, model).data
    return detections_from_head(out, model, score_threshold, nms_iou)


def detections_from_head(out: np.ndarray, model: MMNetModel, score_threshold: float, nms_iou: float) -> list[DetectionBox]:
    cfg = model.config
    stride = cfg.extractor.total_stride
    scores = sigmoid_values(out[..., HEAD_OBJ]).ravel()
    classes = np.argmax(out[..., HEAD_CLS], axis=-1).ravel()
    boxes = decode_boxes(out[..., 4:8], stride, cfg.default_size).reshape(-1, 4)
    cand = np.flatnonzero(scores >= score_threshold)
    if cand.size == 0:
        return []
    keep = nms(boxes[cand], scores[cand], nms_iou)
    return [
        DetectionBox(int(classes[cand[k]]), float(scores[cand[k]]), tuple(float(v) for v in boxes[cand[k]]))
        for k in keep
    ]


def pframe_inputs(gop: Gop, feature_hw: tuple[int, int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Motion fields and residual grids at feature resolution for every P-frame."""
    frame_hw = gop.shape
    return [
        (
            mv_to_feature_grid(p.mvs, frame_hw, feature_hw, block_size=p.block_size),
            residual_to_feature_grid(p.residual, feature_hw),
        )
        for p in gop.pframes
    ]


def gop_features(gop: Gop, model: MMNetModel, flags: AblationConfig = FULL) -> list[np.ndarray]:
    """Feature maps ``[c_t, c_t+1, ..., c_t+n]`` for one GOP."""
    levels = extract_pyramid(gop.iframe, model)
    feat = iframe_features(levels, model, flags.use_pyramid_attention)
    feats = [feat.data]
    state = init_state(feat)
    for motion, residual in pframe_inputs(gop, feat.shape[-3:-1]):
        state, out = step(state, motion, residual, model.cell, flags.use_mv, flags.use_residual, flags.use_lstm)
        feats.append(out.data)
    return feats


def infer_gop(gop: Gop, model: MMNetModel, flags: AblationConfig = FULL,
              score_threshold: float = 0.5, nms_iou: float = 0.5) -> GopDetections:
    """Full extraction on the I-frame, memory propagation on P-frames, per-frame detection."""
    feats = gop_features(gop, model, flags)
    dets = [detect(f, model, score_threshold, nms_iou) for f in feats]
    for f in feats:
        if not np.all(np.isfinite(f)):
            raise NumericError("non-finite features during inference")
    return dets


def detect_frame(frame: np.ndarray, model: MMNetModel, flags: AblationConfig = FULL,
                 score_threshold: float = 0.5, nms_iou: float = 0.5) -> list[DetectionBox]:
    """Single-frame detector: the I-frame path applied to any decoded frame."""
    levels = extract_pyramid(frame, model)
    return detect(iframe_features(levels, model, flags.use_pyramid_attention), model, score_threshold, nms_iou)


# ---------------------------------------------------------------- training targets / loss


@dataclass
class Targets:
    objectness: np.ndarray  # (..., h, w)
    classes: np.ndarray  # (..., h, w) int
    offsets: np.ndarray  # (..., h, w, 4)
    positive: np.ndarray  # (..., h, w) bool


def encode_targets(boxes: Iterable[TruthBox], grid_hw: tuple[int, int], stride: int, default_size: float) -> Targets:
    """Positive cells are those whose centre lies inside a truth box (nearest box centre wins)."""
    gh, gw = grid_hw
    cy, cx = cell_centers(grid_hw, stride)
    obj = np.zeros((gh, gw))
    cls = np.zeros((gh, gw), dtype=np.int64)
    off = np.zeros((gh, gw, 4))
    best = np.full((gh, gw), np.inf)
    for tb in boxes:
        y1, x1, y2, x2 = tb.box
        inside = (cy >= y1) & (cy <= y2) & (cx >= x1) & (cx <= x2)
        dist = ((y1 + y2) / 2 - cy) ** 2 + ((x1 + x2) / 2 - cx) ** 2
        take = inside & (dist < best)
        for r, c in zip(*np.nonzero(take)):
            best[r, c] = dist[r, c]
            obj[r, c] = 1.0
            cls[r, c] = tb.class_id
            off[r, c] = encode_box(tb.box, (cy[r, c], cx[r, c]), stride, default_size)
    return Targets(obj, cls, off, obj > 0)


def stack_targets(targets: Sequence[Targets]) -> Targets:
    return Targets(
        np.stack([t.objectness for t in targets]),
        np.stack([t.classes for t in targets]),
        np.stack([t.offsets for t in targets]),
        np.stack([t.positive for t in targets]),
    )


def detection_loss(head_out: Tensor, targets: Targets) -> Tensor:
    """Objectness BCE over all cells + class CE and L1 box offsets on positives, per positive."""
    n_pos = max(1.0, float(targets.positive.sum()))
    obj = bce_with_logits(channels(head_out, 0, 1), targets.objectness[..., None], n_pos)
    cls = softmax_cross_entropy(channels(head_out, 1, 4), targets.classes, targets.positive, n_pos)
    box = l1_loss(channels(head_out, 4, 8), targets.offsets, targets.positive, n_pos)
    return add(add(obj, cls), box)


# ---------------------------------------------------------------- optimisation


class SGD:
    """Plain SGD with momentum and optional global-norm gradient clipping."""

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9, clip_norm: float | None = 10.0):
        self.params = params
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, lr: float) -> None:
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.params.items()}
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if not np.isfinite(norm):
            raise NumericError("non-finite gradient norm")
        factor = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / norm
        for k, t in self.params.items():
            v = self.velocity[k]
            v *= self.momentum
            v += factor * grads[k]
            t.data = t.data - lr * v


@dataclass(frozen=True)
class TrainConfig:
    phase1_epochs: int = 30
    # (first epoch, lr) pairs, applied from that epoch on
    phase1_lr: tuple[tuple[int, float], ...] = ((0, 0.01), (20, 0.001))
    phase1_batch: int = 16
    # attention is fitted with the extractor so the head sees fused features from the start
    phase1_attention: bool = True
    phase1_hflip: bool = True
    # one short epoch: larger steps move the attention MLP far from the frozen head's inputs
    phase2_epochs: int = 1
    phase2_lr: float = 0.0005
    phase2_batch: int = 4
    momentum: float = 0.9
    clip_norm: float = 10.0


def lr_at(schedule: Sequence[tuple[int, float]], epoch: int) -> float:
    lr = schedule[0][1]
    for start, value in schedule:
        if epoch >= start:
            lr = value
    return lr


@dataclass
class FrameSample:
    frame: np.ndarray
    boxes: list[TruthBox]


@dataclass
class GopSample:
    gop: Gop
    boxes: list[list[TruthBox]]  # one list per frame of the GOP
    _inputs: dict = field(default_factory=dict, repr=False)

    def inputs(self, feature_hw: tuple[int, int]):
        key = tuple(feature_hw)
        if key not in self._inputs:
            self._inputs[key] = pframe_inputs(self.gop, key)
        return self._inputs[key]


def _check_finite(params: dict[str, Tensor]) -> None:
    for name, t in params.items():
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"parameter {name} became non-finite")


def mirror_boxes(boxes: Sequence[TruthBox], width: int) -> list[TruthBox]:
    return [TruthBox(b.object_id, b.class_id, (b.box[0], width - b.box[3], b.box[2], width - b.box[1])) for b in boxes]


def frame_step_loss(model: MMNetModel, frames: np.ndarray, boxes: Sequence[Sequence[TruthBox]],
                    use_attention: bool) -> Tensor:
    cfg = model.config
    feat = iframe_features(extract_pyramid(frames, model), model, use_attention)
    targets = stack_targets([
        encode_targets(b, feat.shape[-3:-1], cfg.extractor.total_stride, cfg.default_size) for b in boxes
    ])
    return detection_loss(head_forward(feat, model), targets)


def train_phase1(samples: Sequence[FrameSample], model: MMNetModel, epochs: int,
                 lr_schedule: Sequence[tuple[int, float]], seed: int, batch_size: int = 16,
                 momentum: float = 0.9, clip_norm: float | None = 10.0, use_attention: bool = False,
                 log=None, hflip: bool = True) -> MMNetModel:
    """Single-frame training of extractor + head; returns a trained copy of ``model``.

    With ``hflip`` every sample is mirrored left-right with probability 1/2
    (seeded); all three shape classes are mirror-symmetric.
    """
    if not samples:
        raise UsageError("phase-1 training needs at least one sample")
    model = model.copy()
    params = {**model.extractor_tensors(), **model.head_tensors()}
    if use_attention:
        params.update(model.attention.named_tensors())
    for t in model.named_tensors().values():
        t.requires_grad = False
    for t in params.values():
        t.requires_grad = True
    opt = SGD(params, momentum, clip_norm)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        lr = lr_at(lr_schedule, epoch)
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = [samples[i] for i in order[start : start + batch_size]]
            flips = rng.random(len(batch)) < 0.5 if hflip else np.zeros(len(batch), dtype=bool)
            frames = np.stack([s.frame[:, ::-1] if f else s.frame for s, f in zip(batch, flips)])
            boxes = [mirror_boxes(s.boxes, s.frame.shape[1]) if f else s.boxes for s, f in zip(batch, flips)]
            opt.zero_grad()
            with GradientTape() as tape:
                loss = frame_step_loss(model, frames, boxes, use_attention)
            if not np.isfinite(loss.data):
                raise NumericError(f"phase-1 loss became {float(loss.data)} at epoch {epoch}")
            tape.backward(loss)
            opt.step(lr)
            total += float(loss.data) * len(batch)
        _check_finite(params)
        if log is not None:
            log(f"phase1 epoch {epoch + 1}/{epochs} lr {lr:g} loss {total / len(samples):.4f}")
    for t in model.named_tensors().values():
        t.requires_grad = True
    return model


def gop_loss(model: MMNetModel, batch: Sequence[GopSample], flags: AblationConfig, levels=None) -> Tensor:
    """Detection loss summed over every frame of a batch of equal-length GOPs."""
    cfg = model.config
    stride = cfg.extractor.total_stride
    if levels is None:
        levels = extract_pyramid(np.stack([s.gop.iframe for s in batch]), model)
    feat = iframe_features(levels, model, flags.use_pyramid_attention)
    grid = feat.shape[-3:-1]

    def frame_loss(features: Tensor, k: int) -> Tensor:
        targets = stack_targets([encode_targets(s.boxes[k], grid, stride, cfg.default_size) for s in batch])
        return detection_loss(head_forward(features, model), targets)

    total = frame_loss(feat, 0)
    state = init_state(feat)
    per_gop = [s.inputs(grid) for s in batch]
    for k in range(batch[0].gop.n):
        motion = np.stack([inp[k][0] for inp in per_gop])
        residual = np.stack([inp[k][1] for inp in per_gop])
        state, out = step(state, motion, residual, model.cell, flags.use_mv, flags.use_residual, flags.use_lstm)
        total = add(total, frame_loss(out, k + 1))
    return total


def phase2_params(model: MMNetModel, flags: AblationConfig) -> dict[str, Tensor]:
    """Memory parameters, plus attention when enabled; extractor and head stay frozen."""
    params = model.cell.named_tensors()
    if flags.use_pyramid_attention:
        params.update(model.attention.named_tensors())
    return params


def train_phase2(samples: Sequence[GopSample], model: MMNetModel, epochs: int, lr: float, seed: int,
                 flags: AblationConfig = FULL, batch_size: int = 4, momentum: float = 0.9,
                 clip_norm: float | None = 10.0, log=None) -> MMNetModel:
    """GOP training of attention + memory with the extractor and head frozen."""
    if not samples:
        raise UsageError("phase-2 training needs at least one GOP sample")
    model = model.copy()
    params = phase2_params(model, flags)
    for t in model.named_tensors().values():
        t.requires_grad = False
    for t in params.values():
        t.requires_grad = True
    opt = SGD(params, momentum, clip_norm)
    rng = np.random.default_rng(seed)
    groups: dict[tuple, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault((s.gop.n, s.gop.shape), []).append(i)
    # frozen extractor: pyramid levels can be computed once
    cache: dict[int, list[np.ndarray]] = {}
    for i, s in enumerate(samples):
        cache[i] = [lv.data for lv in extract_pyramid(s.gop.iframe, model)]
    for epoch in range(epochs):
        batches = []
        for key in sorted(groups):
            idx = rng.permutation(groups[key])
            batches.extend(idx[k : k + batch_size] for k in range(0, len(idx), batch_size))
        total = 0.0
        for b in (batches[i] for i in rng.permutation(len(batches))):
            batch = [samples[i] for i in b]
            levels = [Tensor(np.stack([cache[i][lv] for i in b])) for lv in range(len(cache[b[0]]))]
            opt.zero_grad()
            with GradientTape() as tape:
                loss = gop_loss(model, batch, flags, levels)
            if not np.isfinite(loss.data):
                raise NumericError(f"phase-2 loss became {float(loss.data)} at epoch {epoch}")
            tape.backward(loss)
            opt.step(lr)
            total += float(loss.data)
        _check_finite(params)
        if log is not None:
            log(f"phase2[{flags.name}] epoch {epoch + 1}/{epochs} loss {total / max(1, len(batches)):.4f}")
    for t in model.named_tensors().values():
        t.requires_grad = True
    return model


def run_phase1(samples: Sequence[FrameSample], model: MMNetModel, train: TrainConfig, seed: int,
               epochs: int | None = None, log=None) -> MMNetModel:
    """:func:`train_phase1` with the settings of ``train``."""
    return train_phase1(samples, model, train.phase1_epochs if epochs is None else epochs, train.phase1_lr, seed,
                        train.phase1_batch, train.momentum, train.clip_norm, train.phase1_attention, log,
                        train.phase1_hflip)


def run_phase2(samples: Sequence[GopSample], model: MMNetModel, train: TrainConfig, seed: int,
               flags: AblationConfig = FULL, epochs: int | None = None, log=None) -> MMNetModel:
    """:func:`train_phase2` with the settings of ``train``."""
    return train_phase2(samples, model, train.phase2_epochs if epochs is None else epochs, train.phase2_lr, seed,
                        flags, train.phase2_batch, train.momentum, train.clip_norm, log)
