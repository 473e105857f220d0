"""Pinned experiment configurations: the reference run and the fast-motion benchmark."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from mmnet.detector import ExtractorConfig, ModelConfig, TrainConfig
from mmnet.synth import SceneConfig

# Wider early stages and 8 convs per stage: enough I-path compute that the
# propagation path's speedup is measurable with numpy overheads.
REFERENCE_EXTRACTOR = ExtractorConfig(stage_widths=(32, 64, 64), convs_per_stage=8)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scene: SceneConfig
    model: ModelConfig = ModelConfig(extractor=REFERENCE_EXTRACTOR)
    train: TrainConfig = TrainConfig()
    seed: int = 7
    train_clips: int = 40
    test_clips: int = 10
    test_seed: int = 107
    gop_len: int = 12
    search_range: int = 8
    score_threshold: float = 0.5
    nms_iou: float = 0.5
    bench_repetitions: int = 5
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


REFERENCE = ExperimentConfig(
    name="reference",
    scene=SceneConfig(height=64, width=64, n_frames=24, n_objects=2, size_range=(16, 28), speed_range=(0.0, 1.5)),
)

FAST_MOTION = ExperimentConfig(
    name="fast_motion",
    scene=SceneConfig(height=64, width=64, n_frames=24, n_objects=2, size_range=(16, 28), speed_range=(8.0, 10.0)),
    search_range=12,
)

EXPERIMENTS = {c.name: c for c in (REFERENCE, FAST_MOTION)}
