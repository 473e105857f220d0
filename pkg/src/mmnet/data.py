"""Clips (frames + truth + encoded GOPs) and the on-disk dataset manifest."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from mmnet.codec import Gop, block_match_encode, decode_reconstruct, export_sidecar, import_sidecar
from mmnet.detector import ExtractorConfig, FrameSample, GopSample, MMNetModel, ModelConfig, init_model
from mmnet.errors import ConfigError, ParseError, UsageError
from mmnet.tensor import load_checkpoint, save_checkpoint
from mmnet.synth import SceneConfig, SyntheticSceneTruth, format_truth, generate_synthetic_video, parse_truth


@dataclass
class Clip:
    name: str
    frames: list[np.ndarray]
    truth: SyntheticSceneTruth
    gops: list[Gop]

    @property
    def gop_starts(self) -> list[int]:
        starts, t = [], 0
        for g in self.gops:
            starts.append(t)
            t += len(g)
        return starts

    def gop_samples(self) -> list[GopSample]:
        return [
            GopSample(g, [self.truth.frames[t] for t in range(s, s + len(g))])
            for g, s in zip(self.gops, self.gop_starts)
        ]

    def frame_samples(self) -> list[FrameSample]:
        return [FrameSample(f, b) for f, b in zip(self.frames, self.truth.frames)]


def make_clips(scene: SceneConfig, n_clips: int, seed: int, gop_len: int = 12, search_range: int = 8,
               prefix: str = "clip") -> list[Clip]:
    """Seeded synthetic clips; clip ``k`` uses seed ``seed * 1000 + k``."""
    clips = []
    for k in range(n_clips):
        frames, truth = generate_synthetic_video(scene, seed * 1000 + k)
        gops = block_match_encode(frames, gop_len, search_range)
        clips.append(Clip(f"{prefix}_{k:03d}", frames, truth, gops))
    return clips


def frame_dataset(clips: Sequence[Clip]) -> list[FrameSample]:
    return [s for c in clips for s in c.frame_samples()]


def gop_dataset(clips: Sequence[Clip]) -> list[GopSample]:
    return [s for c in clips for s in c.gop_samples()]


def save_clip(clip: Clip, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{clip.name}.mmgp").write_bytes(export_sidecar(clip.gops))
    (directory / f"{clip.name}.txt").write_text(format_truth(clip.truth))


def load_clip(mmgp_path: str | Path) -> Clip:
    mmgp_path = Path(mmgp_path)
    try:
        gops = import_sidecar(mmgp_path.read_bytes())
    except ParseError as exc:
        raise ParseError(exc.message, offset=exc.offset, path=str(mmgp_path)) from None
    frames = [f for g in gops for f in decode_reconstruct(g)]
    truth_path = mmgp_path.with_suffix(".txt")
    if truth_path.exists():
        truth = parse_truth(truth_path.read_text(), n_frames=len(frames), path=str(truth_path))
    else:
        truth = SyntheticSceneTruth([[] for _ in frames])
    return Clip(mmgp_path.stem, frames, truth, gops)


def load_dataset(directory: str | Path) -> list[Clip]:
    """Every ``*.mmgp`` file in ``directory`` with its ``.txt`` truth sibling, sorted by name."""
    paths = sorted(Path(directory).glob("*.mmgp"))
    if not paths:
        raise UsageError(f"no .mmgp files in {directory}")
    return [load_clip(p) for p in paths]


def save_model(path: str | Path, model: MMNetModel) -> None:
    """Checkpoint with the architecture stored alongside the weights."""
    cfg = model.config
    ext = cfg.extractor
    meta = {
        "meta.extractor": np.array([ext.convs_per_stage, ext.stem_width or 0, *ext.stage_widths], dtype=np.float64),
        "meta.model": np.array(
            [cfg.n_classes, cfg.default_size, cfg.residual_channels, cfg.attention_hidden, cfg.objectness_prior,
             ext.input_offset]
        ),
    }
    save_checkpoint(path, {**meta, **model.state_dict()})


def load_model(path: str | Path) -> MMNetModel:
    state = load_checkpoint(path)
    try:
        ext, mod = state.pop("meta.extractor"), state.pop("meta.model")
    except KeyError:
        raise ConfigError(f"{path}: checkpoint has no architecture metadata") from None
    if mod.shape != (6,) or ext.size < 4:
        raise ConfigError(f"{path}: malformed architecture metadata")
    extractor = ExtractorConfig(tuple(int(w) for w in ext[2:]), int(ext[0]), int(ext[1]) or None, float(mod[5]))
    cfg = ModelConfig(extractor, int(mod[0]), float(mod[1]), int(mod[2]), int(mod[3]), float(mod[4]))
    model = init_model(cfg, 0)
    model.load_state_dict(state)
    return model
