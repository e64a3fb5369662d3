"""Synthetic paired audio/visual feature sequences with known events.

Each video is T one-second segments.  Event segments of category k are two
noisy views of the same latent concept vector pushed through fixed random
linear maps (one per modality), so the modalities are genuinely correlated
only where an event happens; background segments are independent draws per
modality and carry no cross-modal signal.  The deliberately asymmetric
feature dims (visual much wider than audio) make the alignment problem
non-trivial.

On-disk layout of a dataset directory:

    manifest.json   num_videos, T, K, d_a, d_v, seed, split assignments
    audio.f32       little-endian float32, video-major then segment-major
    visual.f32      same ordering
    labels.json     per-video category, event_start, event_end
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ContractError, DataFormatError

DEFAULT_T = 10
MIN_EVENT_LEN = 2


@dataclass
class SegmentPair:
    audio: np.ndarray
    visual: np.ndarray
    is_event: bool


@dataclass
class VideoSequence:
    segments: List[SegmentPair]
    category: int
    event_start: int
    event_end: int  # exclusive

    @property
    def event_length(self) -> int:
        return self.event_end - self.event_start


@dataclass(frozen=True)
class SynthConfig:
    num_videos: int = 200
    categories: int = 8
    audio_dim: int = 16
    visual_dim: int = 64
    concept_dim: int = 6
    noise_std: float = 0.3
    background_scale: float = 1.0
    segments_per_video: int = DEFAULT_T
    train_fraction: float = 0.8
    seed: int = 7

    def __post_init__(self):
        if self.categories < 2:
            raise ContractError("need at least 2 categories")
        for name in ("num_videos", "audio_dim", "visual_dim", "concept_dim", "segments_per_video"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.segments_per_video < MIN_EVENT_LEN:
            raise ContractError("segments_per_video must allow an event of length >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise ContractError("train_fraction must be in (0, 1)")


@dataclass
class GroundTruth:
    """Generator internals kept for oracle checks; never serialized."""

    concepts: np.ndarray  # (K, concept_dim)
    map_audio: np.ndarray  # (concept_dim, d_a)
    map_visual: np.ndarray  # (concept_dim, d_v)


@dataclass
class Dataset:
    videos: List[VideoSequence]
    config: SynthConfig
    train_ids: List[int]
    test_ids: List[int]
    truth: Optional[GroundTruth] = field(default=None, repr=False)

    def split_ids(self, split: str) -> List[int]:
        if split == "train":
            return self.train_ids
        if split == "test":
            return self.test_ids
        raise ContractError(f"split must be 'train' or 'test', got {split!r}")


def _draw_event_span(rng: np.random.Generator, t_total: int) -> tuple:
    """Uniform over all (start, length) with length >= 2 fitting in the video."""
    spans = [
        (start, start + length)
        for length in range(MIN_EVENT_LEN, t_total + 1)
        for start in range(0, t_total - length + 1)
    ]
    return spans[rng.integers(len(spans))]


def generate_dataset(config: SynthConfig) -> Dataset:
    """Deterministic per seed; categories are assigned round-robin so every
    one is equally represented."""
    rng = np.random.default_rng(config.seed)
    k, d_a, d_v, cdim = config.categories, config.audio_dim, config.visual_dim, config.concept_dim
    scale = 1.0 / np.sqrt(cdim)

    concepts = rng.standard_normal((k, cdim))
    map_audio = rng.standard_normal((cdim, d_a)) * scale
    map_visual = rng.standard_normal((cdim, d_v)) * scale

    videos: List[VideoSequence] = []
    t_total = config.segments_per_video
    for vid in range(config.num_videos):
        category = vid % k
        start, end = _draw_event_span(rng, t_total)
        segments = []
        for t in range(t_total):
            if start <= t < end:
                latent_a = concepts[category] + config.noise_std * rng.standard_normal(cdim)
                latent_v = concepts[category] + config.noise_std * rng.standard_normal(cdim)
                is_event = True
            else:
                latent_a = config.background_scale * rng.standard_normal(cdim)
                latent_v = config.background_scale * rng.standard_normal(cdim)
                is_event = False
            segments.append(
                SegmentPair(audio=latent_a @ map_audio, visual=latent_v @ map_visual, is_event=is_event)
            )
        videos.append(VideoSequence(segments=segments, category=category, event_start=start, event_end=end))

    order = rng.permutation(config.num_videos)
    n_train = int(round(config.train_fraction * config.num_videos))
    train_ids = sorted(int(i) for i in order[:n_train])
    test_ids = sorted(int(i) for i in order[n_train:])
    truth = GroundTruth(concepts=concepts, map_audio=map_audio, map_visual=map_visual)
    return Dataset(videos=videos, config=config, train_ids=train_ids, test_ids=test_ids, truth=truth)


def event_pairs(dataset: Dataset, split: str = "train", include_background: bool = False):
    """Flat list of SegmentPairs from a split, event-relevant ones by default."""
    pairs = []
    for vid in dataset.split_ids(split):
        for seg in dataset.videos[vid].segments:
            if include_background or seg.is_event:
                pairs.append(seg)
    return pairs


# ---- serialization --------------------------------------------------------------


def save_dataset(dataset: Dataset, directory, extra_manifest: Optional[dict] = None) -> dict:
    """Write the directory format; returns the manifest that was saved.

    ``extra_manifest`` entries are merged in (loaders ignore unknown keys).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = dataset.config
    t_total = cfg.segments_per_video

    manifest = {
        "format": "pairvae-dataset",
        "num_videos": cfg.num_videos,
        "segments_per_video": t_total,
        "categories": cfg.categories,
        "audio_dim": cfg.audio_dim,
        "visual_dim": cfg.visual_dim,
        "concept_dim": cfg.concept_dim,
        "noise_std": cfg.noise_std,
        "background_scale": cfg.background_scale,
        "train_fraction": cfg.train_fraction,
        "seed": cfg.seed,
        "splits": {"train": dataset.train_ids, "test": dataset.test_ids},
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    audio = np.stack([seg.audio for video in dataset.videos for seg in video.segments])
    visual = np.stack([seg.visual for video in dataset.videos for seg in video.segments])
    audio.astype("<f4").tofile(directory / "audio.f32")
    visual.astype("<f4").tofile(directory / "visual.f32")

    labels = [
        {"category": v.category, "event_start": v.event_start, "event_end": v.event_end}
        for v in dataset.videos
    ]
    (directory / "labels.json").write_text(json.dumps(labels, indent=2, sort_keys=True) + "\n")
    return manifest


def _read_f32(path: Path, rows: int, cols: int) -> np.ndarray:
    if not path.exists():
        raise DataFormatError(f"missing file: {path}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != rows * cols:
        raise DataFormatError(f"{path.name} holds {raw.size} floats, expected {rows * cols}")
    return raw.reshape(rows, cols).astype(np.float64)


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataFormatError(f"missing file: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())

    try:
        config = SynthConfig(
            num_videos=manifest["num_videos"],
            categories=manifest["categories"],
            audio_dim=manifest["audio_dim"],
            visual_dim=manifest["visual_dim"],
            concept_dim=manifest.get("concept_dim", 6),
            noise_std=manifest.get("noise_std", 0.3),
            background_scale=manifest.get("background_scale", 1.0),
            segments_per_video=manifest["segments_per_video"],
            train_fraction=manifest.get("train_fraction", 0.8),
            seed=manifest["seed"],
        )
        splits = manifest["splits"]
    except KeyError as exc:
        raise DataFormatError(f"manifest.json is missing field {exc}") from exc

    n, t_total = config.num_videos, config.segments_per_video
    audio = _read_f32(directory / "audio.f32", n * t_total, config.audio_dim)
    visual = _read_f32(directory / "visual.f32", n * t_total, config.visual_dim)

    labels_path = directory / "labels.json"
    if not labels_path.exists():
        raise DataFormatError(f"missing file: {labels_path}")
    labels = json.loads(labels_path.read_text())
    if len(labels) != n:
        raise DataFormatError(f"labels.json lists {len(labels)} videos, manifest says {n}")

    videos = []
    for vid, label in enumerate(labels):
        category = int(label["category"])
        start, end = int(label["event_start"]), int(label["event_end"])
        if not 0 <= category < config.categories:
            raise DataFormatError(f"labels.json video {vid}: category {category} outside [0, {config.categories})")
        if not (0 <= start < end <= t_total) or end - start < MIN_EVENT_LEN:
            raise DataFormatError(f"labels.json video {vid}: bad event span [{start}, {end})")
        segments = [
            SegmentPair(
                audio=audio[vid * t_total + t],
                visual=visual[vid * t_total + t],
                is_event=start <= t < end,
            )
            for t in range(t_total)
        ]
        videos.append(VideoSequence(segments=segments, category=category, event_start=start, event_end=end))

    train_ids = [int(i) for i in splits["train"]]
    test_ids = [int(i) for i in splits["test"]]
    if sorted(train_ids + test_ids) != list(range(n)):
        raise DataFormatError("manifest.json splits are not a partition of the videos")
    return Dataset(videos=videos, config=config, train_ids=train_ids, test_ids=test_ids)
