"""Synthetic 3-phone corpus with ambiguous A/B blend segments.

Stands in for a real L2 corpus in end-to-end runs: two phones sit at a fixed
distance along the first coefficient axis, a third sits well apart, and a
small fraction of "blend" segments interpolate the first two. Blends carry a
coin-flip label from either parent, mirroring how forced alignment assigns a
single categorical label to a non-categorical realization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (ManifestRow, PhoneInventory, SegmentDataset,
                     SegmentFeatureSequence, write_manifest)
from .features import FrameFeatureMatrix, append_feature_manifest, write_features

BLEND_SPLIT = "blend"

# frame geometry matching the 16 kHz / 25 ms / 10 ms convention
FRAME_HOP = 160
FIRST_CENTER = 200


@dataclass(frozen=True)
class SyntheticConfig:
    symbols: tuple[str, ...] = ("ax", "er", "ih")
    n_coeffs: int = 13
    # class geometry: A at +sep/2 and B at -sep/2 on axis 0, C off-axis
    separation: float = 4.5
    third_phone_offset: float = 6.0
    noise_scale: float = 2.0
    n_train_per_phone: int = 100
    n_eval_per_phone: int = 50
    # blends must dominate training density or the decision boundary
    # sharpens and fresh blends land on confident one-hot posteriors
    n_train_blends: int = 600
    n_eval_blends: int = 40
    blend_weight_range: tuple[float, float] = (0.45, 0.55)
    min_frames: int = 5
    max_frames: int = 15
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if len(self.symbols) != 3 or tuple(sorted(self.symbols)) != self.symbols:
            raise ValueError("generator needs exactly three phones in sorted order")
        if not 0.0 <= self.blend_weight_range[0] < self.blend_weight_range[1] <= 1.0:
            raise ValueError(f"bad blend weight range {self.blend_weight_range}")
        if self.min_frames < 1 or self.max_frames < self.min_frames:
            raise ValueError("bad frame count range")

    @property
    def blend_pattern(self) -> str:
        return "_".join(sorted(self.symbols[:2]))


@dataclass(frozen=True)
class SyntheticData:
    inventory: PhoneInventory
    train: SegmentDataset
    valid: SegmentDataset
    eval_pure: SegmentDataset
    eval_blends: SegmentDataset
    blend_ids: tuple[str, ...] = field(default=())


def _phone_means(cfg: SyntheticConfig) -> np.ndarray:
    means = np.zeros((3, cfg.n_coeffs))
    means[0, 0] = +cfg.separation / 2.0
    means[1, 0] = -cfg.separation / 2.0
    means[2, 1] = cfg.third_phone_offset
    return means


def build_synthetic(cfg: SyntheticConfig) -> SyntheticData:
    inventory = PhoneInventory(cfg.symbols)
    means = _phone_means(cfg)
    rng = np.random.default_rng([cfg.seed, 7])
    counter = 0
    lo, hi = cfg.blend_weight_range

    def segment(mean: np.ndarray, label: int) -> SegmentFeatureSequence:
        nonlocal counter
        n = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
        frames = mean + cfg.noise_scale * rng.standard_normal((n, cfg.n_coeffs))
        seg = SegmentFeatureSequence(frames=frames, label=label,
                                     segment_id=f"s{counter:05d}:0")
        counter += 1
        return seg

    def pure_batch(count_per_phone: int) -> list[SegmentFeatureSequence]:
        return [segment(means[k], k)
                for k in range(3) for _ in range(count_per_phone)]

    def blend_batch(count: int) -> list[SegmentFeatureSequence]:
        out = []
        for _ in range(count):
            w = rng.uniform(lo, hi)
            label = int(rng.integers(0, 2))  # coin-flip parent phone
            out.append(segment(w * means[0] + (1.0 - w) * means[1], label))
        return out

    pure_pool = pure_batch(cfg.n_train_per_phone)
    blend_pool = blend_batch(cfg.n_train_blends)
    # Validation holds pure segments only: coin-labeled blends cap at 50%
    # whatever the model does, so their noise would drown the early-stopping
    # signal entirely.
    order = rng.permutation(len(pure_pool))
    n_valid = max(1, round(cfg.validation_fraction * len(pure_pool)))
    valid_idx = set(order[:n_valid].tolist())
    valid_items = [pure_pool[i] for i in sorted(valid_idx)]
    train_items = [pure_pool[i] for i in range(len(pure_pool))
                   if i not in valid_idx] + blend_pool

    eval_pure = pure_batch(cfg.n_eval_per_phone)
    eval_blends = blend_batch(cfg.n_eval_blends)

    return SyntheticData(
        inventory=inventory,
        train=SegmentDataset(train_items, corpus_tag="synthetic", split="train"),
        valid=SegmentDataset(valid_items, corpus_tag="synthetic", split="validation"),
        eval_pure=SegmentDataset(eval_pure, corpus_tag="synthetic", split="eval"),
        eval_blends=SegmentDataset(eval_blends, corpus_tag="synthetic", split=BLEND_SPLIT),
        blend_ids=tuple(s.segment_id for s in eval_blends),
    )


def write_synthetic_corpus(cfg: SyntheticConfig, out_dir: str | Path) -> Path:
    """Materialize the generated corpus as feature files plus manifests.

    Layout: features/<source>.spg1, features.manifest, dataset.tsv,
    inventory.txt, blends.txt. Returns the dataset manifest path.
    """
    out_dir = Path(out_dir)
    features_dir = out_dir / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    data = build_synthetic(cfg)

    manifest_rows: list[ManifestRow] = []
    feature_manifest = out_dir / "features.manifest"
    if feature_manifest.exists():
        feature_manifest.unlink()
    for ds in (data.train, data.valid, data.eval_pure, data.eval_blends):
        for seg in ds.items:
            source_id = seg.segment_id.rsplit(":", 1)[0]
            n = seg.frames.shape[0]
            centers = FIRST_CENTER + FRAME_HOP * np.arange(n, dtype=np.int64)
            mat = FrameFeatureMatrix(rows=seg.frames, frame_centers=centers,
                                     source_id=source_id)
            path = features_dir / f"{source_id}.spg1"
            write_features(path, mat)
            append_feature_manifest(feature_manifest, source_id, str(path), n)
            manifest_rows.append(ManifestRow(
                segment_id=seg.segment_id, source_id=source_id,
                start_sample=0, end_sample=int(centers[-1]) + 1,
                label=data.inventory.symbols[seg.label],
                split=ds.split, corpus_tag=ds.corpus_tag,
            ))
    dataset_path = out_dir / "dataset.tsv"
    write_manifest(dataset_path, manifest_rows)
    data.inventory.to_file(out_dir / "inventory.txt")
    (out_dir / "blends.txt").write_text(
        "\n".join(data.blend_ids) + "\n", encoding="utf-8")
    return dataset_path
