"""Phone inventories, alignment ingestion, segment slicing, and dataset splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FrameFeatureMatrix

log = logging.getLogger(__name__)

# 48-phone working set (TIMIT 61 folded down, Lee & Hon style). Retains
# ax/ix/er and the full stop/fricative contrasts that pattern names use.
TIMIT48 = (
    "aa", "ae", "ah", "ao", "aw", "ax", "ay", "b", "ch", "cl", "d", "dh",
    "dx", "eh", "el", "en", "epi", "er", "ey", "f", "g", "hh", "ih", "ix",
    "iy", "jh", "k", "l", "m", "n", "ng", "ow", "oy", "p", "r", "s", "sh",
    "sil", "t", "th", "uh", "uw", "v", "vcl", "w", "y", "z", "zh",
)

# Default 61 -> 48 folding. Closures merge to cl/vcl, silences to sil;
# q (glottal stop) folds to sil rather than being deleted so spans stay
# contiguous.
FOLDING_61_TO_48 = {
    "ax-h": "ax",
    "axr": "er",
    "bcl": "vcl",
    "dcl": "vcl",
    "em": "m",
    "eng": "ng",
    "gcl": "vcl",
    "h#": "sil",
    "hv": "hh",
    "kcl": "cl",
    "nx": "n",
    "pau": "sil",
    "pcl": "cl",
    "q": "sil",
    "tcl": "cl",
    "ux": "uw",
}


class PhnParseError(ValueError):
    """Malformed alignment line; message carries the 1-based line number."""


class AlignmentError(ValueError):
    """Structurally invalid alignment (overlaps, reversed spans)."""


@dataclass(frozen=True)
class PhoneInventory:
    symbols: tuple[str, ...]

    def __post_init__(self):
        if not self.symbols:
            raise ValueError("inventory must be non-empty")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("inventory symbols must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def index(self, symbol: str) -> int:
        return self._index[symbol]

    @classmethod
    def default(cls) -> "PhoneInventory":
        return cls(TIMIT48)

    @classmethod
    def from_file(cls, path: str | Path) -> "PhoneInventory":
        symbols = tuple(
            line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()
        )
        return cls(symbols)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{s}\n" for s in self.symbols), encoding="utf-8")


def load_folding(path: str | Path) -> dict[str, str]:
    """Read a `from<TAB>to` folding table."""
    folding: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise PhnParseError(f"folding line {lineno}: expected `from<TAB>to`, got {line!r}")
        folding[parts[0]] = parts[1]
    return folding


def write_folding(path: str | Path, folding: dict[str, str]) -> None:
    Path(path).write_text(
        "".join(f"{a}\t{b}\n" for a, b in sorted(folding.items())), encoding="utf-8"
    )


def fold(symbol: str, folding: dict[str, str]) -> str:
    """Apply the folding table until a fixed point (tables may chain)."""
    seen = {symbol}
    while symbol in folding:
        symbol = folding[symbol]
        if symbol in seen:  # defensive: cyclic table
            break
        seen.add(symbol)
    return symbol


@dataclass(frozen=True)
class PhoneSegment:
    source_id: str
    start_sample: int
    end_sample: int
    label: str

    def __post_init__(self):
        if not 0 <= self.start_sample < self.end_sample:
            raise ValueError(
                f"segment span must satisfy 0 <= start < end, got [{self.start_sample}, {self.end_sample})"
            )


def load_phn(
    path: str | Path,
    inventory: PhoneInventory,
    folding: dict[str, str] | None = None,
    source_id: str | None = None,
) -> tuple[list[PhoneSegment], list[str]]:
    """Parse a `.PHN` alignment (`start_sample end_sample label` per line).

    Labels are folded through the table; segments whose folded label is not
    in the inventory are dropped and returned as the unknown-label list.
    """
    folding = folding if folding is not None else {}
    sid = source_id if source_id is not None else Path(path).stem
    segments: list[PhoneSegment] = []
    unknown: list[str] = []
    prev_end = 0
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise PhnParseError(f"{path}: line {lineno}: expected `start end label`, got {line!r}")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise PhnParseError(f"{path}: line {lineno}: non-integer span in {line!r}") from exc
        if end <= start:
            raise PhnParseError(f"{path}: line {lineno}: end before start ({start} >= {end})")
        if start < prev_end:
            raise AlignmentError(
                f"{path}: line {lineno}: span [{start}, {end}) overlaps previous end {prev_end}"
            )
        prev_end = end
        label = fold(parts[2], folding)
        if label not in inventory:
            unknown.append(parts[2])
            log.warning("%s: line %d: label %r not in inventory after folding", path, lineno, parts[2])
            continue
        segments.append(PhoneSegment(source_id=sid, start_sample=start, end_sample=end, label=label))
    return segments, unknown


@dataclass(frozen=True)
class SegmentFeatureSequence:
    frames: np.ndarray  # [S, n_coeffs]
    label: int
    segment_id: str

    def __post_init__(self):
        if self.frames.ndim != 2 or len(self.frames) < 1:
            raise ValueError(f"segment needs at least one frame row, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("segment features must be finite")
        if self.label < 0:
            raise ValueError(f"label index must be non-negative, got {self.label}")

    def __len__(self) -> int:
        return len(self.frames)


def slice_segments(
    features: FrameFeatureMatrix,
    segments: list[PhoneSegment],
    inventory: PhoneInventory,
) -> tuple[list[SegmentFeatureSequence], int]:
    """Assign each frame to the segment containing its center.

    Segments that capture no frame center are dropped; the drop count is
    returned alongside the slices.
    """
    out: list[SegmentFeatureSequence] = []
    dropped = 0
    centers = features.frame_centers
    for seg in segments:
        if seg.source_id != features.source_id:
            raise ValueError(
                f"segment source {seg.source_id!r} does not match features source {features.source_id!r}"
            )
        mask = (centers >= seg.start_sample) & (centers < seg.end_sample)
        if not mask.any():
            dropped += 1
            continue
        out.append(
            SegmentFeatureSequence(
                frames=features.rows[mask],
                label=inventory.index(seg.label),
                segment_id=f"{seg.source_id}:{seg.start_sample}",
            )
        )
    return out, dropped


@dataclass
class SegmentDataset:
    items: list[SegmentFeatureSequence]
    corpus_tag: str = "l2"
    split: str = "train"

    def __post_init__(self):
        ids = [s.segment_id for s in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate segment_ids in dataset")

    def __len__(self) -> int:
        return len(self.items)


def split_train_validation(
    ds: SegmentDataset,
    fraction: float,
    seed: int,
    speaker_map: dict[str, str] | None = None,
) -> tuple[SegmentDataset, SegmentDataset]:
    """Hold out ~fraction of speaker groups (utterances when no speaker map).

    Deterministic under the seed; the held-out side becomes the validation
    split and the two sides are disjoint by group.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie strictly in (0, 1), got {fraction}")

    def group_of(seg: SegmentFeatureSequence) -> str:
        source_id = seg.segment_id.rsplit(":", 1)[0]
        if speaker_map is not None:
            return speaker_map.get(source_id, source_id)
        return source_id

    groups = sorted({group_of(s) for s in ds.items})
    if len(groups) < 2:
        raise ValueError(f"dataset has {len(groups)} group(s); need at least 2 to split")
    rng = np.random.default_rng(seed)
    order = [groups[i] for i in rng.permutation(len(groups))]
    n_valid = int(round(fraction * len(groups)))
    n_valid = min(max(n_valid, 1), len(groups) - 1)
    valid_groups = set(order[:n_valid])
    train_items = [s for s in ds.items if group_of(s) not in valid_groups]
    valid_items = [s for s in ds.items if group_of(s) in valid_groups]
    return (
        SegmentDataset(items=train_items, corpus_tag=ds.corpus_tag, split="train"),
        SegmentDataset(items=valid_items, corpus_tag=ds.corpus_tag, split="validation"),
    )


@dataclass(frozen=True)
class ManifestRow:
    segment_id: str
    source_id: str
    start_sample: int
    end_sample: int
    label: str
    split: str
    corpus_tag: str


MANIFEST_HEADER = "segment_id\tsource_id\tstart\tend\tlabel\tsplit\tcorpus_tag"


def write_manifest(path: str | Path, rows: list[ManifestRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.segment_id}\t{r.source_id}\t{r.start_sample}\t{r.end_sample}"
                f"\t{r.label}\t{r.split}\t{r.corpus_tag}\n"
            )


def read_manifest(path: str | Path) -> list[ManifestRow]:
    rows: list[ManifestRow] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != MANIFEST_HEADER:
            raise ValueError(f"{path}: unexpected manifest header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise ValueError(f"{path}: line {lineno}: expected 7 columns, got {len(parts)}")
            rows.append(
                ManifestRow(
                    segment_id=parts[0],
                    source_id=parts[1],
                    start_sample=int(parts[2]),
                    end_sample=int(parts[3]),
                    label=parts[4],
                    split=parts[5],
                    corpus_tag=parts[6],
                )
            )
    return rows
