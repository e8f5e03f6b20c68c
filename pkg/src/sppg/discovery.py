"""Threshold peak rule over posteriors: verdicts, pattern naming, set comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CATEGORICAL = "categorical"
NON_CATEGORICAL = "non_categorical"
UNCATEGORIZED = "uncategorized"

DEFAULT_THETA = 0.4
DEFAULT_CONFIDENCE = 0.9
DEFAULT_MIN_SUPPORT = 20


class PatternNameError(ValueError):
    pass


class ExemplarShortageError(RuntimeError):
    def __init__(self, phone: str, needed: int, available: int):
        super().__init__(
            f"only {available} segments reach the confidence bar for {phone!r}, need {needed}")
        self.available = available


@dataclass(frozen=True)
class SegmentVerdict:
    segment_id: str
    kind: str  # CATEGORICAL | NON_CATEGORICAL | UNCATEGORIZED
    phone: str | None  # set for categorical verdicts
    pattern: str | None  # canonical name for non-categorical verdicts
    peaks: tuple[tuple[str, float], ...]  # above-threshold (symbol, prob)

    def __post_init__(self):
        n = len(self.peaks)
        if self.kind == CATEGORICAL and n != 1:
            raise ValueError("categorical verdict must carry exactly one peak")
        if self.kind == NON_CATEGORICAL and n < 2:
            raise ValueError("non-categorical verdict needs at least two peaks")
        if self.kind == UNCATEGORIZED and n != 0:
            raise ValueError("uncategorized verdict must carry no peaks")


@dataclass(frozen=True)
class NonCatPattern:
    name: str
    members: tuple[str, ...]
    count: int
    support_segments: tuple[str, ...]

    def __post_init__(self):
        if self.name != canonical_name(self.members):
            raise ValueError(f"{self.name!r} is not canonical for members {self.members}")
        if self.count != len(self.support_segments):
            raise ValueError("count must equal the number of support segments")


@dataclass(frozen=True)
class PatternSetDiff:
    additional: frozenset[str]
    existing: frozenset[str]
    missing: frozenset[str]


def find_peaks(probs: np.ndarray, theta: float) -> set[int]:
    """Indices whose probability is strictly greater than theta."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie strictly in (0, 1), got {theta}")
    return set(np.flatnonzero(np.asarray(probs) > theta).tolist())


def max_peaks(theta: float) -> int:
    """Largest k with k*theta < 1: strict peaks cannot exceed this."""
    inv = 1 / Fraction(theta).limit_denominator(10**9)
    return int(inv) - 1 if inv.denominator == 1 else int(inv)


def canonical_name(members: Iterable[str]) -> str:
    """Ascending lexicographic join, e.g. {n, l} -> "l_n"."""
    unique = sorted(set(members))
    if len(unique) < 2:
        raise PatternNameError(f"a pattern needs at least two member phones, got {unique}")
    return "_".join(unique)


def classify_segment(segment_id: str, probs: np.ndarray, theta: float,
                     symbols: Sequence[str]) -> SegmentVerdict:
    """0 peaks: uncategorized; 1: categorical; >=2: non-categorical."""
    peak_idx = sorted(find_peaks(probs, theta))
    peaks = tuple((symbols[i], float(probs[i])) for i in peak_idx)
    if not peaks:
        return SegmentVerdict(segment_id, UNCATEGORIZED, None, None, ())
    if len(peaks) == 1:
        return SegmentVerdict(segment_id, CATEGORICAL, peaks[0][0], None, peaks)
    pattern = canonical_name(sym for sym, _ in peaks)
    return SegmentVerdict(segment_id, NON_CATEGORICAL, None, pattern, peaks)


def aggregate_patterns(verdicts: Iterable[SegmentVerdict],
                       min_support: int = DEFAULT_MIN_SUPPORT
                       ) -> tuple[list[NonCatPattern], list[NonCatPattern]]:
    """Group non-categorical verdicts by canonical name.

    Returns (patterns, under_supported), each sorted by count descending then
    name; patterns below min_support land in the second list.
    """
    if min_support < 1:
        raise ValueError(f"min_support must be >= 1, got {min_support}")
    groups: dict[str, list[SegmentVerdict]] = {}
    for v in verdicts:
        if v.kind == NON_CATEGORICAL:
            groups.setdefault(v.pattern, []).append(v)
    patterns = []
    for name, vs in groups.items():
        ids = tuple(sorted(v.segment_id for v in vs))
        patterns.append(NonCatPattern(
            name=name,
            members=tuple(name.split("_")),
            count=len(ids),
            support_segments=ids,
        ))
    patterns.sort(key=lambda p: (-p.count, p.name))
    supported = [p for p in patterns if p.count >= min_support]
    under = [p for p in patterns if p.count < min_support]
    return supported, under


def select_exemplars(sppgs: Sequence, phone_index: int, phone_symbol: str,
                     confidence: float, k: int, seed: int) -> list[str]:
    """Uniform random k segment ids with prob[phone] >= confidence."""
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie strictly in (0, 1), got {confidence}")
    qualifying = [s.segment_id for s in sppgs if s.probs[phone_index] >= confidence]
    if k == 0:
        return []
    if len(qualifying) < k:
        raise ExemplarShortageError(phone_symbol, k, len(qualifying))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(qualifying), size=k, replace=False)
    return [qualifying[i] for i in picks]


def compare_pattern_sets(current: Iterable[str], reference: Iterable[str]) -> PatternSetDiff:
    cur, ref = frozenset(current), frozenset(reference)
    return PatternSetDiff(additional=cur - ref, existing=cur & ref, missing=ref - cur)


# -- reports -------------------------------------------------------------


def write_pattern_report(path: str | Path, patterns: list[NonCatPattern],
                         under_supported: list[NonCatPattern], max_examples: int = 5) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pattern\tcount\texample_segment_ids\n")
        for p in patterns:
            fh.write(f"{p.name}\t{p.count}\t{','.join(p.support_segments[:max_examples])}\n")
        if under_supported:
            fh.write("# observed but under-supported\n")
            for p in under_supported:
                fh.write(f"{p.name}\t{p.count}\t{','.join(p.support_segments[:max_examples])}\n")


def write_verdicts_jsonl(path: str | Path, verdicts: Iterable[SegmentVerdict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            record = {
                "segment_id": v.segment_id,
                "verdict": v.kind,
                "phone": v.phone,
                "pattern": v.pattern,
                "peaks": [[sym, round(p, 6)] for sym, p in v.peaks],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_verdicts_jsonl(path: str | Path) -> list[SegmentVerdict]:
    verdicts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            verdicts.append(SegmentVerdict(
                segment_id=raw["segment_id"], kind=raw["verdict"],
                phone=raw["phone"], pattern=raw["pattern"],
                peaks=tuple((sym, float(p)) for sym, p in raw["peaks"]),
            ))
    return verdicts


def write_diff_report(path: str | Path, diff: PatternSetDiff) -> None:
    """Three columns: additional, existing, missing (row-padded with blanks)."""
    cols = [sorted(diff.additional), sorted(diff.existing), sorted(diff.missing)]
    height = max(len(c) for c in cols) if any(cols) else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("additional\texisting\tmissing\n")
        for i in range(height):
            fh.write("\t".join(c[i] if i < len(c) else "" for c in cols) + "\n")
