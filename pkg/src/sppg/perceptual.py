"""Confusion groups, listener response logs, and option-proportion scoring."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NONCAT = "noncat"
N_NONCAT_ITEMS = 6
N_CAT_ITEMS = 3
OPTIONS = (1, 2, 3, 4)

OPTION_LABELS = (
    "More similar to [{p1}]",
    "More similar to [{p2}]",
    "Equal similarity to [{p1}] and [{p2}]",
    "Not similar to either [{p1}] or [{p2}]",
)


class PoolShortageError(RuntimeError):
    def __init__(self, pool: str, needed: int, available: int):
        super().__init__(f"{pool} pool has {available} segments, need {needed}")
        self.pool = pool


def option_labels(pattern: str) -> list[str]:
    p1, p2 = pattern.split("_", 1)
    return [tpl.format(p1=p1, p2=p2) for tpl in OPTION_LABELS]


@dataclass(frozen=True)
class GroupItem:
    item_id: str
    segment_id: str
    true_class: str  # "noncat" | "cat_<P1>" | "cat_<P2>"
    audio_path: str


@dataclass(frozen=True)
class ConfusionGroup:
    pattern: str
    items: tuple[GroupItem, ...]  # already in presentation order

    def __post_init__(self):
        p1, p2 = self.pattern.split("_", 1)
        counts = {NONCAT: 0, f"cat_{p1}": 0, f"cat_{p2}": 0}
        for item in self.items:
            if item.true_class not in counts:
                raise ValueError(f"unexpected true_class {item.true_class!r} in group {self.pattern}")
            counts[item.true_class] += 1
        expected = {NONCAT: N_NONCAT_ITEMS, f"cat_{p1}": N_CAT_ITEMS, f"cat_{p2}": N_CAT_ITEMS}
        if counts != expected:
            raise ValueError(f"group {self.pattern} composition {counts} != {expected}")
        ids = [i.item_id for i in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate item_ids in group {self.pattern}")


def _opaque_item_id(pattern: str, seed: int, position: int) -> str:
    digest = hashlib.sha1(f"{pattern}|{seed}|{position}".encode("utf-8")).hexdigest()
    return digest[:12]


def build_group(pattern: str, noncat_pool: Sequence[str], cat1_pool: Sequence[str],
                cat2_pool: Sequence[str], seed: int) -> ConfusionGroup:
    """Sample 6 non-category + 3/3 categorical segment ids and shuffle.

    Item ids are opaque digests assigned after shuffling, so neither the id
    nor the position reveals an item's class.
    """
    p1, p2 = pattern.split("_", 1)
    rng = np.random.default_rng(seed)
    chosen: list[tuple[str, str]] = []
    for pool_name, pool, need, cls in (
        (f"noncat[{pattern}]", noncat_pool, N_NONCAT_ITEMS, NONCAT),
        (f"cat[{p1}]", cat1_pool, N_CAT_ITEMS, f"cat_{p1}"),
        (f"cat[{p2}]", cat2_pool, N_CAT_ITEMS, f"cat_{p2}"),
    ):
        if len(pool) < need:
            raise PoolShortageError(pool_name, need, len(pool))
        picks = rng.choice(len(pool), size=need, replace=False)
        chosen.extend((pool[i], cls) for i in picks)
    order = rng.permutation(len(chosen))
    items = tuple(
        GroupItem(
            item_id=_opaque_item_id(pattern, seed, pos),
            segment_id=chosen[src][0],
            true_class=chosen[src][1],
            audio_path=f"{_opaque_item_id(pattern, seed, pos)}.wav",
        )
        for pos, src in enumerate(order)
    )
    return ConfusionGroup(pattern=pattern, items=items)


def save_group(path: str | Path, group: ConfusionGroup) -> None:
    payload = {
        "pattern": group.pattern,
        "items": [
            {"item_id": i.item_id, "segment_id": i.segment_id,
             "true_class": i.true_class, "audio_path": i.audio_path}
            for i in group.items
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_group(path: str | Path) -> ConfusionGroup:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    items = tuple(GroupItem(**item) for item in payload["items"])
    return ConfusionGroup(pattern=payload["pattern"], items=items)


def listener_payload(group: ConfusionGroup) -> list[dict]:
    """Items as shown to listeners: ids and audio only, classes withheld."""
    return [{"item_id": i.item_id, "audio_path": i.audio_path} for i in group.items]


# -- responses -----------------------------------------------------------


@dataclass(frozen=True)
class ResponseRecord:
    listener_id: str
    item_id: str
    option: int
    timestamp: float

    def __post_init__(self):
        if self.option not in OPTIONS:
            raise ValueError(f"option must be one of {OPTIONS}, got {self.option}")


def append_response(path: str | Path, record: ResponseRecord) -> None:
    line = json.dumps({
        "listener_id": record.listener_id,
        "item_id": record.item_id,
        "option": record.option,
        "timestamp": record.timestamp,
    }, sort_keys=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")


def read_responses(path: str | Path) -> list[ResponseRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            records.append(ResponseRecord(
                listener_id=raw["listener_id"], item_id=raw["item_id"],
                option=int(raw["option"]), timestamp=float(raw["timestamp"]),
            ))
    return records


# -- scoring -------------------------------------------------------------


@dataclass(frozen=True)
class OptionShares:
    proportions: tuple[float, float, float, float]
    score_gap: float
    n: int

    @classmethod
    def from_proportions(cls, p1: float, p2: float, p3: float, p4: float, n: int = 0) -> "OptionShares":
        return cls(proportions=(p1, p2, p3, p4), score_gap=abs(p1 - p2), n=n)


def _shares_from_counts(counts: dict[int, int]) -> OptionShares:
    total = sum(counts.values())
    props = tuple(counts.get(opt, 0) / total for opt in OPTIONS)
    return OptionShares(proportions=props, score_gap=abs(props[0] - props[1]), n=total)


def average_shares(rows: Sequence[OptionShares]) -> OptionShares:
    """Unweighted mean across patterns of proportions and score gap."""
    if not rows:
        raise ValueError("cannot average zero patterns")
    props = tuple(sum(r.proportions[i] for r in rows) / len(rows) for i in range(4))
    gap = sum(r.score_gap for r in rows) / len(rows)
    return OptionShares(proportions=props, score_gap=gap, n=len(rows))


@dataclass(frozen=True)
class ConfusionScores:
    # pattern -> shares over its non-category items (None: no responses yet)
    per_pattern: dict[str, OptionShares | None]
    # pattern -> true_class -> shares (only cells with responses)
    per_class: dict[str, dict[str, OptionShares]]
    average: OptionShares | None
    rejected: int


def _dedupe(responses: Iterable[ResponseRecord]) -> dict[tuple[str, str], ResponseRecord]:
    """Keep one record per (listener, item): the latest timestamp wins.

    Ties break on the option value so the fold is order-independent.
    """
    kept: dict[tuple[str, str], ResponseRecord] = {}
    for rec in responses:
        key = (rec.listener_id, rec.item_id)
        old = kept.get(key)
        if old is None or (rec.timestamp, rec.option) > (old.timestamp, old.option):
            kept[key] = rec
    return kept


def tally(responses: Iterable[ResponseRecord], groups: Sequence[ConfusionGroup]) -> ConfusionScores:
    """Option proportions per pattern (non-category items) and per true class."""
    item_info: dict[str, tuple[str, str]] = {}
    for g in groups:
        for item in g.items:
            item_info[item.item_id] = (g.pattern, item.true_class)

    rejected = 0
    known: list[ResponseRecord] = []
    for rec in responses:
        if rec.item_id in item_info:
            known.append(rec)
        else:
            rejected += 1

    pattern_counts: dict[str, dict[int, int]] = {}
    class_counts: dict[str, dict[str, dict[int, int]]] = {}
    for rec in _dedupe(known).values():
        pattern, true_class = item_info[rec.item_id]
        cell = class_counts.setdefault(pattern, {}).setdefault(true_class, {})
        cell[rec.option] = cell.get(rec.option, 0) + 1
        if true_class == NONCAT:
            pat = pattern_counts.setdefault(pattern, {})
            pat[rec.option] = pat.get(rec.option, 0) + 1

    per_pattern: dict[str, OptionShares | None] = {}
    for g in sorted(groups, key=lambda g: g.pattern):
        counts = pattern_counts.get(g.pattern)
        per_pattern[g.pattern] = _shares_from_counts(counts) if counts else None
    per_class = {
        pattern: {tc: _shares_from_counts(c) for tc, c in sorted(cells.items())}
        for pattern, cells in sorted(class_counts.items())
    }
    with_data = [s for s in per_pattern.values() if s is not None]
    average = average_shares(with_data) if with_data else None
    return ConfusionScores(per_pattern=per_pattern, per_class=per_class,
                           average=average, rejected=rejected)


def scores_to_json(scores: ConfusionScores) -> dict:
    def shares(s: OptionShares | None):
        if s is None:
            return None
        return {"options": list(s.proportions), "score_gap": s.score_gap, "n": s.n}

    return {
        "patterns": {name: shares(s) for name, s in sorted(scores.per_pattern.items())},
        "per_class": {
            pattern: {tc: shares(s) for tc, s in cells.items()}
            for pattern, cells in sorted(scores.per_class.items())
        },
        "average": shares(scores.average),
        "rejected": scores.rejected,
    }


# -- report export --------------------------------------------------------


def _fmt_share(x: float) -> str:
    return f"{100.0 * x:.1f}%"


def export_report(scores: ConfusionScores, out_dir: str | Path,
                  pies: bool = False) -> list[Path]:
    """Write the per-pattern option table, the per-class breakdown, and
    optionally one SVG pie per (pattern, true_class) cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    patterns = sorted(scores.per_pattern)
    table_path = out_dir / "confusion_scores.tsv"
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("row\t" + "\t".join(patterns) + "\taverage\n")
        row_names = ("option_1", "option_2", "option_3", "option_4")
        for idx, row_name in enumerate(row_names):
            cells = [
                _fmt_share(s.proportions[idx]) if (s := scores.per_pattern[p]) else "no data"
                for p in patterns
            ]
            avg = _fmt_share(scores.average.proportions[idx]) if scores.average else "no data"
            fh.write(f"{row_name}\t" + "\t".join(cells) + f"\t{avg}\n")
        gap_cells = [
            _fmt_share(s.score_gap) if (s := scores.per_pattern[p]) else "no data"
            for p in patterns
        ]
        gap_avg = _fmt_share(scores.average.score_gap) if scores.average else "no data"
        fh.write("score_gap\t" + "\t".join(gap_cells) + f"\t{gap_avg}\n")
        n_cells = [str(s.n) if (s := scores.per_pattern[p]) else "0" for p in patterns]
        fh.write("n_responses\t" + "\t".join(n_cells) + "\t\n")
    written.append(table_path)

    breakdown_path = out_dir / "per_class_scores.tsv"
    with open(breakdown_path, "w", encoding="utf-8") as fh:
        fh.write("pattern\ttrue_class\toption_1\toption_2\toption_3\toption_4\tn\n")
        for pattern, cells in sorted(scores.per_class.items()):
            for true_class, s in cells.items():
                props = "\t".join(_fmt_share(p) for p in s.proportions)
                fh.write(f"{pattern}\t{true_class}\t{props}\t{s.n}\n")
    written.append(breakdown_path)

    if pies:
        for pattern, cells in sorted(scores.per_class.items()):
            for true_class, s in cells.items():
                pie_path = out_dir / f"pie_{pattern}_{true_class}.svg"
                write_pie_svg(pie_path, s.proportions, f"{pattern} / {true_class}")
                written.append(pie_path)
    return written


PIE_COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


def write_pie_svg(path: str | Path, proportions: Sequence[float], title: str) -> None:
    cx, cy, r = 100.0, 110.0, 80.0
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="200" height="220" viewBox="0 0 200 220">',
        f'<text x="100" y="16" text-anchor="middle" font-size="12">{title}</text>',
    ]
    angle = -math.pi / 2
    for share, color in zip(proportions, PIE_COLORS):
        if share <= 0:
            continue
        if share >= 1.0:
            parts.append(f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="{color}"/>')
            break
        sweep = 2 * math.pi * share
        x0, y0 = cx + r * math.cos(angle), cy + r * math.sin(angle)
        x1, y1 = cx + r * math.cos(angle + sweep), cy + r * math.sin(angle + sweep)
        large = 1 if share > 0.5 else 0
        parts.append(
            f'<path d="M{cx:.3f},{cy:.3f} L{x0:.3f},{y0:.3f} '
            f'A{r},{r} 0 {large} 1 {x1:.3f},{y1:.3f} Z" fill="{color}"/>'
        )
        angle += sweep
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
