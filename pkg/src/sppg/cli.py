"""Command-line front end wiring every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error. Progress and stage
timings go to stderr so artifact files stay byte-deterministic.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import classifier, corpus, discovery, features, perceptual, service
from .audio import cut_clip, read_wav, write_wav
from .config import PipelineConfig, load_config, resolved_ini


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits by default; map to exit code 1
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        self.t0 = time.monotonic()
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "failed" if exc_type else "done"
        _log(f"[{self.name}] {status} in {time.monotonic() - self.t0:.2f}s")
        return False


def _build_parser() -> _Parser:
    parser = _Parser(prog="sppg", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", help="output file or directory")
        return p

    p = add("featurize", "compute MFCC features for wav files")
    p.add_argument("--wav", nargs="*", default=[], help="wav file paths")
    p.add_argument("--wav-dir", help="directory of wav files")

    p = add("segments", "slice aligned phone segments into a dataset manifest")
    p.add_argument("--features-manifest", required=True)
    p.add_argument("--phn-dir", required=True, help="directory of .phn alignment files")
    p.add_argument("--inventory", help="phone inventory file (default: 48-symbol set)")
    p.add_argument("--folding", help="label folding table file")
    p.add_argument("--split", default="train")
    p.add_argument("--corpus-tag", default="l2")

    p = add("train", "train the segment classifier")
    p.add_argument("--dataset", required=True, help="dataset manifest TSV")
    p.add_argument("--features-manifest", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--seed", type=int)

    p = add("eval", "recognition rate of a checkpoint per corpus tag")
    p.add_argument("--dataset", required=True)
    p.add_argument("--features-manifest", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--training-set", default="l1+l2")

    p = add("sppg", "emit segmental posterior-grams for a dataset split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--features-manifest", required=True)
    p.add_argument("--inventory", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="eval")

    p = add("discover", "find multi-peak patterns in an SPPG file")
    p.add_argument("--sppg", required=True)
    p.add_argument("--theta", type=float)
    p.add_argument("--min-support", type=int)

    p = add("compare-sets", "diff two pattern-name lists")
    p.add_argument("--current", required=True)
    p.add_argument("--reference", required=True)

    p = add("groups", "build confusion groups for listening tests")
    p.add_argument("--sppg", required=True)
    p.add_argument("--verdicts", required=True)
    p.add_argument("--pattern", action="append", required=True,
                   help="pattern name; repeatable")
    p.add_argument("--confidence", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--wav-dir", help="cut listening clips from these wavs")
    p.add_argument("--dataset", help="dataset manifest (for clip spans)")

    p = add("serve", "run the listening-test HTTP service")
    p.add_argument("--groups-dir", required=True)
    p.add_argument("--sessions", help="JSON file {token: [pattern, ...]}")
    p.add_argument("--tokens", help="comma-separated tokens, all groups each")
    p.add_argument("--log", required=True, help="response log JSONL path")
    p.add_argument("--audio-dir", help="clip directory (default: groups-dir/clips)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--static", help="static asset directory for the web UI")

    p = add("report", "tally a response log into score tables")
    p.add_argument("--log", required=True)
    p.add_argument("--groups-dir", required=True)
    p.add_argument("--pies", action="store_true", help="also write SVG pies")

    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides: dict[tuple[str, str], str] = {}
    for attr, key in (("theta", ("discovery", "theta")),
                      ("confidence", ("discovery", "confidence")),
                      ("min_support", ("discovery", "min_support")),
                      ("seed", ("train", "seed"))):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "seed", None) is not None:
        overrides[("discovery", "seed")] = str(args.seed)
    return load_config(getattr(args, "config", None), overrides)


def _out_dir(args, cfg: PipelineConfig) -> Path:
    out = Path(args.out) if args.out else cfg.workdir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


# -- dataset plumbing ------------------------------------------------------


def _load_split_datasets(dataset_path: str, manifest_path: str,
                         inventory: corpus.PhoneInventory,
                         cfg: PipelineConfig) -> dict[str, list[corpus.SegmentDataset]]:
    """Slice every manifest row back into feature sequences, grouped by
    (split, corpus_tag). Row order within a source is preserved; sources are
    visited in sorted order for determinism."""
    rows = corpus.read_manifest(_require_file(dataset_path, "dataset manifest"))
    sources = features.read_feature_manifest(_require_file(manifest_path, "feature manifest"))
    win = cfg.features.window_samples(cfg.sample_rate_hz)
    hop = cfg.features.hop_samples(cfg.sample_rate_hz)

    by_source: dict[str, list[corpus.ManifestRow]] = {}
    for row in rows:
        by_source.setdefault(row.source_id, []).append(row)

    info: dict[str, tuple[str, str]] = {r.segment_id: (r.split, r.corpus_tag) for r in rows}
    buckets: dict[tuple[str, str], list[corpus.SegmentFeatureSequence]] = {}
    dropped = 0
    for source_id in sorted(by_source):
        if source_id not in sources:
            raise ValueError(f"source {source_id!r} missing from feature manifest")
        mat = features.read_features(sources[source_id], source_id, win, hop)
        segs = [corpus.PhoneSegment(source_id, r.start_sample, r.end_sample, r.label)
                for r in by_source[source_id]]
        slices, n_dropped = corpus.slice_segments(mat, segs, inventory)
        dropped += n_dropped
        for seq in slices:
            buckets.setdefault(info[seq.segment_id], []).append(seq)
    if dropped:
        _log(f"[dataset] dropped {dropped} segment(s) without any frame center")

    out: dict[str, list[corpus.SegmentDataset]] = {}
    for (split, tag), items in sorted(buckets.items()):
        out.setdefault(split, []).append(
            corpus.SegmentDataset(items, corpus_tag=tag, split=split))
    return out


def _single_split(datasets: dict[str, list[corpus.SegmentDataset]],
                  split: str) -> corpus.SegmentDataset:
    if split not in datasets:
        raise ValueError(f"no rows with split {split!r} in the dataset manifest")
    parts = datasets[split]
    if len(parts) == 1:
        return parts[0]
    merged = [s for ds in parts for s in ds.items]
    return corpus.SegmentDataset(merged, corpus_tag=parts[0].corpus_tag, split=split)


# -- subcommands -----------------------------------------------------------


def _cmd_featurize(args) -> int:
    cfg = _config_from_args(args)
    wavs = [Path(w) for w in args.wav]
    if args.wav_dir:
        wavs.extend(sorted(Path(args.wav_dir).glob("*.wav")))
    if not wavs:
        raise UsageError("featurize needs --wav files or --wav-dir")
    out = _out_dir(args, cfg)
    feat_dir = out / "features"
    feat_dir.mkdir(exist_ok=True)
    manifest = out / "features.manifest"
    if manifest.exists():
        manifest.unlink()
    with _Stage("featurize"):
        for wav in wavs:
            signal = read_wav(_require_file(wav, "wav file"))
            if signal.sample_rate_hz != cfg.sample_rate_hz:
                raise ValueError(f"{wav}: sample rate {signal.sample_rate_hz} != "
                                 f"configured {cfg.sample_rate_hz}")
            mat = features.compute_mfcc(signal, cfg.features, source_id=wav.stem)
            target = feat_dir / f"{wav.stem}.spg1"
            features.write_features(target, mat)
            features.append_feature_manifest(manifest, wav.stem, str(target), mat.n_frames)
        _log(f"[featurize] {len(wavs)} file(s) -> {manifest}")
    return 0


def _cmd_segments(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, cfg)
    inventory = (corpus.PhoneInventory.from_file(_require_file(args.inventory, "inventory"))
                 if args.inventory else corpus.PhoneInventory.default())
    folding = (corpus.load_folding(_require_file(args.folding, "folding table"))
               if args.folding else dict(corpus.FOLDING_61_TO_48))
    sources = features.read_feature_manifest(
        _require_file(args.features_manifest, "feature manifest"))
    phn_dir = Path(args.phn_dir)
    win = cfg.features.window_samples(cfg.sample_rate_hz)
    hop = cfg.features.hop_samples(cfg.sample_rate_hz)

    rows: list[corpus.ManifestRow] = []
    n_unknown = 0
    n_dropped = 0
    with _Stage("segments"):
        for source_id in sorted(sources):
            phn = _require_file(phn_dir / f"{source_id}.phn", "alignment file")
            segs, unknown = corpus.load_phn(phn, inventory, folding, source_id=source_id)
            n_unknown += len(unknown)
            mat = features.read_features(sources[source_id], source_id, win, hop)
            slices, dropped = corpus.slice_segments(mat, segs, inventory)
            n_dropped += dropped
            kept = {s.segment_id for s in slices}
            for seg in segs:
                segment_id = f"{seg.source_id}:{seg.start_sample}"
                if segment_id in kept:
                    rows.append(corpus.ManifestRow(
                        segment_id=segment_id, source_id=seg.source_id,
                        start_sample=seg.start_sample, end_sample=seg.end_sample,
                        label=seg.label, split=args.split, corpus_tag=args.corpus_tag))
        corpus.write_manifest(out / "dataset.tsv", rows)
        if n_unknown or n_dropped:
            _log(f"[segments] skipped {n_unknown} unknown label(s), "
                 f"{n_dropped} frameless segment(s)")
        _log(f"[segments] {len(rows)} segments -> {out / 'dataset.tsv'}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, cfg)
    inventory = corpus.PhoneInventory.from_file(_require_file(args.inventory, "inventory"))
    datasets = _load_split_datasets(args.dataset, args.features_manifest, inventory, cfg)
    train_ds = _single_split(datasets, "train")
    if "validation" in datasets:
        valid_ds = _single_split(datasets, "validation")
    else:
        train_ds, valid_ds = corpus.split_train_validation(
            train_ds, classifier.VALIDATION_FRACTION, cfg.train.seed)
    mcfg = cfg.model_config(inventory_size=len(inventory))
    with _Stage("train"):
        clf, log = classifier.train(train_ds, valid_ds, mcfg, cfg.train)
    clf.save(out / "model.spgw")
    (out / "training_log.json").write_text(log.to_json() + "\n", encoding="utf-8")
    snapshot = resolved_ini(cfg, inputs={
        "dataset": args.dataset, "features_manifest": args.features_manifest,
        "inventory": args.inventory, "inventory_size": str(len(inventory)),
    })
    (out / "resolved_config.ini").write_text(snapshot, encoding="utf-8")
    _log(f"[train] best epoch {log.best_epoch}, "
         f"valid acc {log.epochs[log.best_epoch].valid_accuracy:.4f}")
    return 0


def _load_checkpoint(args, cfg: PipelineConfig,
                     inventory: corpus.PhoneInventory) -> classifier.SegmentClassifier:
    mcfg = cfg.model_config(inventory_size=len(inventory))
    return classifier.SegmentClassifier.from_checkpoint(
        _require_file(args.checkpoint, "checkpoint"), mcfg)


def _cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    inventory = corpus.PhoneInventory.from_file(_require_file(args.inventory, "inventory"))
    datasets = _load_split_datasets(args.dataset, args.features_manifest, inventory, cfg)
    if args.split not in datasets:
        raise ValueError(f"no rows with split {args.split!r} in the dataset manifest")
    clf = _load_checkpoint(args, cfg, inventory)
    with _Stage("eval"):
        report = classifier.evaluate(clf, datasets[args.split], training_set=args.training_set)
    text = report.to_tsv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_sppg(args) -> int:
    cfg = _config_from_args(args)
    inventory = corpus.PhoneInventory.from_file(_require_file(args.inventory, "inventory"))
    datasets = _load_split_datasets(args.dataset, args.features_manifest, inventory, cfg)
    ds = _single_split(datasets, args.split)
    clf = _load_checkpoint(args, cfg, inventory)
    with _Stage("sppg"):
        records = classifier.batch_sppg(clf, ds)
    out = Path(args.out) if args.out else cfg.workdir / f"{args.split}.sppg"
    labels = [inventory.symbols[s.label] for s in ds.items]
    classifier.write_sppg_file(out, records, labels, inventory)
    _log(f"[sppg] {len(records)} record(s) -> {out}")
    return 0


def _cmd_discover(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, cfg)
    inventory, records = classifier.read_sppg_file(_require_file(args.sppg, "SPPG file"))
    with _Stage("discover"):
        verdicts = [discovery.classify_segment(r.segment_id, r.probs, cfg.theta,
                                               inventory.symbols)
                    for r in records]
        supported, under = discovery.aggregate_patterns(verdicts, cfg.min_support)
    discovery.write_verdicts_jsonl(out / "verdicts.jsonl", verdicts)
    discovery.write_pattern_report(out / "patterns.tsv", supported, under)
    snapshot = resolved_ini(cfg, inputs={"sppg": args.sppg})
    (out / "resolved_config.ini").write_text(snapshot, encoding="utf-8")
    _log(f"[discover] {len(supported)} supported pattern(s), "
         f"{len(under)} under min_support={cfg.min_support}")
    for p in supported:
        print(f"{p.name}\t{p.count}")
    return 0


def _cmd_compare_sets(args) -> int:
    current = _read_name_list(args.current)
    reference = _read_name_list(args.reference)
    diff = discovery.compare_pattern_sets(current, reference)
    print(f"additional {len(diff.additional)} / existing {len(diff.existing)}"
          f" / missing {len(diff.missing)}")
    if args.out:
        discovery.write_diff_report(args.out, diff)
    return 0


def _read_name_list(path: str) -> list[str]:
    text = _require_file(path, "pattern list").read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def _cmd_groups(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, cfg)
    inventory, records = classifier.read_sppg_file(_require_file(args.sppg, "SPPG file"))
    verdicts = discovery.read_verdicts_jsonl(_require_file(args.verdicts, "verdicts file"))
    noncat_by_pattern: dict[str, list[str]] = {}
    for v in verdicts:
        if v.kind == discovery.NON_CATEGORICAL:
            noncat_by_pattern.setdefault(v.pattern, []).append(v.segment_id)

    groups = []
    with _Stage("groups"):
        for pattern in args.pattern:
            p1, p2 = pattern.split("_", 1)
            pools = {}
            for phone in (p1, p2):
                idx = inventory.index(phone)
                pools[phone] = [r.segment_id for r in records
                                if r.label == phone and r.probs[idx] >= cfg.confidence]
            group = perceptual.build_group(
                pattern, noncat_by_pattern.get(pattern, []),
                pools[p1], pools[p2], seed=cfg.group_seed)
            perceptual.save_group(out / f"{pattern}.group.json", group)
            groups.append(group)
        if args.wav_dir and args.dataset:
            _cut_group_clips(groups, args, out)
        else:
            _log("[groups] no --wav-dir/--dataset: clip cutting skipped")
    _log(f"[groups] wrote {len(groups)} group manifest(s) -> {out}")
    return 0


def _cut_group_clips(groups: list[perceptual.ConfusionGroup], args, out: Path) -> None:
    rows = {r.segment_id: r for r in corpus.read_manifest(
        _require_file(args.dataset, "dataset manifest"))}
    clip_dir = out / "clips"
    clip_dir.mkdir(exist_ok=True)
    for group in groups:
        for item in group.items:
            row = rows.get(item.segment_id)
            if row is None:
                raise ValueError(f"segment {item.segment_id!r} missing from dataset manifest")
            signal = read_wav(_require_file(
                Path(args.wav_dir) / f"{row.source_id}.wav", "wav file"))
            clip = cut_clip(signal, row.start_sample, row.end_sample)
            write_wav(clip_dir / item.audio_path, clip)


def _load_groups_dir(groups_dir: str) -> list[perceptual.ConfusionGroup]:
    paths = sorted(Path(groups_dir).glob("*.group.json"))
    if not paths:
        raise FileNotFoundError(f"no *.group.json files in {groups_dir}")
    return [perceptual.load_group(p) for p in paths]


def _cmd_serve(args) -> int:
    groups = _load_groups_dir(args.groups_dir)
    if args.sessions:
        sessions = json.loads(_require_file(args.sessions, "sessions file")
                              .read_text(encoding="utf-8"))
    elif args.tokens:
        patterns = [g.pattern for g in groups]
        sessions = {tok: patterns for tok in args.tokens.split(",") if tok}
    else:
        raise UsageError("serve needs --sessions or --tokens")
    audio_dir = Path(args.audio_dir) if args.audio_dir else Path(args.groups_dir) / "clips"
    svc = service.ListeningService(groups, sessions, args.log, audio_dir)
    server = service.make_server(svc, host=args.host, port=args.port,
                                 static_dir=args.static, quiet=False)
    _log(f"[serve] listening on http://{args.host}:{server.server_address[1]}/ "
         f"({len(groups)} group(s), {len(sessions)} session(s))")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        _log("[serve] stopped")
    finally:
        server.server_close()
    return 0


def _cmd_report(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, cfg)
    groups = _load_groups_dir(args.groups_dir)
    responses = perceptual.read_responses(_require_file(args.log, "response log"))
    with _Stage("report"):
        scores = perceptual.tally(responses, groups)
        written = perceptual.export_report(scores, out, pies=args.pies)
        (out / "scores.json").write_text(
            json.dumps(perceptual.scores_to_json(scores), sort_keys=True, indent=1) + "\n",
            encoding="utf-8")
    _log(f"[report] {len(written) + 1} file(s) -> {out}")
    return 0


_COMMANDS = {
    "featurize": _cmd_featurize,
    "segments": _cmd_segments,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sppg": _cmd_sppg,
    "discover": _cmd_discover,
    "compare-sets": _cmd_compare_sets,
    "groups": _cmd_groups,
    "serve": _cmd_serve,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return 1
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        _log(f"data error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
