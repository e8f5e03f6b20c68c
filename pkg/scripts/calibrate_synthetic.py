#!/usr/bin/env python3
"""Sweep synthetic-corpus operating points for the end-to-end check.

For each candidate geometry/model-width combination, train the reduced
classifier with the standard training recipe and report:

  * pure-phone recognition on held-out segments,
  * the fraction of FRESH blends judged non-categorical for the blend pair,
  * epochs run and wall time.

Use this to pick a point where pure accuracy clears 0.95 and the blend
fraction clears 0.5 with margin across seeds, then freeze those settings.
"""

import argparse
import sys
import time

from sppg.classifier import ModelConfig, TrainConfig, batch_sppg, evaluate, train
from sppg.discovery import DEFAULT_THETA, NON_CATEGORICAL, classify_segment
from sppg.synthetic import SyntheticConfig, build_synthetic


def run_point(separation: float, noise: float, n_train_blends: int,
              widths: tuple[int, int, int], seed: int,
              weight_range: tuple[float, float] = (0.4, 0.6),
              n_train_per_phone: int = 100) -> tuple[float, float, int, float]:
    cfg = SyntheticConfig(separation=separation, noise_scale=noise,
                          n_train_blends=n_train_blends, seed=seed,
                          blend_weight_range=weight_range,
                          n_train_per_phone=n_train_per_phone)
    data = build_synthetic(cfg)
    conv_ch, gru_hidden, dense_units = widths
    mcfg = ModelConfig(conv_channels=conv_ch, gru_hidden=gru_hidden,
                       dense_units=dense_units, inventory_size=3)
    tcfg = TrainConfig(seed=seed)
    t0 = time.monotonic()
    clf, log = train(data.train, data.valid, mcfg, tcfg)
    wall = time.monotonic() - t0

    pure = evaluate(clf, [data.eval_pure]).rows[0][2]
    sppgs = batch_sppg(clf, data.eval_blends)
    target = cfg.blend_pattern
    hits = sum(
        v.kind == NON_CATEGORICAL and v.pattern == target
        for v in (classify_segment(s.segment_id, s.probs, DEFAULT_THETA, cfg.symbols)
                  for s in sppgs)
    )
    return pure, hits / len(sppgs), len(log.epochs), wall


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--separations", type=float, nargs="*", default=[4.0])
    parser.add_argument("--noises", type=float, nargs="*", default=[2.0])
    parser.add_argument("--blend-counts", type=int, nargs="*", default=[33, 66])
    parser.add_argument("--widths", default="8:16:32",
                        help="colon triples conv:gru:dense, comma-separated")
    parser.add_argument("--weight-ranges", default="0.4:0.6",
                        help="colon pairs lo:hi, comma-separated")
    parser.add_argument("--pure-counts", type=int, nargs="*", default=[100])
    parser.add_argument("--seeds", type=int, nargs="*", default=[0, 1])
    args = parser.parse_args(argv)

    width_sets = [tuple(int(x) for x in spec.split(":"))
                  for spec in args.widths.split(",")]
    ranges = [tuple(float(x) for x in spec.split(":"))
              for spec in args.weight_ranges.split(",")]
    print("sep\tnoise\tblends\twidths\twrange\tpure_n\tseed"
          "\tpure_acc\tblend_noncat\tepochs\tseconds")
    for sep in args.separations:
        for noise in args.noises:
            for n_blends in args.blend_counts:
                for widths in width_sets:
                    for wrange in ranges:
                        for pure_n in args.pure_counts:
                            for seed in args.seeds:
                                pure, frac, epochs, wall = run_point(
                                    sep, noise, n_blends, widths, seed,
                                    weight_range=wrange, n_train_per_phone=pure_n)
                                w = ":".join(str(x) for x in widths)
                                r = f"{wrange[0]}:{wrange[1]}"
                                print(f"{sep}\t{noise}\t{n_blends}\t{w}\t{r}\t{pure_n}"
                                      f"\t{seed}\t{pure:.3f}\t{frac:.3f}\t{epochs}"
                                      f"\t{wall:.1f}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
