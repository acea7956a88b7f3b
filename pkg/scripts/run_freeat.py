#!/usr/bin/env python3
"""Adversarial-training comparison: clean and under-attack retrieval quality
for plain training vs minibatch-replay adversarial training at several
replay counts.

    python scripts/run_freeat.py [--replays 2 8 16] [--out freeat.csv]
"""

import argparse
import sys

import numpy as np

from hashguard.attacks import AttackConfig, attack_batch
from hashguard.evaluate import write_csv
from hashguard.pipeline import (
    PipelineConfig,
    attacked_map,
    build_database,
    make_dataset,
    retrieval_map,
    train_pipeline_net,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replays", type=int, nargs="+", default=[2, 8, 16])
    parser.add_argument("--attack-count", type=int, default=200)
    parser.add_argument("--out", default="freeat.csv")
    args = parser.parse_args()

    cfg = PipelineConfig()
    ds = make_dataset(cfg)
    x_q, _ = ds.flat("query")
    rows = []
    for m in [0] + args.replays:
        net = train_pipeline_net(cfg, ds, freeat_replays=m).net
        db = build_database(cfg, ds, net)
        clean = retrieval_map(cfg, db, ds, net)
        pgd = attack_batch(net, x_q[: args.attack_count],
                           AttackConfig.pgd_untargeted(epsilon=cfg.freeat_epsilon))
        robust = attacked_map(cfg, db, ds, pgd)
        rows.append({"replays": m, "clean_map": clean, "pgd100_map": robust})
        print(rows[-1])
    write_csv(rows, args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
