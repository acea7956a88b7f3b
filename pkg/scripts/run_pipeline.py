#!/usr/bin/env python3
"""End-to-end seeded experiment: datagen -> train -> index -> attack ->
calibrate -> evaluate, optionally ablation / white-box sweep / benchmarks.

Chains the CLI commands in-process so the run directories and artifacts are
identical to what the command line would produce.

    python scripts/run_pipeline.py --run-root runs [--full]
"""

import argparse
import json
import sys
from pathlib import Path

from hashguard.cli import main as cli
from hashguard.pipeline import PipelineConfig


def newest(root: Path, prefix: str) -> Path:
    candidates = sorted(root.glob(prefix + "-*"), key=lambda p: p.stat().st_mtime)
    if not candidates:
        raise SystemExit(f"no {prefix} run found under {root}")
    return candidates[-1]


def run(argv) -> None:
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"command {' '.join(argv)} failed with exit code {code}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--run-root", default="runs")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the dataset seed (default: pipeline config)")
    parser.add_argument("--full", action="store_true",
                        help="also run ablation, white-box sweep, and benchmarks")
    args = parser.parse_args()

    cfg = PipelineConfig()
    if args.seed is not None:
        cfg.data_seed = args.seed
    root = Path(args.run_root)
    base = ["--run-root", str(root)]

    run(base + ["datagen", "--classes", str(cfg.num_classes),
                "--samples", str(cfg.num_samples), "--seed", str(cfg.data_seed),
                "--noise-sigma", str(cfg.noise_sigma)])
    dataset = newest(root, "datagen") / "dataset.npz"

    run(base + ["train", "--dataset", str(dataset)])
    model = newest(root, "train") / "model.hgnet"

    run(base + ["index", "--dataset", str(dataset), "--model", str(model)])
    db = newest(root, "index") / "database.hgdb"

    attacks = {}
    for name, mode, eps in [("targeted", "targeted", cfg.targeted_epsilon),
                            ("untargeted", "untargeted", cfg.untargeted_epsilon),
                            ("cw", "cw", 1.0)]:
        run(base + ["attack", "--dataset", str(dataset), "--model", str(model),
                    "--db", str(db), "--mode", mode, "--epsilon", str(eps),
                    "--count", str(cfg.attack_count), "--steps",
                    "500" if mode == "cw" else "100"])
        attacks[name] = newest(root, "attack") / "adversarial.npz"

    run(base + ["calibrate", "--dataset", str(dataset), "--model", str(model),
                "--db", str(db), "--alpha", str(cfg.fpr_target)])
    det = newest(root, "calibrate") / "detector.json"

    run(base + ["evaluate", "--dataset", str(dataset), "--model", str(model),
                "--db", str(db), "--detector", str(det)]
        + sum((["--attack", f"{n}={p}"] for n, p in attacks.items()), []))
    eval_dir = newest(root, "evaluate")

    report_dirs = [str(eval_dir)]
    if args.full:
        run(base + ["ablate", "--dataset", str(dataset), "--model", str(model),
                    "--db", str(db), "--detector", str(det),
                    "--attack", f"targeted={attacks['targeted']}",
                    "--attack", f"untargeted={attacks['untargeted']}"])
        report_dirs.append(str(newest(root, "ablate")))
        run(base + ["sweep-whitebox", "--dataset", str(dataset), "--model", str(model),
                    "--db", str(db), "--detector", str(det),
                    "--count", str(cfg.whitebox_count)])
        report_dirs.append(str(newest(root, "sweep-whitebox")))
        run(base + ["bench"])
        report_dirs.append(str(newest(root, "bench")))
        run(base + ["theory", "--K", str(cfg.code_length), "--C", "100",
                    "--sigmas", "3", "--trials", "100000"])
        report_dirs.append(str(newest(root, "theory")))

    run(base + ["report"] + report_dirs)
    report = newest(root, "report") / "report.json"
    with open(report) as fh:
        merged = json.load(fh)
    for run_name, entry in merged["runs"].items():
        if "evaluation" in entry:
            summary = {k: v for k, v in entry["evaluation"].items() if k != "config"}
            print(json.dumps(summary, indent=2))
    print(f"report: {report}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
