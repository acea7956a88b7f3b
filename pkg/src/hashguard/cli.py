"""Command-line interface.

Every command writes its outputs into a run directory addressed by the hash
of its effective configuration (input files enter the hash by content), so
rerunning an identical command reuses the finished directory.  Exit codes:
0 success, 2 usage error, 3 configuration error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import denoise, detector, evaluate, hamming, model, theory
from .attacks import AttackConfig, attack_batch
from .data import SyntheticDataset, generate_dataset
from .errors import ConfigError, HashGuardError, UsageError
from .pipeline import PipelineConfig

RUN_ROOT_ENV = "HASHGUARD_RUN_ROOT"


def _run_root(args) -> Path:
    if args.run_root:
        return Path(args.run_root)
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(str(path), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _effective_config(command: str, args, input_keys: tuple) -> dict:
    cfg = {k: v for k, v in vars(args).items()
           if k not in ("func", "run_root", "config", "force")}
    cfg["command"] = command
    for key in input_keys:
        value = cfg.get(key)
        if value:
            cfg[f"{key}_sha256"] = _file_digest(value)
    return cfg


def _prepare_run_dir(command: str, args, input_keys: tuple = ()) -> tuple:
    """Content-addressed run directory; returns (dir, config, reused)."""
    cfg = _effective_config(command, args, input_keys)
    digest = hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode()
    ).hexdigest()[:12]
    run_dir = _run_root(args) / f"{command}-{digest}"
    done = run_dir / "DONE"
    if done.exists() and not args.force:
        print(f"reusing finished run {run_dir}")
        return run_dir, cfg, True
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, default=str)
    return run_dir, cfg, False


def _finish(run_dir: Path) -> None:
    (run_dir / "DONE").touch()
    print(f"run directory: {run_dir}")


def _load_npz_inputs(path, key="images"):
    with np.load(str(path)) as data:
        arr = data[key] if key in data.files else data[data.files[0]]
    return np.asarray(arr, dtype=np.float64)


# --- commands ---------------------------------------------------------------


def cmd_datagen(args) -> int:
    run_dir, _, reused = _prepare_run_dir("datagen", args)
    if reused:
        return 0
    ds = generate_dataset(args.classes, args.samples, args.seed,
                          image_size=args.image_size, noise_sigma=args.noise_sigma)
    ds.save(run_dir / "dataset.npz")
    evaluate.write_json(
        {"classes": args.classes, "samples": args.samples, "seed": args.seed,
         "image_size": args.image_size, "noise_sigma": args.noise_sigma,
         "splits": {k: len(v) for k, v in ds.splits.items()}},
        run_dir / "meta.json")
    _finish(run_dir)
    return 0


def cmd_train(args) -> int:
    run_dir, _, reused = _prepare_run_dir("train", args, ("dataset",))
    if reused:
        return 0
    ds = SyntheticDataset.load(args.dataset)
    x, y = ds.flat("train")
    centers = model.generate_hash_centers(ds.num_classes, args.bits,
                                          seed=args.centers_seed)
    net = model.ToyHashNet.create(ds.input_dim, args.hidden, args.bits,
                                  seed=args.net_seed,
                                  init_gains=(args.gain1, args.gain2),
                                  image_shape=ds.image_shape,
                                  smooth_mix=args.smooth_mix)
    cfg = model.TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                            quantization_weight=args.quant_weight,
                            batch_size=args.batch_size, seed=args.seed,
                            freeat_replays=args.freeat_replays,
                            freeat_epsilon=args.freeat_epsilon)
    result = model.train(net, x, y, centers, cfg)
    model.save_net(result.net, run_dir / "model.hgnet")
    model.save_loss_curve(result.loss_curve, run_dir / "loss_curve.csv")
    print(f"final losses: {result.loss_curve[-1]}")
    _finish(run_dir)
    return 0


def cmd_index(args) -> int:
    run_dir, _, reused = _prepare_run_dir("index", args, ("dataset", "model"))
    if reused:
        return 0
    ds = SyntheticDataset.load(args.dataset)
    net = model.load_net(args.model)
    x, y = ds.flat(args.split)
    codes = hamming.pack_signs(model.sign_pm1(model.forward_batch(net, x)).astype(np.int8))
    labels = np.zeros((len(y), ds.num_classes), dtype=bool)
    labels[np.arange(len(y)), y] = True
    db = hamming.CodeDatabase(ds.split_ids(args.split), codes, labels, net.code_length)
    hamming.save_database(db, run_dir / "database.hgdb")
    print(f"indexed {len(db)} items at K={db.code_length}")
    _finish(run_dir)
    return 0


def cmd_attack(args) -> int:
    run_dir, _, reused = _prepare_run_dir("attack", args, ("dataset", "model", "db"))
    if reused:
        return 0
    ds = SyntheticDataset.load(args.dataset)
    net = model.load_net(args.model)
    x, y = ds.flat(args.split)
    n = min(args.count, len(x))
    x = x[:n]
    blur = denoise.Denoiser(denoise.DenoiserSpec(image_shape=ds.image_shape))
    db = hamming.load_database(args.db) if args.db else None

    if args.mode in ("targeted", "whitebox"):
        if db is None:
            raise ConfigError(f"{args.mode} attacks need --db for target selection")
        centers = evaluate.class_consensus_codes(db)
        targets = evaluate.pick_target_classes(y[:n], ds.num_classes, args.seed)

        def cfg_for(code):
            if args.mode == "targeted":
                return AttackConfig.pgd_targeted(code, epsilon=args.epsilon,
                                                 steps=args.steps, step_size=args.step_size)
            return AttackConfig.whitebox(code, args.lambda1, args.lambda2,
                                         epsilon=args.epsilon, steps=args.steps,
                                         step_size=args.step_size)

        examples = evaluate.targeted_attack_batch(net, x, targets, centers, cfg_for,
                                                  denoiser=blur)
    elif args.mode == "untargeted":
        cfg = AttackConfig.pgd_untargeted(epsilon=args.epsilon, steps=args.steps,
                                          step_size=args.step_size)
        examples = attack_batch(net, x, cfg)
    elif args.mode == "cw":
        cfg = AttackConfig.cw_untargeted(steps=args.steps,
                                         learning_rate=args.cw_learning_rate)
        examples = attack_batch(net, x, cfg)
    else:
        raise ConfigError(f"unknown attack mode {args.mode!r}")

    perturbed = np.stack([ex.perturbed for ex in examples])
    success = np.array([ex.success for ex in examples])
    np.savez_compressed(run_dir / "adversarial.npz", images=perturbed.astype(np.float32),
                        success=success, mode=args.mode, epsilon=args.epsilon)
    rows = []
    for i, ex in enumerate(examples):
        row = {"id": i, "mode": args.mode, "epsilon": args.epsilon,
               "steps": args.steps, "lambda1": args.lambda1, "lambda2": args.lambda2,
               "success": bool(ex.success), "linf": ex.linf_norm(), "l2": ex.l2_norm()}
        rows.append(row)
    if db is not None:
        c1, c2, c3 = detector.criteria_batch(db, net, perturbed, args.k, blur)
        for i, row in enumerate(rows):
            row.update(c1=float(c1[i]), c2=float(c2[i]), c3=float(c3[i]))
    with open(run_dir / "attacks.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(f"{args.mode}: {success.mean():.3f} success over {n} examples")
    _finish(run_dir)
    return 0


def cmd_calibrate(args) -> int:
    run_dir, _, reused = _prepare_run_dir("calibrate", args, ("dataset", "model", "db"))
    if reused:
        return 0
    ds = SyntheticDataset.load(args.dataset)
    net = model.load_net(args.model)
    db = hamming.load_database(args.db)
    x, _ = ds.flat(args.split)
    blur = denoise.Denoiser(denoise.DenoiserSpec(image_shape=ds.image_shape))
    if args.allocation == "equal":
        state = detector.calibrate(db, net, x, args.alpha, k=args.k, denoiser=blur,
                                   min_samples=args.min_samples)
    else:
        adv = _load_npz_inputs(args.attack_sample)
        state = detector.calibrate_grid(db, net, x, adv, args.alpha, k=args.k,
                                        denoiser=blur, min_samples=args.min_samples)
    detector.save_state(state, run_dir / "detector.json")
    print(f"thresholds: T1={state.t1:.3f} T2={state.t2:.3f} T3={state.t3:.3f} "
          f"realized FPR={state.realized_fpr:.4f}")
    _finish(run_dir)
    return 0


def cmd_detect(args) -> int:
    net = model.load_net(args.model)
    db = hamming.load_database(args.db)
    state = detector.load_state(args.detector, model.net_fingerprint(net))
    x = _load_npz_inputs(args.input)
    if x.ndim > 2:
        x = x.reshape(len(x), -1)
    rows = x[args.row : args.row + args.rows] if x.ndim == 2 else x[None, :]
    verdicts = detector.detect_batch(state, db, net, rows)
    out = []
    for i, v in enumerate(verdicts):
        out.append({"row": args.row + i, "decision": v.decision,
                    "c1": v.values.c1, "c2": v.values.c2, "c3": v.values.c3,
                    "flags": list(v.flags)})
        print(f"row {args.row + i}: {v.decision} "
              f"(C1={v.values.c1:.2f}, C2={v.values.c2:.2f}, C3={v.values.c3:.2f})")
    if args.output:
        evaluate.write_json(out, args.output)
    return 0


def _load_attack_sets(specs) -> dict:
    out = {}
    for spec in specs or []:
        if "=" not in spec:
            raise ConfigError("--attack expects NAME=FILE.npz")
        name, path = spec.split("=", 1)
        with np.load(path) as data:
            out[name] = (np.asarray(data["images"], dtype=np.float64),
                         np.asarray(data["success"], dtype=bool))
    return out


def cmd_evaluate(args) -> int:
    run_dir, cfg, reused = _prepare_run_dir("evaluate", args,
                                            ("dataset", "model", "db", "detector"))
    if reused:
        return 0
    ds = SyntheticDataset.load(args.dataset)
    net = model.load_net(args.model)
    db = hamming.load_database(args.db)
    state = detector.load_state(args.detector, model.net_fingerprint(net))
    x_h, _ = ds.flat(args.benign_split)
    benign = evaluate.collect_records("benign", state, db, net, x_h)
    attack_recs = {}
    for name, (images, success) in _load_attack_sets(args.attack).items():
        attack_recs[name] = evaluate.collect_records(name, state, db, net,
                                                     images.reshape(len(images), -1),
                                                     success=success)
    summary = evaluate.detection_summary(benign, attack_recs)
    summary["config"] = cfg
    evaluate.write_json(summary, run_dir / "evaluation.json")
    evaluate.save_records_jsonl([benign, *attack_recs.values()],
                                run_dir / "records.jsonl")
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=2))
    _finish(run_dir)
    return 0


def cmd_ablate(args) -> int:
    run_dir, cfg, reused = _prepare_run_dir("ablate", args,
                                            ("dataset", "model", "db", "detector"))
    if reused:
        return 0
    ds = SyntheticDataset.load(args.dataset)
    net = model.load_net(args.model)
    db = hamming.load_database(args.db)
    state = detector.load_state(args.detector, model.net_fingerprint(net))
    x_h, _ = ds.flat(args.benign_split)
    benign = evaluate.collect_records("benign", state, db, net, x_h)
    attack_recs = {}
    for name, (images, success) in _load_attack_sets(args.attack).items():
        attack_recs[name] = evaluate.collect_records(name, state, db, net,
                                                     images.reshape(len(images), -1),
                                                     success=success)
    if not attack_recs:
        raise ConfigError("ablate needs at least one --attack NAME=FILE.npz")
    table = evaluate.run_ablation(benign, attack_recs)
    evaluate.write_csv(table, run_dir / "ablation.csv")
    evaluate.write_json({"table": table, "config": cfg}, run_dir / "ablation.json")
    evaluate.save_records_jsonl([benign, *attack_recs.values()],
                                run_dir / "records.jsonl")
    for row in table:
        print(row)
    _finish(run_dir)
    return 0


def cmd_sweep_whitebox(args) -> int:
    run_dir, cfg, reused = _prepare_run_dir("sweep-whitebox", args,
                                            ("dataset", "model", "db", "detector"))
    if reused:
        return 0
    ds = SyntheticDataset.load(args.dataset)
    net = model.load_net(args.model)
    db = hamming.load_database(args.db)
    state = detector.load_state(args.detector, model.net_fingerprint(net))
    x_h, _ = ds.flat(args.benign_split)
    benign = evaluate.collect_records("benign", state, db, net, x_h)
    x_q, y_q = ds.flat(args.split)
    n = min(args.count, len(x_q))
    centers = evaluate.class_consensus_codes(db)
    targets = evaluate.pick_target_classes(y_q[:n], ds.num_classes, args.seed)
    table = evaluate.run_whitebox_sweep(
        net, db, state, x_q[:n], targets, centers, benign,
        [float(v) for v in args.lambda1.split(",")],
        [float(v) for v in args.lambda2.split(",")],
        epsilon=args.epsilon, steps=args.steps)
    evaluate.write_csv(table, run_dir / "sweep.csv")
    evaluate.write_json({"table": table, "config": cfg}, run_dir / "sweep.json")
    for row in table:
        print(row)
    _finish(run_dir)
    return 0


def cmd_theory(args) -> int:
    m = theory.InterClassDistModel(args.K, args.C)
    lo, hi = theory.untargeted_interval(m, args.sigmas)
    print(f"untargeted {args.sigmas}-sigma interval: [{lo},{hi}] "
          f"(center {m.mean_untargeted:.2f}, p={m.p:.6f})")
    if args.trials:
        run_dir, cfg, reused = _prepare_run_dir("theory", args)
        if reused:
            return 0
        mc = theory.monte_carlo_interclass(args.K, args.C, args.trials, args.seed)
        fit = theory.chi_square_fit(mc["histogram"], m)
        coverage = theory.coverage_check(args.K, args.C, args.sigmas,
                                         args.trials, args.seed)
        rows = [{"distance": d, "count": int(c),
                 "pmf": theory.binomial_pmf(m, d)}
                for d, c in enumerate(mc["histogram"])]
        evaluate.write_csv(rows, run_dir / "histogram.csv")
        evaluate.write_json({
            "model": {"K": args.K, "C": args.C, "p": m.p,
                      "mean_interclass": m.mean_interclass,
                      "mean_untargeted": m.mean_untargeted,
                      "variance": m.variance},
            "interval": [lo, hi], "sigmas": args.sigmas,
            "empirical_mean": mc["mean"], "empirical_variance": mc["variance"],
            "chi_square": fit, "coverage": coverage, "config": cfg,
        }, run_dir / "theory.json")
        print(f"empirical mean {mc['mean']:.3f} (closed form {m.mean_interclass:.3f}); "
              f"chi-square p={fit['p_value']:.4f}; coverage {coverage:.4f}")
        _finish(run_dir)
    return 0


def cmd_bench(args) -> int:
    run_dir, cfg, reused = _prepare_run_dir("bench", args)
    if reused:
        return 0
    rows = []
    for size in [int(s) for s in args.scan_sizes.split(",") if s]:
        db = evaluate.random_database(size, args.bits, 10, seed=0)
        rows.append(dict(evaluate.bench_scan(db, k=args.top_k, reps=args.reps),
                         kind="scan"))
        print(rows[-1])
    latency_rows = []
    if args.batch_sizes:
        db = evaluate.random_database(args.detect_db_size, args.bits, 10, seed=0)
        rng = np.random.default_rng(0)
        net = model.ToyHashNet.create(args.input_dim, 128, args.bits, seed=0)
        pool = rng.random((512, args.input_dim))
        side = int(round((args.input_dim / 3) ** 0.5))
        spec = denoise.DenoiserSpec(image_shape=(side, side, 3))
        state = detector.DetectorState(
            t1=0.0, t2=0.0, t3=0.0, fpr_target=0.05,
            allocation=(0.0166, 0.0166, 0.0166), top_k=args.top_k_detect,
            denoiser_spec=spec, code_length=args.bits,
            model_hash=model.net_fingerprint(net), calibration_size=0,
            realized_fpr=0.0, benign_quantiles={})
        batches = [int(b) for b in args.batch_sizes.split(",")]
        for detect_on in (False, True):
            latency_rows.extend(evaluate.bench_latency(
                db, net, state if detect_on else None, pool, batches,
                k=args.top_k_detect, reps=args.reps))
        for row in latency_rows:
            print(row)
    evaluate.write_csv(rows + latency_rows, run_dir / "timing.csv")
    evaluate.write_json({"scan": rows, "latency": latency_rows, "config": cfg},
                        run_dir / "timing.json")
    _finish(run_dir)
    return 0


def cmd_report(args) -> int:
    run_dir, cfg, reused = _prepare_run_dir("report", args)
    if reused:
        return 0
    merged = {"config": cfg, "runs": {}}
    csv_rows = []
    for path in args.runs:
        p = Path(path)
        entry = {}
        for name in ("config.json", "evaluation.json", "ablation.json",
                     "sweep.json", "theory.json", "timing.json", "meta.json"):
            f = p / name
            if f.exists():
                with open(f) as fh:
                    entry[name.removesuffix(".json")] = json.load(fh)
        merged["runs"][p.name] = entry
        csv_rows.append({"run": p.name, "artifacts": ";".join(sorted(entry))})
    evaluate.write_json(merged, run_dir / "report.json")
    if csv_rows:
        evaluate.write_csv(csv_rows, run_dir / "report.csv")
    print(f"merged {len(csv_rows)} runs")
    _finish(run_dir)
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    defaults = PipelineConfig()
    parser = argparse.ArgumentParser(
        prog="hashguard",
        description="Hamming-space retrieval, attacks, and adversarial detection")
    parser.add_argument("--run-root", default=None,
                        help=f"run directory root (default ${RUN_ROOT_ENV} or ./runs)")
    parser.add_argument("--config", default=None,
                        help="JSON file with defaults for the subcommand flags")
    parser.add_argument("--force", action="store_true",
                        help="recompute even if an identical run is finished")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate the synthetic dataset")
    p.add_argument("--classes", type=int, default=defaults.num_classes)
    p.add_argument("--samples", type=int, default=defaults.num_samples)
    p.add_argument("--seed", type=int, default=defaults.data_seed)
    p.add_argument("--image-size", type=int, default=defaults.image_size)
    p.add_argument("--noise-sigma", type=float, default=defaults.noise_sigma)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train the hashing network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bits", type=int, default=defaults.code_length)
    p.add_argument("--hidden", type=int, default=defaults.hidden_dim)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--quant-weight", type=float, default=defaults.quantization_weight)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--seed", type=int, default=defaults.train_seed)
    p.add_argument("--net-seed", type=int, default=defaults.net_seed)
    p.add_argument("--centers-seed", type=int, default=0)
    p.add_argument("--gain1", type=float, default=defaults.init_gains[0])
    p.add_argument("--gain2", type=float, default=defaults.init_gains[1])
    p.add_argument("--smooth-mix", type=float, default=defaults.smooth_mix)
    p.add_argument("--freeat-replays", type=int, default=0)
    p.add_argument("--freeat-epsilon", type=float, default=defaults.freeat_epsilon)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="hash a split into a code database")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="db")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("attack", help="generate adversarial examples")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--db", default=None,
                   help="database for target selection and criterion values")
    p.add_argument("--mode", default="untargeted",
                   choices=["untargeted", "targeted", "cw", "whitebox"])
    p.add_argument("--epsilon", type=float, default=8.0 / 255.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--step-size", type=float, default=1.0 / 255.0)
    p.add_argument("--cw-learning-rate", type=float, default=0.01)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--count", type=int, default=defaults.attack_count)
    p.add_argument("--split", default="query")
    p.add_argument("--seed", type=int, default=defaults.target_seed)
    p.add_argument("--k", type=int, default=defaults.detector_k)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("calibrate", help="calibrate detection thresholds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--alpha", type=float, default=defaults.fpr_target)
    p.add_argument("--k", type=int, default=defaults.detector_k)
    p.add_argument("--allocation", default="equal", choices=["equal", "grid"])
    p.add_argument("--attack-sample", default=None,
                   help="adversarial npz for grid allocation search")
    p.add_argument("--split", default="calibration")
    p.add_argument("--min-samples", type=int, default=500)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="run the detector on stored inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--input", required=True, help="npz/npy with input images")
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--rows", type=int, default=1)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="detection metrics on attack batches")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--attack", action="append", metavar="NAME=FILE.npz")
    p.add_argument("--benign-split", default="heldout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="criterion-combination ablation table")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--attack", action="append", metavar="NAME=FILE.npz")
    p.add_argument("--benign-split", default="heldout")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-whitebox", help="lambda sweep for the adaptive attack")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--count", type=int, default=defaults.whitebox_count)
    p.add_argument("--lambda1", default=",".join(str(v) for v in defaults.lambda1_grid))
    p.add_argument("--lambda2", default=",".join(str(v) for v in defaults.lambda2_grid))
    p.add_argument("--epsilon", type=float, default=defaults.whitebox_epsilon)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--split", default="query")
    p.add_argument("--benign-split", default="heldout")
    p.add_argument("--seed", type=int, default=defaults.target_seed)
    p.set_defaults(func=cmd_sweep_whitebox)

    p = sub.add_parser("theory", help="closed-form distance law and Monte Carlo fit")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--C", type=int, required=True)
    p.add_argument("--sigmas", type=float, default=3.0)
    p.add_argument("--trials", type=int, default=0,
                   help="Monte Carlo trials (0 = closed form only)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("bench", help="scan and detection latency benchmarks")
    p.add_argument("--scan-sizes", default="1000000")
    p.add_argument("--bits", type=int, default=64)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--batch-sizes", default="1,8,64,256")
    p.add_argument("--detect-db-size", type=int, default=10000)
    p.add_argument("--top-k-detect", type=int, default=10)
    p.add_argument("--input-dim", type=int, default=768)
    p.add_argument("--reps", type=int, default=30)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="merge run artifacts into one report")
    p.add_argument("runs", nargs="+", help="run directories to merge")
    p.set_defaults(func=cmd_report)

    return parser


def _apply_config_file(parser, argv):
    """--config FILE provides per-flag defaults for the chosen subcommand.

    Config flags are appended after the explicit arguments, so anything
    typed on the command line wins.
    """
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = argv[i + 1]
    with open(path) as fh:
        overrides = json.load(fh)
    extra = []
    for key, value in overrides.items():
        flag = "--" + key.replace("_", "-")
        if flag not in argv:
            extra.extend([flag, str(value)])
    return argv + extra


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except HashGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
