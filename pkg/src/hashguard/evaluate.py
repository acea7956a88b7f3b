"""End-to-end evaluation: detection metrics, ablations, sweeps, timing.

Every aggregate number is computed from per-example records that are also
written to disk (JSON lines), so reports can be re-derived from raw data.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .attacks import AdversarialExample, AttackConfig, attack_batch
from .denoise import Denoiser
from .detector import DetectorState, _flags_from_thresholds, criteria_batch
from .errors import UsageError
from .hamming import CodeDatabase, HashCode, top_k
from .metrics import compute_roc
from .model import HashCenters, ToyHashNet, forward_batch, sign_pm1

CRITERION_COMBOS = ((3,), (1, 3), (2, 3), (1, 2, 3))


def pick_target_classes(labels: np.ndarray, num_classes: int, seed: int) -> np.ndarray:
    """A random class different from each query's own, reproducibly."""
    rng = np.random.default_rng(seed)
    offsets = rng.integers(1, num_classes, size=len(labels))
    return (labels + offsets) % num_classes


def class_consensus_codes(db: CodeDatabase) -> HashCenters:
    """Per-class consensus code: majority vote over the database codes.

    Attacking toward a consensus lands the adversarial code inside the
    class's occupied neighborhood rather than at the abstract training
    center, matching how anchor codes are picked in targeted attacks.
    """
    from .hamming import unpack_words

    c = db.num_classes
    signs = np.empty((c, db.code_length), dtype=np.int8)
    all_signs = unpack_words(db.codes, db.code_length).astype(np.int32)
    for cls in range(c):
        members = db.labels[:, cls]
        if not members.any():
            raise UsageError(f"database has no items of class {cls}")
        signs[cls] = np.where(all_signs[members].sum(axis=0) >= 0, 1, -1)
    return HashCenters(signs, db.code_length)


def targeted_attack_batch(net: ToyHashNet, x: np.ndarray, target_classes: np.ndarray,
                          centers: HashCenters, cfg_for: callable,
                          denoiser: Denoiser | None = None) -> list:
    """Run per-target-class attacks, preserving query order.

    cfg_for(target_code) builds the AttackConfig for one target class.
    """
    out = [None] * len(x)
    for cls in np.unique(target_classes):
        rows = np.flatnonzero(target_classes == cls)
        cfg = cfg_for(centers.code(int(cls)))
        for row, ex in zip(rows, attack_batch(net, x[rows], cfg, denoiser=denoiser)):
            out[row] = ex
    return out


@dataclass
class CriterionRecords:
    """Per-example criterion values, flags, and provenance for one sample set."""

    name: str
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    flags: np.ndarray  # (N, 3) bool
    success: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def flagged(self) -> np.ndarray:
        return self.flags.any(axis=1)

    def rows(self):
        for i in range(len(self.c1)):
            row = {
                "set": self.name,
                "id": i,
                "c1": float(self.c1[i]),
                "c2": float(self.c2[i]),
                "c3": float(self.c3[i]),
                "c1_fired": bool(self.flags[i, 0]),
                "c2_fired": bool(self.flags[i, 1]),
                "c3_fired": bool(self.flags[i, 2]),
                "decision": "adversarial" if self.flags[i].any() else "benign",
            }
            if self.success is not None:
                row["attack_success"] = bool(self.success[i])
            for key, values in self.extra.items():
                row[key] = values[i]
            yield row


def collect_records(name: str, state: DetectorState, db: CodeDatabase, net: ToyHashNet,
                    x: np.ndarray, success: np.ndarray | None = None,
                    extra: dict | None = None) -> CriterionRecords:
    denoiser = Denoiser(state.denoiser_spec)
    c1, c2, c3 = criteria_batch(db, net, x, state.top_k, denoiser)
    f1, f2, f3 = _flags_from_thresholds(c1, c2, c3, state.t1, state.t2, state.t3)
    return CriterionRecords(name, c1, c2, c3, np.stack([f1, f2, f3], axis=1),
                            success=success, extra=extra or {})


def records_from_examples(name: str, state: DetectorState, db: CodeDatabase,
                          net: ToyHashNet, examples: list) -> CriterionRecords:
    x = np.stack([ex.perturbed for ex in examples])
    success = np.array([ex.success for ex in examples])
    extra = {
        "linf": [float(ex.linf_norm()) for ex in examples],
        "l2": [float(ex.l2_norm()) for ex in examples],
        "mode": [ex.mode for ex in examples],
    }
    return collect_records(name, state, db, net, x, success=success, extra=extra)


def save_records_jsonl(records: list, path) -> None:
    with open(str(path), "w") as fh:
        for rec in records:
            for row in rec.rows():
                fh.write(json.dumps(row) + "\n")


def combo_detection_rate(rec: CriterionRecords, combo: tuple) -> float:
    """Fraction flagged when only the given criteria participate in the OR.

    Thresholds stay fixed across combinations, so adding a criterion can
    only increase the rate.
    """
    mask = np.zeros(len(rec.c1), dtype=bool)
    for criterion in combo:
        mask |= rec.flags[:, criterion - 1]
    return float(np.mean(mask))


def detection_summary(benign: CriterionRecords, attacks: dict) -> dict:
    """TPR/FNR at the calibrated thresholds plus per-criterion AUC."""
    out = {
        "benign_fpr": float(np.mean(benign.flagged)),
        "benign_count": len(benign.c1),
        "attacks": {},
    }
    for name, rec in attacks.items():
        tpr = float(np.mean(rec.flagged))
        entry = {
            "count": len(rec.c1),
            "tpr": tpr,
            "fnr": 1.0 - tpr,
            "auc_c1": compute_roc(benign.c1, rec.c1, "high").auc,
            "auc_c2": compute_roc(benign.c2, rec.c2, "low").auc,
            "auc_c3": compute_roc(benign.c3, rec.c3, "high").auc,
        }
        if rec.success is not None:
            entry["attack_success_rate"] = float(np.mean(rec.success))
        out["attacks"][name] = entry
    return out


def run_ablation(benign: CriterionRecords, attacks: dict) -> list:
    """Detection rate per criterion combination per attack set."""
    table = []
    for combo in CRITERION_COMBOS:
        row = {"combo": "+".join(f"C{c}" for c in combo)}
        row["benign_fpr"] = combo_detection_rate(benign, combo)
        for name, rec in attacks.items():
            row[name] = combo_detection_rate(rec, combo)
        table.append(row)
    return table


def ablation_gains(table: list, attack_name: str) -> dict:
    """Marginal detection-rate gains of adding C1 or C2 on top of C3."""
    rates = {row["combo"]: row[attack_name] for row in table}
    return {
        "c1_gain": rates["C1+C3"] - rates["C3"],
        "c2_gain": rates["C2+C3"] - rates["C3"],
        "combined_gain": rates["C1+C2+C3"] - rates["C3"],
    }


def run_whitebox_sweep(net: ToyHashNet, db: CodeDatabase, state: DetectorState,
                       x: np.ndarray, target_classes: np.ndarray, centers: HashCenters,
                       benign: CriterionRecords, lambda1_list, lambda2_list,
                       epsilon: float = 32.0 / 255.0, steps: int = 100) -> list:
    """Attack success/detection/AUC per (lambda1, lambda2) pair."""
    denoiser = Denoiser(state.denoiser_spec)
    table = []
    for lam2 in lambda2_list:
        for lam1 in lambda1_list:
            examples = targeted_attack_batch(
                net, x, target_classes, centers,
                lambda code: AttackConfig.whitebox(code, lam1, lam2,
                                                   epsilon=epsilon, steps=steps),
                denoiser=denoiser,
            )
            rec = records_from_examples(f"whitebox_l1={lam1}_l2={lam2}",
                                        state, db, net, examples)
            table.append({
                "lambda1": lam1,
                "lambda2": lam2,
                "success_rate": float(np.mean(rec.success)),
                "detection_rate": float(np.mean(rec.flagged)),
                "auc_c1": compute_roc(benign.c1, rec.c1, "high").auc,
                "auc_c2": compute_roc(benign.c2, rec.c2, "low").auc,
                "auc_c3": compute_roc(benign.c3, rec.c3, "high").auc,
            })
    return table


# --- timing -----------------------------------------------------------------


def _median_time(fn, warmups: int = 5, reps: int = 30) -> float:
    for _ in range(warmups):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def random_database(size: int, code_length: int, num_classes: int, seed: int) -> CodeDatabase:
    rng = np.random.default_rng(seed)
    words = (code_length + 63) // 64
    codes = rng.integers(0, 2**63, size=(size, words), dtype=np.int64).astype(np.uint64)
    labels = np.zeros((size, num_classes), dtype=bool)
    labels[np.arange(size), rng.integers(0, num_classes, size)] = True
    return CodeDatabase(np.arange(size, dtype=np.uint64), codes, labels, code_length)


def bench_scan(db: CodeDatabase, k: int = 100, reps: int = 30, seed: int = 0) -> dict:
    """Median wall time of a full top-k scan over the database."""
    rng = np.random.default_rng(seed)
    q = HashCode.random(db.code_length, rng)
    med = _median_time(lambda: top_k(db, q, k), reps=reps)
    return {"db_size": len(db), "top_k": k, "median_seconds": med}


def bench_latency(db: CodeDatabase, net: ToyHashNet, state: DetectorState | None,
                  x_pool: np.ndarray, batch_sizes, k: int = 10,
                  reps: int = 30, seed: int = 0) -> list:
    """Per-sample and per-batch query latency, with or without detection.

    The pipeline per batch: one forward pass hashing all queries (fused with
    their denoised copies when the detector is on), one fused top-k scan over
    the batch, and criterion checks when the detector is on.
    """
    from .hamming import pack_signs, top_k_batch

    denoiser = Denoiser(state.denoiser_spec) if state is not None else None
    rng = np.random.default_rng(seed)
    rows = []
    for bs in batch_sizes:
        idx = rng.integers(0, len(x_pool), size=bs)
        batch = x_pool[idx]

        def run_batch():
            if state is None:
                logits = forward_batch(net, batch)
                words = pack_signs(sign_pm1(logits).astype(np.int8))
                top_k_batch(db, words, k)
            else:
                fused = forward_batch(net, np.concatenate([batch, denoiser.apply(batch)]))
                logits, logits_t = fused[:bs], fused[bs:]
                c2 = np.abs(sign_pm1(logits) - logits).sum(axis=1)
                c3 = 0.25 * np.sum((logits - logits_t) ** 2, axis=1)
                words = pack_signs(sign_pm1(logits).astype(np.int8))
                results = top_k_batch(db, words, k)
                for i, result in enumerate(results):
                    c1 = float(np.mean(result.distances))
                    _ = (c1 > state.t1) or (c2[i] < state.t2) or (c3[i] > state.t3)

        med = _median_time(run_batch, reps=reps)
        rows.append({
            "db_size": len(db),
            "batch_size": bs,
            "detector": state is not None,
            "per_batch_seconds": med,
            "per_sample_seconds": med / bs,
        })
    return rows


# --- report ------------------------------------------------------------------


def write_csv(rows: list, path) -> None:
    if not rows:
        raise UsageError("no rows to write")
    keys = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(str(path), "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(str(row.get(k, "")) for k in keys) + "\n")


def write_json(obj, path) -> None:
    with open(str(path), "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")
