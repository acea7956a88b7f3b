"""Unsupervised three-criteria detection of adversarial queries.

Criterion 1 is the average hamming distance of the top-k retrieval results
(untargeted adversaries land far from every class), criterion 2 the L1
quantization loss of the logits (targeted attacks drive it to zero), and
criterion 3 the soft hamming disagreement between an input and its denoised
copy.  Thresholds are empirical quantiles of benign criterion values; an
input is benign only if all three criteria look benign, so the per-criterion
false-positive budgets add up under a union bound.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .denoise import Denoiser, DenoiserSpec
from .errors import CalibrationMismatch, ConfigError, UsageError
from .hamming import CodeDatabase, HashCode, batch_distances, pack_signs, top_k
from .model import ToyHashNet, forward_batch, net_fingerprint, quantization_loss, sign_pm1

_QUANTILE_GRID = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)


@dataclass(frozen=True)
class CriterionValues:
    c1: float  # average top-k hamming distance, in bits
    c2: float  # L1 quantization loss
    c3: float  # soft hamming distance between original and denoised logits


@dataclass(frozen=True)
class Verdict:
    values: CriterionValues
    c1_fired: bool
    c2_fired: bool
    c3_fired: bool

    @property
    def flags(self) -> tuple:
        return (self.c1_fired, self.c2_fired, self.c3_fired)

    @property
    def is_adversarial(self) -> bool:
        return any(self.flags)

    @property
    def decision(self) -> str:
        return "adversarial" if self.is_adversarial else "benign"


@dataclass(frozen=True)
class DetectorState:
    """Calibrated thresholds plus the configuration they were computed under.

    t1 and t3 are upper bounds (benign stays below), t2 a lower bound
    (benign stays above).  Immutable; safe for concurrent detect calls.
    """

    t1: float
    t2: float
    t3: float
    fpr_target: float
    allocation: tuple  # (alpha1, alpha2, alpha3)
    top_k: int
    denoiser_spec: DenoiserSpec
    code_length: int
    model_hash: str
    calibration_size: int
    realized_fpr: float
    benign_quantiles: dict

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "thresholds": {"t1": self.t1, "t2": self.t2, "t3": self.t3},
            "fpr_target": self.fpr_target,
            "allocation": list(self.allocation),
            "top_k": self.top_k,
            "denoiser": self.denoiser_spec.to_dict(),
            "code_length": self.code_length,
            "model_hash": self.model_hash,
            "calibration_size": self.calibration_size,
            "realized_fpr": self.realized_fpr,
            "benign_quantiles": self.benign_quantiles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorState":
        t = d["thresholds"]
        return cls(
            t["t1"], t["t2"], t["t3"], d["fpr_target"], tuple(d["allocation"]),
            d["top_k"], DenoiserSpec.from_dict(d["denoiser"]), d["code_length"],
            d["model_hash"], d["calibration_size"], d["realized_fpr"],
            d["benign_quantiles"],
        )


def criterion1(db: CodeDatabase, q: HashCode, k: int) -> float:
    """Mean integer hamming distance of the k nearest database codes."""
    result = top_k(db, q, k)
    return float(np.mean(result.distances))


def criterion2(logits: np.ndarray) -> float:
    """L1 gap between the logits and their sign code (zeros count as +1)."""
    return float(quantization_loss(np.asarray(logits, dtype=np.float64)))


def criterion3(net: ToyHashNet, x: np.ndarray, denoiser: Denoiser) -> float:
    """Soft hamming distance between the logits of x and of its denoised copy.

    Uses the quadratic relaxation |u-v|^2/4, which is zero for identical
    logits (so an identity transform scores 0) and equals the integer
    distance on saturated logits.
    """
    x = np.asarray(x, dtype=np.float64)
    logits, logits_t = forward_batch(net, np.stack([x, denoiser.apply(x)]))
    diff = logits - logits_t
    return float(0.25 * (diff @ diff))


def criteria_batch(db: CodeDatabase, net: ToyHashNet, x: np.ndarray, k: int,
                   denoiser: Denoiser):
    """All three criterion values for a (B, D) batch.

    The original and denoised inputs share one fused forward pass; fusion is
    an optimization only and never changes the values.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise UsageError("criteria_batch expects a (B, D) batch")
    if k > len(db):
        raise UsageError(f"k={k} exceeds database size {len(db)}")
    n = len(x)
    fused = forward_batch(net, np.concatenate([x, denoiser.apply(x)], axis=0))
    logits, logits_t = fused[:n], fused[n:]
    c2 = quantization_loss(logits)
    c3 = 0.25 * np.sum((logits - logits_t) ** 2, axis=1)
    c1 = np.empty(n)
    words = pack_signs(sign_pm1(logits).astype(np.int8))
    for start in range(0, n, 128):  # chunk to bound the distance matrix
        dist = batch_distances(db.codes, words[start : start + 128])
        if k < dist.shape[1]:
            c1[start : start + 128] = np.partition(dist, k - 1, axis=1)[:, :k].mean(axis=1)
        else:
            c1[start : start + 128] = dist.mean(axis=1)
    return c1, c2, c3


def _upper_threshold(values: np.ndarray, alpha: float) -> float:
    """Smallest order statistic leaving at most alpha mass strictly above."""
    v = np.sort(values)
    n = len(v)
    idx = min(max(math.ceil(n * (1.0 - alpha)), 1), n) - 1
    return float(v[idx])


def _lower_threshold(values: np.ndarray, alpha: float) -> float:
    """Largest order statistic leaving at most alpha mass strictly below."""
    v = np.sort(values)
    n = len(v)
    idx = min(int(math.floor(n * alpha)), n - 1)
    return float(v[idx])


def _flags_from_thresholds(c1, c2, c3, t1, t2, t3):
    """Benign iff c1 <= t1 and c2 >= t2 and c3 <= t3; flags are violations."""
    return c1 > t1, c2 < t2, c3 > t3


def _realized_fpr(c1, c2, c3, t1, t2, t3) -> float:
    f1, f2, f3 = _flags_from_thresholds(c1, c2, c3, t1, t2, t3)
    return float(np.mean(f1 | f2 | f3))


def calibrate(db: CodeDatabase, net: ToyHashNet, benign_x: np.ndarray, alpha: float,
              allocation: tuple | None = None, k: int = 10,
              denoiser: Denoiser | None = None, min_samples: int = 500) -> DetectorState:
    """Thresholds as empirical quantiles of benign criterion values.

    The default allocation splits alpha equally across the three criteria,
    which bounds the joint calibration-set FPR by alpha (union bound).
    """
    benign_x = np.asarray(benign_x, dtype=np.float64)
    if len(benign_x) < min_samples:
        raise ConfigError(
            f"calibration needs at least {min_samples} benign samples, got {len(benign_x)}"
        )
    if alpha < 0 or alpha >= 1:
        raise ConfigError("fpr target must lie in [0, 1)")
    if denoiser is None:
        raise UsageError("calibrate needs the denoiser the detector will use")
    if allocation is None:
        allocation = (alpha / 3.0, alpha / 3.0, alpha / 3.0)
    if len(allocation) != 3 or any(a < 0 for a in allocation):
        raise ConfigError("allocation must be three non-negative budgets")
    if sum(allocation) > alpha + 1e-12:
        raise ConfigError("allocation budgets exceed the total fpr target")
    c1, c2, c3 = criteria_batch(db, net, benign_x, k, denoiser)
    t1 = _upper_threshold(c1, allocation[0])
    t2 = _lower_threshold(c2, allocation[1])
    t3 = _upper_threshold(c3, allocation[2])
    quantiles = {
        name: {str(q): float(np.quantile(vals, q)) for q in _QUANTILE_GRID}
        for name, vals in (("c1", c1), ("c2", c2), ("c3", c3))
    }
    return DetectorState(
        t1=t1, t2=t2, t3=t3, fpr_target=alpha, allocation=tuple(allocation),
        top_k=k, denoiser_spec=denoiser.spec, code_length=net.code_length,
        model_hash=net_fingerprint(net), calibration_size=len(benign_x),
        realized_fpr=_realized_fpr(c1, c2, c3, t1, t2, t3),
        benign_quantiles=quantiles,
    )


def calibrate_grid(db: CodeDatabase, net: ToyHashNet, benign_x: np.ndarray,
                   attack_x: np.ndarray, alpha: float, k: int = 10,
                   denoiser: Denoiser | None = None, grid_steps: int = 10,
                   min_samples: int = 500) -> DetectorState:
    """Joint allocation search: maximize TPR on a synthetic attack sample
    subject to the calibration-set FPR staying within alpha."""
    if denoiser is None:
        raise UsageError("calibrate_grid needs the denoiser the detector will use")
    benign_x = np.asarray(benign_x, dtype=np.float64)
    if len(benign_x) < min_samples:
        raise ConfigError(
            f"calibration needs at least {min_samples} benign samples, got {len(benign_x)}"
        )
    b1, b2, b3 = criteria_batch(db, net, benign_x, k, denoiser)
    a1, a2, a3 = criteria_batch(db, net, np.asarray(attack_x, dtype=np.float64), k, denoiser)
    best = None
    fractions = [i / grid_steps for i in range(grid_steps + 1)]
    for f1, f2 in itertools.product(fractions, fractions):
        if f1 + f2 > 1.0 + 1e-12:
            continue
        alloc = (alpha * f1, alpha * f2, alpha * (1.0 - f1 - f2))
        t1 = _upper_threshold(b1, alloc[0])
        t2 = _lower_threshold(b2, alloc[1])
        t3 = _upper_threshold(b3, alloc[2])
        fpr = _realized_fpr(b1, b2, b3, t1, t2, t3)
        if fpr > alpha:
            continue
        g1, g2, g3 = _flags_from_thresholds(a1, a2, a3, t1, t2, t3)
        tpr = float(np.mean(g1 | g2 | g3))
        key = (tpr, -fpr)
        if best is None or key > best[0]:
            best = (key, alloc, (t1, t2, t3), fpr)
    if best is None:
        raise ConfigError("no allocation satisfied the fpr target")
    _, alloc, (t1, t2, t3), fpr = best
    quantiles = {
        name: {str(q): float(np.quantile(vals, q)) for q in _QUANTILE_GRID}
        for name, vals in (("c1", b1), ("c2", b2), ("c3", b3))
    }
    return DetectorState(
        t1=t1, t2=t2, t3=t3, fpr_target=alpha, allocation=tuple(alloc),
        top_k=k, denoiser_spec=denoiser.spec, code_length=net.code_length,
        model_hash=net_fingerprint(net), calibration_size=len(benign_x),
        realized_fpr=fpr, benign_quantiles=quantiles,
    )


def _check_state(state: DetectorState, net: ToyHashNet):
    if state.code_length != net.code_length:
        raise CalibrationMismatch(
            f"detector calibrated for K={state.code_length}, net has K={net.code_length}"
        )
    if state.model_hash != net_fingerprint(net):
        raise CalibrationMismatch("detector was calibrated against a different model")


def detect(state: DetectorState, db: CodeDatabase, net: ToyHashNet,
           x: np.ndarray) -> Verdict:
    """Verdict for one input; all three criteria are always computed."""
    return detect_batch(state, db, net, np.asarray(x)[None, :])[0]


def detect_batch(state: DetectorState, db: CodeDatabase, net: ToyHashNet,
                 x: np.ndarray) -> list:
    _check_state(state, net)
    denoiser = Denoiser(state.denoiser_spec)
    c1, c2, c3 = criteria_batch(db, net, x, state.top_k, denoiser)
    f1, f2, f3 = _flags_from_thresholds(c1, c2, c3, state.t1, state.t2, state.t3)
    return [
        Verdict(CriterionValues(float(c1[i]), float(c2[i]), float(c3[i])),
                bool(f1[i]), bool(f2[i]), bool(f3[i]))
        for i in range(len(x))
    ]


def save_state(state: DetectorState, path) -> None:
    with open(str(path), "w") as fh:
        json.dump(state.to_dict(), fh, indent=2)


def load_state(path, expected_model_hash: str | None = None) -> DetectorState:
    with open(str(path)) as fh:
        state = DetectorState.from_dict(json.load(fh))
    if expected_model_hash is not None and state.model_hash != expected_model_hash:
        raise CalibrationMismatch(
            "calibration artifact does not match the supplied model checkpoint"
        )
    return state
