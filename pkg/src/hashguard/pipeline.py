"""Canonical desk-scale experiment: one seeded configuration shared by the
CLI, the experiment scripts, and the acceptance suite.

The constants here were tuned once so that the full train/attack/detect
pipeline exhibits the phenomena under study with stable margins; they are
the package defaults, not per-run knobs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .attacks import AttackConfig, attack_batch
from .data import SyntheticDataset, generate_dataset
from .denoise import Denoiser, DenoiserSpec
from .detector import DetectorState, calibrate
from .evaluate import (
    class_consensus_codes,
    collect_records,
    pick_target_classes,
    records_from_examples,
    targeted_attack_batch,
)
from .hamming import CodeDatabase, HashCode, mean_average_precision, pack_signs
from .model import (
    HashCenters,
    ToyHashNet,
    TrainConfig,
    TrainResult,
    forward_batch,
    generate_hash_centers,
    sign_pm1,
    train,
)


@dataclass
class PipelineConfig:
    num_classes: int = 10
    num_samples: int = 5000
    code_length: int = 64
    hidden_dim: int = 128
    image_size: int = 16
    noise_sigma: float = 0.03
    init_gains: tuple = (40.0, 1.0)
    smooth_mix: float = 0.2
    epochs: int = 3
    learning_rate: float = 0.005
    batch_size: int = 50
    quantization_weight: float = 1e-4
    map_k: int = 100
    detector_k: int = 10
    fpr_target: float = 0.05
    attack_count: int = 200
    targeted_epsilon: float = 8.0 / 255.0
    untargeted_epsilon: float = 32.0 / 255.0
    ablation_epsilon: float = 32.0 / 255.0
    whitebox_count: int = 96
    whitebox_epsilon: float = 32.0 / 255.0
    lambda1_grid: tuple = (0.0, 1e-3, 3e-3, 7.5e-3, 1e-2, 3e-2)
    lambda2_grid: tuple = (0.3, 3.0)
    freeat_epochs: int = 10
    freeat_learning_rate: float = 0.01
    freeat_epsilon: float = 8.0 / 255.0
    data_seed: int = 0
    net_seed: int = 1
    train_seed: int = 2
    target_seed: int = 11

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_gains"] = list(self.init_gains)
        d["lambda1_grid"] = list(self.lambda1_grid)
        d["lambda2_grid"] = list(self.lambda2_grid)
        return d


def make_dataset(cfg: PipelineConfig) -> SyntheticDataset:
    return generate_dataset(cfg.num_classes, cfg.num_samples, cfg.data_seed,
                            image_size=cfg.image_size, noise_sigma=cfg.noise_sigma)


def make_net(cfg: PipelineConfig, ds: SyntheticDataset) -> ToyHashNet:
    return ToyHashNet.create(ds.input_dim, cfg.hidden_dim, cfg.code_length,
                             seed=cfg.net_seed, init_gains=cfg.init_gains,
                             image_shape=ds.image_shape, smooth_mix=cfg.smooth_mix)


def train_config(cfg: PipelineConfig, freeat_replays: int = 0) -> TrainConfig:
    if freeat_replays > 0:
        return TrainConfig(epochs=cfg.freeat_epochs, learning_rate=cfg.freeat_learning_rate,
                           quantization_weight=cfg.quantization_weight,
                           batch_size=cfg.batch_size, seed=cfg.train_seed,
                           freeat_replays=freeat_replays, freeat_epsilon=cfg.freeat_epsilon)
    return TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                       quantization_weight=cfg.quantization_weight,
                       batch_size=cfg.batch_size, seed=cfg.train_seed)


def train_pipeline_net(cfg: PipelineConfig, ds: SyntheticDataset,
                       freeat_replays: int = 0) -> TrainResult:
    x, y = ds.flat("train")
    centers = generate_hash_centers(cfg.num_classes, cfg.code_length)
    return train(make_net(cfg, ds), x, y, centers, train_config(cfg, freeat_replays))


def build_database(cfg: PipelineConfig, ds: SyntheticDataset, net: ToyHashNet,
                   split: str = "db") -> CodeDatabase:
    x, y = ds.flat(split)
    codes = pack_signs(sign_pm1(forward_batch(net, x)).astype(np.int8))
    labels = np.zeros((len(y), cfg.num_classes), dtype=bool)
    labels[np.arange(len(y)), y] = True
    return CodeDatabase(ds.split_ids(split), codes, labels, cfg.code_length)


def query_codes(ds: SyntheticDataset, net: ToyHashNet, split: str = "query") -> list:
    x, y = ds.flat(split)
    logits = forward_batch(net, x)
    out = []
    for i in range(len(x)):
        label = np.zeros(ds.num_classes, dtype=bool)
        label[y[i]] = True
        out.append((HashCode.from_signs(sign_pm1(logits[i]).astype(np.int8)), label))
    return out


def retrieval_map(cfg: PipelineConfig, db: CodeDatabase, ds: SyntheticDataset,
                  net: ToyHashNet, split: str = "query") -> float:
    return mean_average_precision(db, query_codes(ds, net, split), cfg.map_k)


def attacked_map(cfg: PipelineConfig, db: CodeDatabase, ds: SyntheticDataset,
                 examples: list, split: str = "query") -> float:
    _, y = ds.flat(split)
    queries = []
    for i, ex in enumerate(examples):
        label = np.zeros(ds.num_classes, dtype=bool)
        label[y[i]] = True
        queries.append((ex.final_code, label))
    return mean_average_precision(db, queries, cfg.map_k)


def pipeline_denoiser(cfg: PipelineConfig, ds: SyntheticDataset) -> Denoiser:
    return Denoiser(DenoiserSpec(image_shape=ds.image_shape))


def calibrate_pipeline(cfg: PipelineConfig, db: CodeDatabase, ds: SyntheticDataset,
                       net: ToyHashNet) -> DetectorState:
    x_cal, _ = ds.flat("calibration")
    return calibrate(db, net, x_cal, cfg.fpr_target, k=cfg.detector_k,
                     denoiser=pipeline_denoiser(cfg, ds))


def standard_attacks(cfg: PipelineConfig, ds: SyntheticDataset, net: ToyHashNet,
                     db: CodeDatabase) -> dict:
    """The gray-box attack batches the evaluation and ablation are run on."""
    x_q, y_q = ds.flat("query")
    n = min(cfg.attack_count, len(x_q))
    consensus = class_consensus_codes(db)
    targets = pick_target_classes(y_q[:n], cfg.num_classes, cfg.target_seed)
    batches = {
        "targeted": targeted_attack_batch(
            net, x_q[:n], targets, consensus,
            lambda code: AttackConfig.pgd_targeted(code, epsilon=cfg.targeted_epsilon)),
        "untargeted": attack_batch(
            net, x_q[:n], AttackConfig.pgd_untargeted(epsilon=cfg.untargeted_epsilon)),
        "cw": attack_batch(net, x_q[:n], AttackConfig.cw_untargeted()),
        "targeted_deep": targeted_attack_batch(
            net, x_q[:n], targets, consensus,
            lambda code: AttackConfig.pgd_targeted(code, epsilon=cfg.ablation_epsilon)),
    }
    return batches


def standard_records(cfg: PipelineConfig, ds: SyntheticDataset, net: ToyHashNet,
                     db: CodeDatabase, state: DetectorState, batches: dict):
    x_h, _ = ds.flat("heldout")
    benign = collect_records("benign_heldout", state, db, net, x_h)
    attack_recs = {
        name: records_from_examples(name, state, db, net, examples)
        for name, examples in batches.items()
    }
    return benign, attack_recs
