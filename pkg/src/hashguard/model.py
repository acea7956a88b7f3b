"""A small differentiable hashing network with explicit gradients.

Two dense layers (D -> hidden -> K): a softplus hidden layer (smooth and
non-saturating, so input gradients stay informative for attack loops) and a
tanh output, so logits live strictly inside (-1,1)^K and their sign is the
K-bit hash code.  Forward and backward passes are written out by hand so
attacks and training need no autodiff framework; everything is
deterministic given the seed.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

from .errors import ConfigError, TrainingDiverged, UsageError
from .hamming import HashCode, pack_signs

_NET_MAGIC = b"HGNET"
_NET_VERSION = 1


def sign_pm1(values: np.ndarray) -> np.ndarray:
    """Sign into {-1,+1}; zeros map to +1 so codes are always well-defined."""
    return np.where(np.asarray(values) >= 0, 1.0, -1.0)


@dataclass
class ToyHashNet:
    """Dense tanh network; weights[i] has shape (fan_out, fan_in)."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ConfigError("weights/biases layer counts differ")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ConfigError("bias length must match layer fan-out")

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, code_length: int, seed: int,
               init_gains: tuple = (32.0, 1.0), input_mean: float = 0.5,
               image_shape: tuple | None = None, smooth_mix: float = 0.0):
        """Seeded Gaussian init.

        Pixel inputs have a large constant background and small per-pixel
        variance, so the first-layer gain restores a useful sensitivity
        scale and the first bias cancels the background mean, keeping units
        in their active range at the start of training.

        With smooth_mix > 0 each first-layer receptive field blends white
        noise with a spatially low-passed copy (variance preserved), giving
        the net smooth sensitive directions alongside broadband ones.
        """
        rng = np.random.default_rng(seed)
        dims = [input_dim, hidden_dim, code_length]
        weights, biases = [], []
        for gain, fan_in, fan_out in zip(init_gains, dims[:-1], dims[1:]):
            scale = gain / np.sqrt(fan_in)
            weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        if smooth_mix > 0.0:
            if image_shape is None:
                raise ConfigError("smooth_mix needs the image shape of the inputs")
            from .denoise import Denoiser, DenoiserSpec

            blur = Denoiser(DenoiserSpec(image_shape=tuple(image_shape)))
            smooth = blur.apply(weights[0])
            smooth *= weights[0].std(axis=1, keepdims=True) / smooth.std(axis=1, keepdims=True)
            weights[0] = (
                np.sqrt(1.0 - smooth_mix**2) * weights[0] + smooth_mix * smooth
            )
        biases[0] = -weights[0].sum(axis=1) * input_mean
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def code_length(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "ToyHashNet":
        return ToyHashNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _activation_derivative(act: np.ndarray, is_output: bool) -> np.ndarray:
    """Derivative from the activation value: tanh' = 1-a^2 at the output,
    softplus' = sigmoid(z) = 1-exp(-a) in hidden layers."""
    if is_output:
        return 1.0 - act**2
    return 1.0 - np.exp(-act)


def forward_batch(net: ToyHashNet, x: np.ndarray, keep: bool = False):
    """Logits for a (B, D) batch; optionally returns activations for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise UsageError(f"expected (B, {net.input_dim}) input, got {x.shape}")
    activations = [x]
    h = x
    last = len(net.weights) - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = np.tanh(z) if layer == last else _softplus(z)
        activations.append(h)
    return (h, activations) if keep else h


def forward(net: ToyHashNet, x: np.ndarray) -> np.ndarray:
    """Logits in (-1,1)^K for a single D-vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise UsageError("forward expects a 1-D input vector")
    return forward_batch(net, x[None, :])[0]


def backward_batch(net: ToyHashNet, activations: list, upstream: np.ndarray):
    """Gradients of sum_b <upstream_b, logits_b> w.r.t. parameters and inputs."""
    upstream = np.asarray(upstream, dtype=np.float64)
    grads_w, grads_b = [None] * len(net.weights), [None] * len(net.weights)
    delta = upstream * _activation_derivative(activations[-1], is_output=True)
    for layer in reversed(range(len(net.weights))):
        grads_w[layer] = delta.T @ activations[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer]) * _activation_derivative(
                activations[layer], is_output=False
            )
        else:
            input_grad = delta @ net.weights[0]
    return grads_w, grads_b, input_grad


def backward(net: ToyHashNet, x: np.ndarray, upstream: np.ndarray):
    """Single-sample gradients of <upstream, logits>; returns (params, input)."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.ndim != 1 or upstream.ndim != 1:
        raise UsageError("backward expects 1-D input and upstream vectors")
    if upstream.shape[0] != net.code_length:
        raise UsageError("upstream length must equal the code length")
    _, acts = forward_batch(net, x[None, :], keep=True)
    gw, gb, gx = backward_batch(net, acts, upstream[None, :])
    return (gw, gb), gx[0]


def input_gradient(net: ToyHashNet, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Batched gradient of sum <upstream, logits> w.r.t. the inputs only."""
    _, acts = forward_batch(net, x, keep=True)
    delta = upstream * _activation_derivative(acts[-1], is_output=True)
    for layer in reversed(range(1, len(net.weights))):
        delta = (delta @ net.weights[layer]) * _activation_derivative(
            acts[layer], is_output=False
        )
    return delta @ net.weights[0]


def quantization_loss(logits: np.ndarray) -> np.ndarray:
    """L1 gap between logits and their binary code, per row."""
    logits = np.asarray(logits, dtype=np.float64)
    return np.abs(sign_pm1(logits) - logits).sum(axis=-1)


# --- hash centers ---------------------------------------------------------


@dataclass(frozen=True)
class HashCenters:
    """One K-bit code per class, pairwise distance >= the construction margin."""

    signs: np.ndarray  # (C, K) in {-1,+1}
    code_length: int

    @property
    def num_classes(self) -> int:
        return self.signs.shape[0]

    @property
    def packed(self) -> np.ndarray:
        return pack_signs(self.signs)

    def code(self, cls: int) -> HashCode:
        return HashCode.from_signs(self.signs[cls])

    def min_pairwise_distance(self) -> int:
        c = self.num_classes
        best = self.code_length
        for i in range(c):
            for j in range(i + 1, c):
                best = min(best, int(np.sum(self.signs[i] != self.signs[j])))
        return best


def _is_sylvester_order(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def generate_hash_centers(
    num_classes: int, code_length: int, min_margin: int | None = None, seed: int = 0
) -> HashCenters:
    """CSQ-style class centers: Hadamard rows when the order allows, else
    rejection-sampled random codes with a pairwise distance margin."""
    c, k = num_classes, code_length
    if c < 2:
        raise ConfigError("need at least 2 classes")
    if k < int(np.ceil(np.log2(c))):
        raise ConfigError(f"K={k} too short to separate {c} classes")
    if min_margin is None:
        min_margin = k // 4
    if _is_sylvester_order(k) and c <= k and k // 2 >= min_margin:
        rows = hadamard(k).astype(np.int8)
        return HashCenters(rows[:c].copy(), k)
    rng = np.random.default_rng(seed)
    if c == 2:
        first = rng.integers(0, 2, size=k).astype(np.int8) * 2 - 1
        return HashCenters(np.stack([first, -first]), k)
    accepted = []
    budget = 20000
    for _ in range(budget):
        cand = rng.integers(0, 2, size=k).astype(np.int8) * 2 - 1
        if all(np.sum(cand != prev) >= min_margin for prev in accepted):
            accepted.append(cand)
            if len(accepted) == c:
                return HashCenters(np.stack(accepted), k)
    raise ConfigError(
        f"could not place {c} centers with margin {min_margin} in {budget} draws"
    )


# --- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 0.15
    quantization_weight: float = 1e-4
    batch_size: int = 50
    seed: int = 0
    freeat_replays: int = 0  # 0 disables adversarial training
    freeat_epsilon: float = 8.0 / 255.0  # L-inf bound, normalized pixels

    def __post_init__(self):
        if self.quantization_weight < 0:
            raise ConfigError("quantization weight must be >= 0")
        if self.freeat_replays < 0:
            raise ConfigError("replay count must be >= 0")


@dataclass
class TrainResult:
    net: ToyHashNet
    loss_curve: list  # rows: (epoch, similarity_loss, quantization_loss, total)


def _loss_and_upstream(logits: np.ndarray, targets: np.ndarray, lam: float):
    """Central-similarity loss plus weighted quantization loss, per batch.

    Similarity term is the soft hamming distance to the class center; the
    binary code inside the quantization term is held constant by the
    gradient (its own derivative is zero almost everywhere).
    """
    k = logits.shape[1]
    sim = 0.5 * (k - np.sum(logits * targets, axis=1))
    codes = sign_pm1(logits)
    quant = np.abs(codes - logits).sum(axis=1)
    upstream = -targets / 2.0 + lam * np.sign(logits - codes)
    return sim, quant, upstream


def _sgd_step(net: ToyHashNet, acts, upstream, batch_size: int, lr: float):
    gw, gb, gx = backward_batch(net, acts, upstream)
    scale = lr / batch_size
    for layer in range(len(net.weights)):
        net.weights[layer] -= scale * gw[layer]
        net.biases[layer] -= scale * gb[layer]
    return gx


def train(
    net: ToyHashNet, x: np.ndarray, y: np.ndarray, centers: HashCenters, cfg: TrainConfig
) -> TrainResult:
    """Minibatch SGD on similarity-to-center plus quantization loss.

    Single-threaded and bit-for-bit reproducible for a fixed seed/config.
    Dispatches to the FreeAT variant when cfg.freeat_replays > 0.
    """
    if cfg.freeat_replays > 0:
        return train_freeat(net, x, y, centers, cfg)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_train_inputs(x, y, centers)
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sim_sum = quant_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, tb = x[idx], centers.signs[y[idx]].astype(np.float64)
            logits, acts = forward_batch(net, xb, keep=True)
            sim, quant, upstream = _loss_and_upstream(logits, tb, cfg.quantization_weight)
            _sgd_step(net, acts, upstream, len(idx), cfg.learning_rate)
            sim_sum += sim.sum()
            quant_sum += quant.sum()
        row = _epoch_row(epoch, sim_sum, quant_sum, n, cfg.quantization_weight)
        curve.append(row)
    return TrainResult(net, curve)


def train_freeat(
    net: ToyHashNet, x: np.ndarray, y: np.ndarray, centers: HashCenters, cfg: TrainConfig
) -> TrainResult:
    """Free adversarial training: each minibatch is replayed m times, updating
    the parameters on the perturbed batch and then taking an epsilon-clipped
    signed ascent step on a persistent perturbation buffer."""
    if cfg.freeat_replays < 1:
        raise ConfigError("train_freeat needs freeat_replays >= 1")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_train_inputs(x, y, centers)
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    eps = cfg.freeat_epsilon
    delta = np.zeros((cfg.batch_size, x.shape[1]))
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sim_sum = quant_sum = 0.0
        count = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, tb = x[idx], centers.signs[y[idx]].astype(np.float64)
            bs = len(idx)
            for _ in range(cfg.freeat_replays):
                x_adv = np.clip(xb + delta[:bs], 0.0, 1.0)
                logits, acts = forward_batch(net, x_adv, keep=True)
                sim, quant, upstream = _loss_and_upstream(
                    logits, tb, cfg.quantization_weight
                )
                gx = _sgd_step(net, acts, upstream, bs, cfg.learning_rate)
                delta[:bs] = np.clip(delta[:bs] + eps * np.sign(gx), -eps, eps)
                sim_sum += sim.sum()
                quant_sum += quant.sum()
                count += bs
        row = _epoch_row(epoch, sim_sum, quant_sum, count, cfg.quantization_weight)
        curve.append(row)
    return TrainResult(net, curve)


def _check_train_inputs(x, y, centers):
    if len(x) == 0:
        raise UsageError("training set is empty")
    if y.min() < 0 or y.max() >= centers.num_classes:
        raise ConfigError("centers do not cover all classes in the dataset")


def _epoch_row(epoch, sim_sum, quant_sum, count, lam):
    sim, quant = sim_sum / count, quant_sum / count
    total = sim + lam * quant
    if not np.isfinite(total):
        raise TrainingDiverged(
            f"loss is not finite at epoch {epoch}: sim={sim}, quant={quant}"
        )
    return (epoch, sim, quant, total)


def hash_query(net: ToyHashNet, x: np.ndarray) -> HashCode:
    """Binary code of a single input: sign of the logits."""
    return HashCode.from_signs(sign_pm1(forward(net, x)).astype(np.int8))


def save_loss_curve(curve, path) -> None:
    with open(str(path), "w") as fh:
        fh.write("epoch,similarity_loss,quantization_loss,total\n")
        for epoch, sim, quant, total in curve:
            fh.write(f"{epoch},{sim:.10g},{quant:.10g},{total:.10g}\n")


# --- HGNET checkpoint format (little-endian) --------------------------------


def serialize_net(net: ToyHashNet) -> bytes:
    buf = io.BytesIO()
    buf.write(_NET_MAGIC)
    dims = [net.input_dim] + [w.shape[0] for w in net.weights]
    buf.write(struct.pack("<II", _NET_VERSION, len(net.weights)))
    buf.write(struct.pack(f"<{len(dims)}I", *dims))
    for w, b in zip(net.weights, net.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def deserialize_net(blob: bytes) -> ToyHashNet:
    if blob[:5] != _NET_MAGIC:
        raise UsageError("not an HGNET checkpoint: bad magic")
    version, n_layers = struct.unpack_from("<II", blob, 5)
    if version != _NET_VERSION:
        raise UsageError(f"unsupported HGNET version {version}")
    dims = struct.unpack_from(f"<{n_layers + 1}I", blob, 13)
    offset = 13 + 4 * (n_layers + 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_out * fan_in, offset=offset)
        offset += 8 * fan_out * fan_in
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
        biases.append(b.astype(np.float64))
    return ToyHashNet(weights, biases)


def save_net(net: ToyHashNet, path) -> None:
    with open(str(path), "wb") as fh:
        fh.write(serialize_net(net))


def load_net(path) -> ToyHashNet:
    with open(str(path), "rb") as fh:
        return deserialize_net(fh.read())


def net_fingerprint(net: ToyHashNet) -> str:
    """SHA-256 of the serialized checkpoint; binds detector calibrations."""
    return hashlib.sha256(serialize_net(net)).hexdigest()
