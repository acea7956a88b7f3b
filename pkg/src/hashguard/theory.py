"""Distance distribution of an ideal untargeted adversary.

With C perfectly compact classes in K-bit hamming space, the inter-class
distance is Binomial(K, p) with p = C/(2(C-1)); an adversary that flips all
bits of its own code sits at K minus that distance from every other class,
which for large K is approximately Gaussian with mean K(1-p) and variance
Kp(1-p).  Monte-Carlo sampling of the balanced per-bit construction checks
the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import chisquare

from .errors import ConfigError, UsageError


@dataclass(frozen=True)
class InterClassDistModel:
    """Closed-form parameters for the ideal inter-class distance law."""

    code_length: int
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.code_length < 1:
            raise ConfigError("code length must be positive")

    @property
    def p(self) -> float:
        c = self.num_classes
        return c / (2.0 * (c - 1))

    @property
    def mean_interclass(self) -> float:
        return self.code_length * self.p

    @property
    def mean_untargeted(self) -> float:
        return self.code_length * (1.0 - self.p)

    @property
    def variance(self) -> float:
        return self.code_length * self.p * (1.0 - self.p)


def binomial_pmf(model: InterClassDistModel, d: int) -> float:
    """P(inter-class distance = d) under the Binomial(K, p) law, in log-space."""
    k, p = model.code_length, model.p
    if d < 0 or d > k:
        raise UsageError(f"distance {d} outside [0, {k}]")
    if p >= 1.0:
        return 1.0 if d == k else 0.0
    log_comb = gammaln(k + 1) - gammaln(d + 1) - gammaln(k - d + 1)
    return float(math.exp(log_comb + d * math.log(p) + (k - d) * math.log1p(-p)))


def binomial_pmf_vector(model: InterClassDistModel) -> np.ndarray:
    return np.array([binomial_pmf(model, d) for d in range(model.code_length + 1)])


def untargeted_interval(model: InterClassDistModel, sigmas: float) -> tuple[int, int]:
    """Mean +- sigmas standard deviations of the untargeted-distance Gaussian.

    Endpoints round to the nearest integers and clamp to [0, K]; with
    sigmas -> 0 the interval degenerates to {round(K(1-p))}.
    """
    if sigmas < 0:
        raise UsageError("sigmas must be non-negative")
    center = model.mean_untargeted
    spread = sigmas * math.sqrt(model.variance)
    lo = int(math.floor(center - spread + 0.5))
    hi = int(math.floor(center + spread + 0.5))
    return max(lo, 0), min(hi, model.code_length)


def _sample_interclass(k: int, c: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Distances of `trials` random class pairs under the balanced construction.

    Each trial draws, per bit, a fresh exactly-balanced {-1,+1} assignment over
    the C classes and reads off one random pair.  Sampling is done directly on
    the pair's two entries: drawing two positions of a random balanced vector
    without replacement, the second entry differs from the first with
    probability (C/2)/(C-1), independently per bit.
    """
    p_differ = (c / 2) / (c - 1)
    differ = rng.random((trials, k)) < p_differ
    return differ.sum(axis=1).astype(np.int64)


def sample_interclass_ensembles(
    k: int, c: int, ensembles: int, rng: np.random.Generator
) -> np.ndarray:
    """Full-construction reference sampler: whole balanced assignments.

    Materializes `ensembles` complete (K, C) balanced sign matrices and
    returns one random pair distance per ensemble.  Much slower than
    _sample_interclass but does not presuppose the pair-marginal law;
    used as an independent oracle in tests.
    """
    balanced = np.array([1] * (c // 2) + [-1] * (c - c // 2), dtype=np.int8)
    keys = rng.random((ensembles, k, c))
    perms = np.argsort(keys, axis=-1)
    signs = balanced[perms]
    pairs = np.array([rng.choice(c, size=2, replace=False) for _ in range(ensembles)])
    si = signs[np.arange(ensembles), :, pairs[:, 0]]
    sj = signs[np.arange(ensembles), :, pairs[:, 1]]
    return (si != sj).sum(axis=1).astype(np.int64)


def monte_carlo_interclass(k: int, c: int, trials: int, seed: int) -> dict:
    """Empirical histogram of inter-class distances for the ideal construction.

    Requires C even (the balanced construction assigns exactly C/2 classes to
    each symbol per bit).  Every class owns exactly one code, realizing the
    zero intra-class-distance idealization; real models only approximate it.
    """
    if c % 2 != 0:
        raise ConfigError("balanced construction requires an even class count")
    if c < 2:
        raise ConfigError("need at least 2 classes")
    if trials < 1:
        raise ConfigError("trials must be positive")
    rng = np.random.default_rng(seed)
    if c == 2:
        distances = np.full(trials, k, dtype=np.int64)
    else:
        distances = _sample_interclass(k, c, trials, rng)
    hist = np.bincount(distances, minlength=k + 1)
    return {
        "code_length": k,
        "num_classes": c,
        "trials": trials,
        "seed": seed,
        "histogram": hist,
        "mean": float(distances.mean()),
        "variance": float(distances.var(ddof=1)) if trials > 1 else 0.0,
    }


def chi_square_fit(histogram: np.ndarray, model: InterClassDistModel) -> dict:
    """Goodness-of-fit of an empirical histogram against the Binomial(K,p) law.

    Bins with expected count below 5 are pooled into their neighbors before
    applying the chi-square test.
    """
    hist = np.asarray(histogram, dtype=np.float64)
    n = hist.sum()
    expected = binomial_pmf_vector(model) * n
    obs_bins, exp_bins = [], []
    acc_o, acc_e = 0.0, 0.0
    for o, e in zip(hist, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            obs_bins.append(acc_o)
            exp_bins.append(acc_e)
            acc_o, acc_e = 0.0, 0.0
    if acc_e > 0:
        if exp_bins:
            obs_bins[-1] += acc_o
            exp_bins[-1] += acc_e
        else:
            obs_bins, exp_bins = [acc_o], [acc_e]
    obs = np.asarray(obs_bins)
    exp = np.asarray(exp_bins) * (obs.sum() / np.sum(exp_bins))
    if len(obs) < 2:
        return {"statistic": 0.0, "p_value": 1.0, "bins": len(obs)}
    stat, pval = chisquare(obs, exp)
    return {"statistic": float(stat), "p_value": float(pval), "bins": len(obs)}


def coverage_check(k: int, c: int, sigmas: float, trials: int, seed: int) -> float:
    """Fraction of untargeted-adversary distances inside the sigma interval.

    Distances to other classes are K minus the sampled inter-class distances
    (the ideal attacker flips every bit of its own code).
    """
    model = InterClassDistModel(k, c)
    lo, hi = untargeted_interval(model, sigmas)
    mc = monte_carlo_interclass(k, c, trials, seed)
    untargeted = k - np.repeat(np.arange(k + 1), mc["histogram"])
    inside = np.count_nonzero((untargeted >= lo) & (untargeted <= hi))
    return inside / trials
