import numpy as np
import pytest

from hashguard.attacks import AttackConfig, attack_batch, attack_cw_untargeted, \
    attack_targeted, attack_untargeted, attack_whitebox
from hashguard.denoise import Denoiser, DenoiserSpec
from hashguard.errors import ConfigError, UsageError
from hashguard.hamming import HashCode, hamming_distance
from hashguard.model import forward, hash_query, sign_pm1


@pytest.fixture(scope="module")
def queries(dataset):
    x, _ = dataset.flat("query")
    return x[:16]


def test_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig(mode="nonsense")
    with pytest.raises(ConfigError):
        AttackConfig(mode="targeted")  # no target code
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=-1.0)
    with pytest.raises(ConfigError):
        AttackConfig(steps=0)


def test_zero_epsilon_is_identity(net, queries):
    cfg = AttackConfig.pgd_untargeted(epsilon=0.0, steps=5)
    ex = attack_untargeted(net, queries[0], cfg)
    assert np.array_equal(ex.perturbed, ex.original)
    assert not ex.success
    assert hamming_distance(ex.final_code, hash_query(net, queries[0])) == 0


def test_linf_bound_and_clipping(net, queries):
    cfg = AttackConfig.pgd_untargeted(epsilon=8 / 255, steps=30)
    for ex in attack_batch(net, queries, cfg):
        assert ex.linf_norm() <= 8 / 255 + 1e-9
        assert ex.perturbed.min() >= 0.0 and ex.perturbed.max() <= 1.0


def test_pgd_deterministic(net, queries):
    cfg = AttackConfig.pgd_untargeted(epsilon=8 / 255, steps=20)
    a = attack_untargeted(net, queries[0], cfg)
    b = attack_untargeted(net, queries[0], cfg)
    assert np.array_equal(a.perturbed, b.perturbed)
    c = attack_batch(net, queries, AttackConfig.pgd_untargeted(
        epsilon=8 / 255, steps=20, random_start=True, seed=5))
    d = attack_batch(net, queries, AttackConfig.pgd_untargeted(
        epsilon=8 / 255, steps=20, random_start=True, seed=5))
    assert all(np.array_equal(x.perturbed, y.perturbed) for x, y in zip(c, d))


def test_untargeted_trace_grows(net, queries):
    cfg = AttackConfig.pgd_untargeted(epsilon=32 / 255, steps=50)
    for ex in attack_batch(net, queries, cfg):
        assert ex.loss_trace[-1] >= ex.loss_trace[1]
        orig = hash_query(net, ex.original)
        final_dist = hamming_distance(ex.final_code, orig)
        assert final_dist >= ex.loss_trace[1] - 8  # soft-to-integer slack


def test_targeted_at_own_code_succeeds_immediately(net, queries):
    own = hash_query(net, queries[0])
    cfg = AttackConfig.pgd_targeted(own, epsilon=8 / 255, steps=1)
    ex = attack_targeted(net, queries[0], cfg)
    assert ex.success


def test_targeted_reaches_radius(net, db, queries):
    from hashguard.evaluate import class_consensus_codes

    target = class_consensus_codes(db).code(3)
    cfg = AttackConfig.pgd_targeted(target, epsilon=16 / 255)
    exs = attack_batch(net, queries, cfg)
    dists = [hamming_distance(ex.final_code, target) for ex in exs]
    assert np.mean([d <= 8 for d in dists]) >= 0.8


def test_whitebox_reduces_to_targeted(net, dataset, queries):
    target = hash_query(net, queries[3]).negate()
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    t_cfg = AttackConfig.pgd_targeted(target, epsilon=8 / 255, steps=25)
    w_cfg = AttackConfig.whitebox(target, 0.0, 0.0, epsilon=8 / 255, steps=25)
    t_ex = attack_targeted(net, queries[3], t_cfg)
    w_ex = attack_whitebox(net, queries[3], w_cfg, den)
    assert np.array_equal(t_ex.perturbed, w_ex.perturbed)


def test_whitebox_needs_denoiser_when_lambda2_set(net, queries):
    target = hash_query(net, queries[0])
    cfg = AttackConfig.whitebox(target, 0.0, 1.0, steps=2)
    with pytest.raises(UsageError):
        attack_batch(net, queries[:1], cfg, denoiser=None)


def test_whitebox_lambda1_raises_quantization_loss(net, dataset, db, queries):
    from hashguard.evaluate import class_consensus_codes
    from hashguard.model import quantization_loss

    target = class_consensus_codes(db).code(5)
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    q = {}
    for lam1 in (0.0, 0.03):
        cfg = AttackConfig.whitebox(target, lam1, 0.0, epsilon=32 / 255)
        exs = attack_batch(net, queries, cfg, denoiser=den)
        q[lam1] = np.mean([quantization_loss(ex.final_logits) for ex in exs])
    assert q[0.03] > q[0.0]


def test_cw_zero_tradeoff_is_identity(net, queries):
    cfg = AttackConfig.cw_untargeted(steps=30, tradeoff=0.0)
    ex = attack_cw_untargeted(net, queries[0], cfg)
    assert ex.linf_norm() < 1e-6


def test_cw_stays_in_box(net, queries):
    cfg = AttackConfig.cw_untargeted(steps=60)
    for ex in attack_batch(net, queries, cfg):
        assert ex.perturbed.min() >= 0.0 and ex.perturbed.max() <= 1.0


def test_mode_guards(net, queries):
    with pytest.raises(UsageError):
        attack_untargeted(net, queries[0], AttackConfig.cw_untargeted())
    with pytest.raises(UsageError):
        attack_cw_untargeted(net, queries[0], AttackConfig.pgd_untargeted())


def test_target_length_checked(net, queries):
    rng = np.random.default_rng(0)
    bad = HashCode.random(32, rng)
    cfg = AttackConfig.pgd_targeted(bad, steps=1)
    with pytest.raises(UsageError):
        attack_targeted(net, queries[0], cfg)


def test_final_logits_match_perturbed_input(net, queries):
    cfg = AttackConfig.pgd_untargeted(epsilon=8 / 255, steps=10)
    ex = attack_untargeted(net, queries[0], cfg)
    assert np.allclose(ex.final_logits, forward(net, ex.perturbed))
    assert np.array_equal(ex.final_code.to_signs(),
                          sign_pm1(ex.final_logits).astype(np.int8))
