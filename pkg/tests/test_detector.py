import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hashguard.denoise import Denoiser, DenoiserSpec
from hashguard.detector import (
    CriterionValues,
    Verdict,
    calibrate,
    calibrate_grid,
    criteria_batch,
    criterion1,
    criterion2,
    criterion3,
    detect,
    detect_batch,
    load_state,
    save_state,
)
from hashguard.errors import CalibrationMismatch, ConfigError, UsageError
from hashguard.hamming import CodeDatabase, HashCode
from hashguard.model import ToyHashNet, net_fingerprint


def make_db_from_codes(codes, k):
    words = np.stack([c.words for c in codes])
    return CodeDatabase(np.arange(len(codes)), words,
                        np.ones((len(codes), 1), dtype=bool), k)


def test_criterion1_query_present_k_times():
    rng = np.random.default_rng(0)
    q = HashCode.random(64, rng)
    db = make_db_from_codes([q] * 5, 64)
    assert criterion1(db, q, 5) == 0.0


def test_criterion1_arithmetic():
    base = HashCode.from_signs(np.ones(16, dtype=np.int8))

    def flipped(n):
        s = base.to_signs().copy()
        s[:n] *= -1
        return HashCode.from_signs(s)

    db = make_db_from_codes([flipped(2), flipped(4)], 16)
    assert criterion1(db, base, 2) == pytest.approx(3.0)


def test_criterion1_ideal_untargeted_adversary_in_paper_interval():
    """Negating a center of a compact database lands near K/2 from everything."""
    from hashguard.model import generate_hash_centers

    centers = generate_hash_centers(32, 64)
    db = make_db_from_codes([centers.code(i) for i in range(32)], 64)
    adversary = centers.code(0).negate()
    value = criterion1(db, adversary, 10)
    assert 20 <= value <= 44
    assert value == pytest.approx(32.0, abs=6.0)


def test_criterion2_trivial_values():
    assert criterion2(np.ones(64)) == 0.0
    assert criterion2(-np.ones(64)) == 0.0
    assert criterion2(np.zeros(64)) == pytest.approx(64.0)


@given(st.integers(min_value=1, max_value=128), st.integers(min_value=0))
@settings(max_examples=50, deadline=None)
def test_criterion2_range_property(k, seed):
    rng = np.random.default_rng(seed)
    logits = rng.uniform(-1, 1, size=k)
    value = criterion2(logits)
    assert 0.0 <= value <= k  # tighter than the 2K type bound inside [-1,1]


def test_criterion3_identity_denoiser_is_zero(net, dataset):
    den = Denoiser(DenoiserSpec(kind="identity", image_shape=dataset.image_shape))
    x, _ = dataset.flat("query")
    assert criterion3(net, x[0], den) == pytest.approx(0.0, abs=1e-9)


def test_criterion3_constant_image_under_blur_is_zero(net, dataset):
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    x = np.full(dataset.input_dim, 0.5)
    assert criterion3(net, x, den) == pytest.approx(0.0, abs=1e-9)


def test_criterion3_in_range(net, dataset):
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    x, _ = dataset.flat("query")
    for row in x[:20]:
        assert 0.0 <= criterion3(net, row, den) <= net.code_length


def test_untargeted_attacks_raise_median_c3(records):
    assert np.median(records["untargeted"].c3) > np.median(records["benign"].c3)


# --- calibration --------------------------------------------------------------


def test_calibrate_zero_alpha_no_false_positives(cfg, dataset, net, db):
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    x_cal, _ = dataset.flat("calibration")
    state = calibrate(db, net, x_cal, 0.0, k=10, denoiser=den)
    assert state.realized_fpr == 0.0
    verdicts = detect_batch(state, db, net, x_cal)
    assert not any(v.is_adversarial for v in verdicts)


def test_calibrate_union_bound(state):
    assert sum(state.allocation) <= state.fpr_target + 1e-12
    assert state.realized_fpr <= state.fpr_target


def test_calibrate_requires_samples(cfg, dataset, net, db):
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    x_cal, _ = dataset.flat("calibration")
    with pytest.raises(ConfigError):
        calibrate(db, net, x_cal[:100], 0.05, denoiser=den)


def test_calibrate_rejects_bad_allocation(cfg, dataset, net, db):
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    x_cal, _ = dataset.flat("calibration")
    with pytest.raises(ConfigError):
        calibrate(db, net, x_cal, 0.05, allocation=(0.04, 0.04, 0.04), denoiser=den)


def test_heldout_fpr_close_to_calibration(cfg, dataset, net, db, state, records):
    heldout_fpr = float(np.mean(records["benign"].flagged))
    assert abs(heldout_fpr - state.realized_fpr) <= 0.02


def test_fpr_monotone_in_alpha(cfg, dataset, net, db, records, attack_batches):
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    x_cal, _ = dataset.flat("calibration")
    x_held, _ = dataset.flat("heldout")
    x_att = np.stack([ex.perturbed for ex in attack_batches["targeted"]])
    prev_fpr, prev_tpr = -1.0, -1.0
    for alpha in (0.01, 0.05, 0.1, 0.2):
        s = calibrate(db, net, x_cal, alpha, k=10, denoiser=den)
        fpr = np.mean([v.is_adversarial for v in detect_batch(s, db, net, x_held)])
        tpr = np.mean([v.is_adversarial for v in detect_batch(s, db, net, x_att)])
        assert fpr >= prev_fpr
        assert tpr >= prev_tpr
        prev_fpr, prev_tpr = fpr, tpr


def test_grid_calibration_meets_fpr_and_beats_nothing(cfg, dataset, net, db,
                                                      attack_batches):
    den = Denoiser(DenoiserSpec(image_shape=dataset.image_shape))
    x_cal, _ = dataset.flat("calibration")
    adv = np.stack([ex.perturbed for ex in attack_batches["targeted"]])
    s = calibrate_grid(db, net, x_cal, adv, 0.05, k=10, denoiser=den)
    assert s.realized_fpr <= 0.05
    assert sum(s.allocation) <= 0.05 + 1e-12


# --- verdicts ------------------------------------------------------------------


def test_detect_batch_matches_single(cfg, dataset, net, db, state):
    x, _ = dataset.flat("heldout")
    rows = x[:16]
    fused = detect_batch(state, db, net, rows)
    for i, row in enumerate(rows):
        single = detect(state, db, net, row)
        assert single.flags == fused[i].flags
        assert single.decision == fused[i].decision
        assert single.values.c1 == pytest.approx(fused[i].values.c1, abs=1e-9)
        assert single.values.c2 == pytest.approx(fused[i].values.c2, abs=1e-9)
        assert single.values.c3 == pytest.approx(fused[i].values.c3, abs=1e-9)


def test_detect_deterministic(cfg, dataset, net, db, state):
    x, _ = dataset.flat("heldout")
    a = detect(state, db, net, x[0])
    b = detect(state, db, net, x[0])
    assert a == b


def test_benign_median_sample_is_benign(cfg, dataset, net, db, state, records):
    ben = records["benign"]
    med = (np.median(ben.c1), np.median(ben.c2), np.median(ben.c3))
    idx = int(np.argmin(np.abs(ben.c1 - med[0]) + np.abs(ben.c2 - med[1])
                        + np.abs(ben.c3 - med[2])))
    x, _ = dataset.flat("heldout")
    assert detect(state, db, net, x[idx]).decision == "benign"


def test_saturated_logits_fire_criterion2(cfg, dataset, net, db, state):
    """An input whose logits sit at exactly +-1 has zero quantization loss."""
    verdicts = detect_batch(state, db, net, dataset.flat("heldout")[0][:4])
    for v in verdicts:
        crafted = CriterionValues(v.values.c1, 0.0, v.values.c3)
        flags = (crafted.c1 > state.t1, crafted.c2 < state.t2, crafted.c3 > state.t3)
        assert flags[1]  # zero quantization loss is below any calibrated T2


@given(st.booleans(), st.booleans(), st.booleans())
def test_verdict_is_or_of_flags(f1, f2, f3):
    v = Verdict(CriterionValues(1.0, 1.0, 1.0), f1, f2, f3)
    assert v.is_adversarial == (f1 or f2 or f3)
    assert v.decision == ("adversarial" if (f1 or f2 or f3) else "benign")


def test_state_roundtrip(tmp_path, state, net):
    path = tmp_path / "det.json"
    save_state(state, path)
    loaded = load_state(path, net_fingerprint(net))
    assert loaded == state


def test_state_hash_mismatch(tmp_path, state):
    path = tmp_path / "det.json"
    save_state(state, path)
    with pytest.raises(CalibrationMismatch):
        load_state(path, "0" * 64)


def test_detect_rejects_wrong_model(state, db, dataset):
    other = ToyHashNet.create(dataset.input_dim, 8, 64, seed=99)
    with pytest.raises(CalibrationMismatch):
        detect(state, db, other, np.zeros(dataset.input_dim))
    wrong_k = ToyHashNet.create(dataset.input_dim, 8, 32, seed=0)
    with pytest.raises(CalibrationMismatch):
        detect(state, db, wrong_k, np.zeros(dataset.input_dim))


def test_criteria_batch_rejects_1d(db, net):
    with pytest.raises(UsageError):
        criteria_batch(db, net, np.zeros(768), 10,
                       Denoiser(DenoiserSpec(image_shape=(16, 16, 3))))
