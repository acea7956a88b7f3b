import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import mannwhitneyu

from hashguard.errors import UsageError
from hashguard.metrics import compute_roc


def test_perfect_separation():
    roc = compute_roc([0.0, 0.1, 0.2], [0.9, 1.0, 1.1], "high")
    assert roc.auc == 1.0
    assert roc.tpr_at_fpr(0.0) == 1.0


def test_identical_distributions():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=400)
    roc = compute_roc(scores, scores, "high")
    assert roc.auc == pytest.approx(0.5, abs=1e-12)


def test_direction_low():
    roc = compute_roc([1.0, 1.1, 1.2], [0.0, 0.1], "low")
    assert roc.auc == 1.0


def test_five_point_hand_case():
    benign = [1.0, 2.0, 3.0]
    adv = [2.5, 4.0]
    # pairs (a > b): 2.5 beats 1,2 -> 2; 4 beats all -> 3; total 5 of 6
    roc = compute_roc(benign, adv, "high")
    assert roc.auc == pytest.approx(5 / 6)


def test_ties_use_midrank():
    benign = [1.0, 2.0]
    adv = [2.0, 3.0]
    # 2 vs (1, 2): 1 + 0.5 ; 3 vs both: 2 -> 3.5/4
    roc = compute_roc(benign, adv, "high")
    assert roc.auc == pytest.approx(3.5 / 4)


@given(st.lists(st.integers(min_value=-50, max_value=50), min_size=2, max_size=60),
       st.lists(st.integers(min_value=-50, max_value=50), min_size=2, max_size=60))
@settings(max_examples=100, deadline=None)
def test_auc_equals_mann_whitney_oracle(benign, adv):
    roc = compute_roc(benign, adv, "high")
    u = mannwhitneyu(adv, benign, alternative="two-sided").statistic
    assert roc.auc == pytest.approx(u / (len(adv) * len(benign)), abs=1e-12)


def test_degenerate_scores_warn():
    with pytest.warns(UserWarning):
        roc = compute_roc([1.0, 1.0], [1.0, 1.0], "high")
    assert roc.auc == pytest.approx(0.5)


def test_tpr_at_fpr_interpolates():
    benign = [0.0, 1.0, 2.0, 3.0]
    adv = [2.5, 3.5]
    roc = compute_roc(benign, adv, "high")
    # at threshold 2.5: tpr 1.0, fpr 0.25; the step to fpr 0.5 happens at 2.0
    assert roc.tpr_at_fpr(0.25) == pytest.approx(1.0)
    assert roc.tpr_at_fpr(0.0) == pytest.approx(0.5)
    assert roc.tpr_at_fpr(0.1) == pytest.approx(0.5)  # flat between steps
    assert roc.tpr_at_fpr(0.9) == pytest.approx(1.0)


def test_empty_scores_rejected():
    with pytest.raises(UsageError):
        compute_roc([], [1.0], "high")
    with pytest.raises(UsageError):
        compute_roc([1.0], [2.0], "sideways")


def test_curve_monotone(records):
    roc = compute_roc(records["benign"].c1, records["untargeted"].c1, "high")
    assert np.all(np.diff(roc.fpr) >= 0)
    assert np.all(np.diff(roc.tpr) >= 0)
    assert roc.fpr[0] == 0.0 and roc.tpr[0] == 0.0
    assert roc.fpr[-1] == 1.0 and roc.tpr[-1] == 1.0
