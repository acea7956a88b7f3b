"""ROC curves and AUC for detection scores.

Adversarial examples are the positive class.  The `direction` argument says
whether large scores indicate adversarial inputs (criteria 1 and 3) or
benign ones (criterion 2, where attacks push the score toward zero).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def tpr_at_fpr(self, target_fpr: float) -> float:
        """Largest achievable TPR at FPR <= target, linearly interpolated."""
        return float(np.interp(target_fpr, self.fpr, self.tpr))


def compute_roc(benign_scores, adversarial_scores, direction: str = "high") -> RocCurve:
    """ROC over two score samples; ties are grouped so the trapezoid AUC
    equals the midrank Mann-Whitney statistic exactly."""
    benign = np.asarray(benign_scores, dtype=np.float64)
    adv = np.asarray(adversarial_scores, dtype=np.float64)
    if len(benign) == 0 or len(adv) == 0:
        raise UsageError("both score sets must be non-empty")
    if direction == "low":
        benign, adv = -benign, -adv
    elif direction != "high":
        raise UsageError("direction must be 'high' or 'low'")

    scores = np.concatenate([adv, benign])
    labels = np.concatenate([np.ones(len(adv), bool), np.zeros(len(benign), bool)])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]

    # collapse tied scores into single sweep points
    distinct = np.flatnonzero(np.diff(scores)) if len(scores) > 1 else np.array([], int)
    ends = np.append(distinct, len(scores) - 1)
    tp = np.cumsum(labels)[ends]
    fp = (ends + 1) - tp
    tpr = np.concatenate([[0.0], tp / len(adv)])
    fpr = np.concatenate([[0.0], fp / len(benign)])
    thresholds = np.concatenate([[np.inf], scores[ends]])
    auc = float(np.trapezoid(tpr, fpr))
    if np.all(scores == scores[0]):
        warnings.warn("degenerate score sets (all values equal); AUC is 0.5")
    return RocCurve(fpr, tpr, thresholds, auc)
