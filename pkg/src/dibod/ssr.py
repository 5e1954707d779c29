"""Self-adaptive semantic regularizer.

From a frozen teacher's class-probability rows on labeled data: per-class
confidence thresholds, an observation matrix of high-confidence hits, a
column-normalized estimation matrix, and the per-sample weight kappa that
gates label influence during adaptation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class SsrState:
    thresholds: np.ndarray   # (m,) per-class confidence baselines
    observation: np.ndarray  # (m, m) integer counts, rows = predicted class
    estimation: np.ndarray   # (m, m) column-normalized invariance scores
    kappa: np.ndarray        # (n,) per-sample weights in [0, 1]

    def to_json(self) -> str:
        return json.dumps({
            "thresholds": self.thresholds.tolist(),
            "observation": self.observation.astype(int).tolist(),
            "estimation": self.estimation.tolist(),
            "kappa": self.kappa.tolist(),
        }, indent=1)


def compute_thresholds(confidences: np.ndarray, predictions: np.ndarray,
                       num_classes: int) -> np.ndarray:
    """Mean predicted-class confidence per predicted class.

    Classes nobody predicts get the maximally conservative sentinel 1.
    """
    confidences = np.asarray(confidences, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.intp)
    t = np.ones(num_classes)
    for b in range(num_classes):
        sel = predictions == b
        if sel.any():
            t[b] = confidences[sel, b].mean()
    return t


def compute_observation(confidences: np.ndarray, predictions: np.ndarray,
                        labels: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """O[a, b] = count(predicted a, truly b, true-class confidence >= t_b)."""
    confidences = np.asarray(confidences, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    m = thresholds.shape[0]
    o = np.zeros((m, m), dtype=np.int64)
    clears = confidences[np.arange(labels.shape[0]), labels] >= thresholds[labels]
    np.add.at(o, (predictions[clears], labels[clears]), 1)
    return o


def compute_estimation(observation: np.ndarray,
                       prediction_counts: np.ndarray) -> np.ndarray:
    """Column-normalized estimation matrix.

    Each entry scales the row-normalized observation rate by the predicted
    class size, then normalizes per column.  Rows with no observations
    contribute nothing; columns with an empty denominator fall back to the
    uniform 1/m (the least protective score).
    """
    o = np.asarray(observation, dtype=np.float64)
    counts = np.asarray(prediction_counts, dtype=np.float64)
    m = o.shape[0]
    row_sums = o.sum(axis=1)
    scaled = np.zeros_like(o)
    nz = row_sums > 0
    scaled[nz] = o[nz] / row_sums[nz, None] * counts[nz, None]
    col_sums = scaled.sum(axis=0)
    e = np.full((m, m), 1.0 / m)
    pos = col_sums > 0
    e[:, pos] = scaled[:, pos] / col_sums[pos]
    return e


def kappa_for(labels: np.ndarray, estimation: np.ndarray) -> np.ndarray:
    """Per-sample weight: the estimation diagonal at each sample's label."""
    labels = np.asarray(labels, dtype=np.intp)
    m = estimation.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ValueError("label outside [0, num_classes)")
    diag = np.diag(estimation)
    return diag[labels]


def compute_ssr(confidences: np.ndarray, labels: np.ndarray,
                num_classes: int) -> SsrState:
    """Full pipeline from probability rows and ground-truth labels."""
    confidences = np.asarray(confidences, dtype=np.float64)
    predictions = confidences.argmax(axis=1)
    t = compute_thresholds(confidences, predictions, num_classes)
    o = compute_observation(confidences, predictions, labels, t)
    pred_counts = np.bincount(predictions, minlength=num_classes)
    e = compute_estimation(o, pred_counts)
    kappa = kappa_for(labels, e)
    return SsrState(t, o, e, kappa)
