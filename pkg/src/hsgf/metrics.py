"""Confusion-matrix accuracy indicators: OA, AA, and kappa (reported x100)."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa_x100: float
    per_class: list
    split: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""

    def to_dict(self):
        return {"oa": self.oa, "aa": self.aa, "kappa_x100": self.kappa_x100,
                "per_class": self.per_class, "split": self.split,
                "seed": self.seed, "config_hash": self.config_hash}


def confusion_matrix(true_labels, predicted_labels, num_classes):
    """C x C count matrix; rows are true class, columns predicted (1-based labels)."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"label arrays disagree in shape: {t.shape} vs {p.shape}")
    if t.size and (t.min() < 1 or t.max() > num_classes or p.min() < 1 or p.max() > num_classes):
        raise ValueError(f"labels must lie in 1..{num_classes}")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (t - 1, p - 1), 1)
    return m


def metrics_from_confusion(m):
    """OA = 100*trace/total; AA over populated classes; kappa = (po-pe)/(1-pe).

    Per-class accuracies are diag/rowsum*100, 0.0 for empty classes. A fully
    consistent matrix (pe == 1) gets kappa 1 iff agreement is also perfect.
    """
    m = np.asarray(m, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    row = m.sum(axis=1)
    col = m.sum(axis=0)
    diag = np.diag(m)
    po = diag.sum() / total
    populated = row > 0
    per_class = np.zeros(m.shape[0])
    per_class[populated] = diag[populated] / row[populated] * 100.0
    aa = per_class[populated].mean() if populated.any() else 0.0
    pe = float((row * col).sum()) / (total * total)
    if pe >= 1.0:
        kappa = 1.0 if po >= 1.0 else 0.0
    else:
        kappa = (po - pe) / (1.0 - pe)
    return {"oa": 100.0 * po, "aa": float(aa), "kappa_x100": 100.0 * kappa,
            "per_class": per_class.tolist()}
