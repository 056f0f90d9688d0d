"""Confusion matrices, per-class F1, macro/weighted F1 and Cohen's kappa."""
from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError
from ..stages import MASK, N_CLASSES


@dataclass
class Metrics:
    f1: np.ndarray  # per class
    macro_f1: float
    weighted_f1: float
    kappa: float
    n_epochs: int


def confusion_matrix(truth, pred, n_classes=N_CLASSES):
    """Rows are reference stages, columns predictions; ``MASK`` epochs are skipped."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ContractError(f"truth and prediction lengths differ: {truth.shape} vs {pred.shape}")
    keep = truth != MASK
    t, p = truth[keep], pred[keep]
    if t.size and (t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise ContractError("labels outside the class range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def metrics(confusion) -> Metrics:
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ContractError(f"confusion matrix must be square, got shape {cm.shape}")
    if np.any(cm < 0):
        raise ContractError("confusion matrix has negative counts")
    n = cm.sum()
    if n == 0:
        raise ContractError("confusion matrix is all zeros")
    cm = cm.astype(np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    support = cm.sum(axis=1)
    p_o = tp.sum() / n
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum() / (n * n))
    kappa = 1.0 if p_e == 1.0 else (p_o - p_e) / (1 - p_e)
    return Metrics(
        f1=f1,
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * support).sum() / support.sum()),
        kappa=float(kappa),
        n_epochs=int(n),
    )


def score(truth, pred):
    return metrics(confusion_matrix(truth, pred))
