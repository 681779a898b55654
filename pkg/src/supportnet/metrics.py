"""Evaluation statistics: accuracy, Cohen's kappa, macro P/R/F1, confusion
matrices and the per-increment accuracy matrix."""

from __future__ import annotations

import csv

import numpy as np

from .errors import ParameterError, ShapeError, UndefinedStatisticError


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    l = np.asarray(labels)
    if p.shape != l.shape:
        raise ShapeError("predictions and labels must align")
    if p.size == 0:
        raise ParameterError("accuracy of an empty prediction set")
    return float((p == l).mean())


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    """(K, K) counts; rows are true classes, columns are predictions."""
    p = np.asarray(predictions, dtype=np.int64)
    l = np.asarray(labels, dtype=np.int64)
    if p.shape != l.shape:
        raise ShapeError("predictions and labels must align")
    if p.size and (p.min() < 0 or p.max() >= n_classes or l.min() < 0 or l.max() >= n_classes):
        raise ShapeError("class index out of range")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (l, p), 1)
    return out


def cohen_kappa(confusion) -> float:
    """Agreement beyond chance, with marginal-product expected agreement."""
    c = np.asarray(confusion, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        raise ParameterError("empty confusion matrix")
    p_o = np.trace(c) / total
    p_e = float((c.sum(axis=1) * c.sum(axis=0)).sum()) / total**2
    if p_e >= 1.0:
        raise UndefinedStatisticError("kappa undefined: expected agreement is 1")
    return float((p_o - p_e) / (1.0 - p_e))


def macro_prf(confusion) -> tuple[float, float, float]:
    """Unweighted class means of precision, recall and F1.

    A class that is never predicted contributes precision 0, and a class
    with no true examples contributes recall 0; F1 of a class is 0 when
    precision + recall is 0.
    """
    c = np.asarray(confusion, dtype=np.float64)
    if c.shape[0] < 2:
        raise ParameterError("need at least 2 classes")
    tp = np.diag(c)
    pred = c.sum(axis=0)
    true = c.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return float(precision.mean()), float(recall.mean()), float(f1.mean())


def accuracy_matrix(per_increment_batch_accuracies: list[list[float]]) -> np.ndarray:
    """Stack per-increment, per-class-batch accuracies into a matrix.

    Row t holds the accuracies after increment t on the test data of each
    class batch seen so far; future batches are NaN, giving the matrix its
    lower-triangular occupancy.
    """
    n = len(per_increment_batch_accuracies)
    if n == 0:
        raise ParameterError("no increments recorded")
    out = np.full((n, n), np.nan)
    for t, row in enumerate(per_increment_batch_accuracies):
        if len(row) != t + 1:
            raise ParameterError(
                f"increment {t} must report {t + 1} batch accuracies, got {len(row)}"
            )
        out[t, : t + 1] = row
    return out


def write_matrix_csv(path, matrix, row_label: str, column_names: list[str]) -> None:
    """CSV dump with a leading header row naming the columns."""
    m = np.asarray(matrix)
    integral = m.dtype.kind in "iu"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([row_label] + list(column_names))
        for i, row in enumerate(m):
            if integral:
                writer.writerow([i] + [int(v) for v in row])
            else:
                writer.writerow([i] + ["" if np.isnan(v) else repr(float(v)) for v in row])
