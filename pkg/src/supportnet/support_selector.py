"""Budgeted support-data selection from SVM support-vector candidates.

Candidates for a class are the training points that came out of that
class's one-vs-rest problem with nonzero dual weight. Within a class,
points closest to the decision boundary (smallest absolute margin) carry
the most training signal, so selection ranks by that; a uniform-sampling
mode exists for ablation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core_math import SeededRng
from .data import Dataset
from .errors import ParameterError, ScheduleError, SelectionError, ShapeError
from .network import NetworkParams, phi_forward
from .svm import LinearSvmModel, margins


@dataclass
class SupportSet:
    """Retained old-class examples plus their frozen representations.

    Rows are ordered class-ascending, selection order within class. The
    frozen representations are the ones the selecting model produced;
    the feature regularizer anchors future models to them.
    """

    features: np.ndarray  # (M, D)
    labels: np.ndarray  # (M,)
    reps_old: np.ndarray  # (M, T) representations at selection time
    margins: np.ndarray  # (M,) signed own-class margin at selection (NaN if none)
    was_support_vector: np.ndarray  # (M,) bool
    source_indices: np.ndarray  # (M,) row index into the selection pool
    total_budget: int
    per_class_budgets: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        m = len(self.labels)
        if len(self) > self.total_budget:
            raise ParameterError(
                f"support set size {m} exceeds budget {self.total_budget}"
            )
        for arr in (self.features, self.reps_old):
            if arr.shape[0] != m:
                raise ShapeError("support set arrays disagree on length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_count(self, label: int) -> int:
        return int((self.labels == label).sum())

    def as_dataset(self, n_classes: int, split: str = "train") -> Dataset:
        return Dataset(self.features, self.labels, n_classes, split)

    @classmethod
    def empty(cls, dim: int, repr_dim: int, total_budget: int = 0) -> "SupportSet":
        return cls(
            np.empty((0, dim)),
            np.empty(0, dtype=np.int64),
            np.empty((0, repr_dim)),
            np.empty(0),
            np.empty(0, dtype=bool),
            np.empty(0, dtype=np.int64),
            total_budget,
        )


def compute_representations(params: NetworkParams, dataset: Dataset, chunk: int = 4096) -> np.ndarray:
    """Representations of every example under the mapping function only."""
    if len(dataset) == 0:
        return np.empty((0, params.repr_dim))
    if dataset.dim != params.input_dim:
        raise ShapeError(f"dataset dim {dataset.dim} != network input {params.input_dim}")
    out = np.empty((len(dataset), params.repr_dim))
    for start in range(0, len(dataset), chunk):
        stop = min(start + chunk, len(dataset))
        _, _, rep = phi_forward(params, dataset.features[start:stop])
        out[start:stop] = rep
    return out


def allocate_budget(total_budget: int, class_list) -> dict[int, int]:
    """Split a total budget evenly; leftovers go to the lowest class indices."""
    classes = sorted(int(c) for c in class_list)
    if len(set(classes)) != len(classes):
        raise ParameterError("duplicate classes in budget allocation")
    if total_budget < len(classes):
        raise ParameterError(
            f"budget {total_budget} cannot cover {len(classes)} classes"
        )
    base, remainder = divmod(total_budget, len(classes))
    return {c: base + (1 if i < remainder else 0) for i, c in enumerate(classes)}


def _ranked(indices: np.ndarray, abs_margin: np.ndarray) -> np.ndarray:
    """Sort indices by (|margin|, index) ascending."""
    order = np.lexsort((indices, abs_margin[indices]))
    return indices[order]


def select_support(
    model: LinearSvmModel,
    representations: np.ndarray,
    dataset: Dataset,
    per_class_budgets: dict[int, int],
    uniform: bool = False,
    rng: SeededRng | None = None,
) -> SupportSet:
    """Pick the budgeted support set for every class in the budget map.

    Per class: support-vector candidates first, smallest |margin| first;
    if the candidates fall short of the budget, fill with non-candidates
    of the same class, again closest to the boundary first. Ties break on
    dataset index, so selection is fully deterministic. ``uniform``
    replaces the margin ranking with seeded uniform sampling (ablation).
    """
    if representations.shape[0] != len(dataset):
        raise ShapeError("representations not aligned with dataset rows")
    if uniform and rng is None:
        raise ParameterError("uniform sampling requires an rng")
    margin_matrix = margins(model, representations) if len(dataset) else np.empty((0, len(model.classes)))

    feats, labels, reps, margs, flags, sources = [], [], [], [], [], []
    for cls in sorted(per_class_budgets):
        budget = per_class_budgets[cls]
        class_rows = np.flatnonzero(dataset.labels == cls)
        if len(class_rows) == 0:
            raise SelectionError(f"class {cls} absent from the selection pool")
        col = model.class_column(cls)
        m = margin_matrix[:, col]
        abs_m = np.abs(m)

        sv_rows = np.intersect1d(model.support_indices(cls), class_rows)
        non_sv = np.setdiff1d(class_rows, sv_rows)
        if uniform:
            take_sv = rng.choice(len(sv_rows), min(budget, len(sv_rows)), replace=False)
            chosen = sv_rows[np.sort(take_sv)]
            if len(chosen) < budget:
                extra = rng.choice(len(non_sv), min(budget - len(chosen), len(non_sv)), replace=False)
                chosen = np.concatenate([chosen, non_sv[np.sort(extra)]])
        else:
            chosen = _ranked(sv_rows, abs_m)[:budget]
            if len(chosen) < budget:
                fill = _ranked(non_sv, abs_m)[: budget - len(chosen)]
                chosen = np.concatenate([chosen, fill])

        feats.append(dataset.features[chosen])
        labels.append(dataset.labels[chosen])
        reps.append(representations[chosen])
        margs.append(m[chosen])
        flags.append(np.isin(chosen, sv_rows))
        sources.append(chosen)

    return SupportSet(
        np.concatenate(feats) if feats else np.empty((0, dataset.dim)),
        np.concatenate(labels) if labels else np.empty(0, dtype=np.int64),
        np.concatenate(reps) if reps else np.empty((0, representations.shape[1])),
        np.concatenate(margs) if margs else np.empty(0),
        np.concatenate(flags) if flags else np.empty(0, dtype=bool),
        np.concatenate(sources) if sources else np.empty(0, dtype=np.int64),
        sum(per_class_budgets.values()),
        dict(per_class_budgets),
    )


def select_random(
    dataset: Dataset,
    representations: np.ndarray,
    per_class_budgets: dict[int, int],
    rng: SeededRng,
) -> SupportSet:
    """Memory-matched control: uniform per-class sampling, no SVM involved."""
    feats, labels, reps, margs, flags, sources = [], [], [], [], [], []
    for cls in sorted(per_class_budgets):
        budget = per_class_budgets[cls]
        class_rows = np.flatnonzero(dataset.labels == cls)
        if len(class_rows) == 0:
            raise SelectionError(f"class {cls} absent from the selection pool")
        take = rng.choice(len(class_rows), min(budget, len(class_rows)), replace=False)
        chosen = class_rows[np.sort(take)]
        feats.append(dataset.features[chosen])
        labels.append(dataset.labels[chosen])
        reps.append(representations[chosen])
        margs.append(np.full(len(chosen), np.nan))
        flags.append(np.zeros(len(chosen), dtype=bool))
        sources.append(chosen)
    return SupportSet(
        np.concatenate(feats),
        np.concatenate(labels),
        np.concatenate(reps),
        np.concatenate(margs),
        np.concatenate(flags),
        np.concatenate(sources),
        sum(per_class_budgets.values()),
        dict(per_class_budgets),
    )


def merge_training_set(support_set: SupportSet | None, new_batch: Dataset) -> Dataset:
    """Rehearsal training set: support examples first, then the new batch.

    One-hot width is re-pinned to cover every class present, so old labels
    re-encode at the grown class count.
    """
    if support_set is None or len(support_set) == 0:
        return new_batch.with_classes(int(new_batch.labels.max()) + 1 if len(new_batch) else new_batch.n_classes)
    old_classes = set(int(c) for c in support_set.classes)
    new_classes = set(int(c) for c in np.unique(new_batch.labels))
    overlap = old_classes & new_classes
    if overlap:
        raise ScheduleError(f"classes {sorted(overlap)} appear as both old and new")
    features = np.concatenate([support_set.features, new_batch.features])
    labels = np.concatenate([support_set.labels, new_batch.labels])
    return Dataset(features, labels, int(labels.max()) + 1, new_batch.split)


def export_csv(support_set: SupportSet, path) -> None:
    """Audit dump: one row per retained example."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "dataset_index", "margin", "was_support_vector"])
        for i in range(len(support_set)):
            writer.writerow(
                [
                    int(support_set.labels[i]),
                    int(support_set.source_indices[i]),
                    repr(float(support_set.margins[i])),
                    int(support_set.was_support_vector[i]),
                ]
            )
