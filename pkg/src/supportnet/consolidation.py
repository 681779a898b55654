"""Consolidation regularizers that keep a grown model close to its past self.

Two penalties act together: a feature anchor that pins the
representations of retained support data to the values the previous
mapping function produced, and an EWC penalty (Kirkpatrick et al., 2017)
that weights parameter drift by an empirical Fisher diagonal. Both are
zero at the old parameters and differentiable everywhere, so they drop
into the same SGD loop as the data loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import SeededRng
from .data import Dataset
from .errors import ParameterError, StateError
from .network import (
    GradientSet,
    NetworkParams,
    backward_from_trace,
    cross_entropy,
    forward,
    phi_backward,
    phi_forward,
)
from .support_selector import SupportSet


@dataclass
class ConsolidationState:
    """Everything frozen at the end of an increment that the next one
    regularizes against."""

    theta_old: NetworkParams
    fisher: list[np.ndarray]  # one block per theta_old parameter block
    support_reps_old: np.ndarray  # (M, T), aligned with the support set
    lambda_f: float = 1.0
    lambda_ewc: float = 0.0

    def __post_init__(self):
        blocks = self.theta_old.blocks()
        if len(self.fisher) != len(blocks):
            raise StateError("fisher blocks do not mirror the parameter blocks")
        for fb, pb in zip(self.fisher, blocks):
            if fb.shape != pb.shape:
                raise StateError("fisher block shape mismatch")
            if fb.size and fb.min() < 0:
                raise StateError("negative fisher value")
        if self.lambda_f < 0 or self.lambda_ewc < 0:
            raise ParameterError("regularizer coefficients must be non-negative")


def feature_regularizer(
    params: NetworkParams,
    support_set: SupportSet | None,
    state: ConsolidationState,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Sum of squared representation drift over the support data.

    Returns the penalty and its gradient w.r.t. the mapping-function
    parameters only; the frozen old representations are constants.
    """
    zero = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params.hidden]
    if support_set is None or len(support_set) == 0:
        return 0.0, zero
    old_reps = state.support_reps_old
    if old_reps.shape[0] != len(support_set):
        raise StateError("stored representations not aligned with the support set")
    if old_reps.shape[1] != params.repr_dim:
        raise StateError(
            f"stored representation width {old_reps.shape[1]} != model width {params.repr_dim}"
        )
    pres, acts, rep = phi_forward(params, support_set.features)
    diff = rep - old_reps
    value = float((diff * diff).sum())
    grads = phi_backward(params, support_set.features, pres, acts, 2.0 * diff)
    return value, grads


def fisher_diagonal(
    params: NetworkParams,
    sample_features,
    samples_per_point: int,
    rng: SeededRng,
) -> list[np.ndarray]:
    """Empirical Fisher diagonal, one non-negative block per parameter block.

    For each data point, labels are drawn from the model's own predictive
    distribution and the squared score (gradient of the log-likelihood)
    is averaged over every draw of every point. Draws with the same label
    share one backward pass, weighted by their multiplicity.
    """
    x = np.atleast_2d(np.asarray(sample_features, dtype=np.float64))
    if x.shape[0] == 0:
        raise ParameterError("fisher estimation needs a non-empty sample")
    if samples_per_point < 1:
        raise ParameterError("samples_per_point must be >= 1")
    if params.n_classes < 2:
        raise ParameterError("fisher estimation needs at least 2 classes")

    totals = [np.zeros_like(b) for b in params.blocks()]
    for n in range(x.shape[0]):
        trace = forward(params, x[n : n + 1])
        probs = trace.outputs[0]
        draws = rng.categorical(probs, samples_per_point)
        for label in np.unique(draws):
            count = int((draws == label).sum())
            hot = np.zeros((1, params.n_classes))
            hot[0, label] = 1.0
            # score = -grad of the single-example cross-entropy; squares agree
            g = backward_from_trace(params, trace, hot)
            for tot, blk in zip(totals, g.blocks()):
                tot += count * blk * blk
    n_draws = x.shape[0] * samples_per_point
    return [t / n_draws for t in totals]


def ewc_penalty(
    params: NetworkParams, state: ConsolidationState
) -> tuple[float, GradientSet]:
    """Fisher-weighted squared drift from the snapshot parameters.

    Output rows added after the snapshot have no old value and are
    excluded: zero penalty, zero gradient.
    """
    grads = GradientSet.zeros_like(params)
    new_blocks = params.blocks()
    old_blocks = state.theta_old.blocks()
    value = 0.0
    for i, (new, old, fish, g) in enumerate(
        zip(new_blocks, old_blocks, state.fisher, grads.blocks())
    ):
        is_output = i == len(new_blocks) - 1
        if is_output:
            k_old = old.shape[0]
            if new.shape[0] < k_old or new.shape[1] != old.shape[1]:
                raise StateError(
                    f"output layer {new.shape} incompatible with snapshot {old.shape}"
                )
            drift = new[:k_old] - old
            value += float((fish * drift * drift).sum())
            g[:k_old] = 2.0 * fish * drift
        else:
            if new.shape != old.shape:
                raise StateError("hidden layer shape changed since the snapshot")
            drift = new - old
            value += float((fish * drift * drift).sum())
            g[...] = 2.0 * fish * drift
    return value, grads


def total_loss(
    params: NetworkParams,
    batch: Dataset,
    support_set: SupportSet | None,
    state: ConsolidationState | None,
) -> tuple[float, GradientSet]:
    """Cross-entropy plus both consolidation penalties, with the full
    gradient. With no state (first increment) this is plain cross-entropy."""
    if batch.n_classes != params.n_classes:
        raise StateError(
            f"batch one-hot width {batch.n_classes} != model classes {params.n_classes}"
        )
    one_hot = batch.one_hot()
    trace = forward(params, batch.features)
    loss = cross_entropy(trace.outputs, one_hot)
    grads = backward_from_trace(params, trace, one_hot)
    if state is None:
        return loss, grads

    if state.lambda_f > 0:
        rf, rf_grads = feature_regularizer(params, support_set, state)
        loss += state.lambda_f * rf
        for (gw, gb), (dw, db) in zip(grads.hidden, rf_grads):
            gw += state.lambda_f * dw
            gb += state.lambda_f * db
    if state.lambda_ewc > 0:
        re, re_grads = ewc_penalty(params, state)
        loss += state.lambda_ewc * re
        grads.add_scaled(re_grads, state.lambda_ewc)
    return loss, grads
