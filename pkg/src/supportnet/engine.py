"""The class-incremental training loop for every method and baseline.

One experiment walks a class-batch schedule: train on the current round's
data, evaluate on the cumulative test set, and (for rehearsal methods)
rebuild the support set and consolidation state for the next round.
Everything is driven by a single seed; two runs with the same config
produce bit-identical logs apart from wall-clock times.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .core_math import SeededRng
from .data import ClassBatchSchedule, Dataset, split_by_schedule
from .errors import ParameterError, ScheduleError, ShapeError, TrainingDivergedError
from .metrics import accuracy, accuracy_matrix, cohen_kappa, confusion_matrix, macro_prf
from .network import (
    MomentumState,
    NetworkParams,
    backward_from_trace,
    cross_entropy,
    expand_output_layer,
    forward,
    init_params,
    predict,
    sgd_step,
)
from .consolidation import ConsolidationState, ewc_penalty, fisher_diagonal
from .support_selector import (
    SupportSet,
    allocate_budget,
    compute_representations,
    merge_training_set,
    select_random,
    select_support,
)
from .svm import SvmProblem, train_ovr

METHODS = (
    "supportnet",
    "supportnet_no_ewc",
    "supportnet_no_feature",
    "support_only",
    "fine_tune",
    "all_data",
    "random_guess",
    "random_rehearsal",
)

_REHEARSAL_METHODS = {
    "supportnet",
    "supportnet_no_ewc",
    "supportnet_no_feature",
    "support_only",
    "random_rehearsal",
}

# rng stream tags; SVM solves use streams 1..K+1 internally, keep clear of
# them. Per-increment families are spaced so tag+increment never collides.
_STREAM_INIT = 101
_STREAM_SHUFFLE = 102
_STREAM_GUESS = 103
_STREAM_EXPAND_BASE = 2000
_STREAM_FISHER_BASE = 3000
_STREAM_SELECT_BASE = 4000
_STREAM_REINIT_BASE = 5000
_STREAM_FISHER_POOL_BASE = 7000


@dataclass
class MethodConfig:
    """Full recipe for one experiment; the seed determines everything."""

    method: str = "supportnet"
    budget: int = 2000
    lambda_f: float = 1.0
    lambda_ewc: float = 1e3
    epochs: int = 10
    all_data_epochs: int = 20
    learning_rate: float = 0.05
    lr_decay: float = 0.5
    momentum: float = 0.9
    batch_size: int = 64
    seed: int = 0
    hidden_dims: tuple = (256, 128)
    activation: str = "relu"
    new_row_stdev: float = 0.01
    svm_c: float = 1.0
    svm_tol: float = 1e-4
    svm_max_epochs: int = 1000
    fisher_samples_per_point: int = 1
    fisher_sample_cap: int = 2000
    uniform_sampling: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method '{self.method}'")
        if self.budget < 0:
            raise ParameterError("budget must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("batch_size and epochs must be positive")
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        # ablation tags force their coefficients; keeps configs unambiguous
        if self.method in ("support_only", "random_rehearsal"):
            self.lambda_f = 0.0
            self.lambda_ewc = 0.0
        elif self.method == "supportnet_no_ewc":
            self.lambda_ewc = 0.0
        elif self.method == "supportnet_no_feature":
            self.lambda_f = 0.0
        elif self.method in ("fine_tune", "all_data", "random_guess"):
            self.budget = 0
            self.lambda_f = 0.0
            self.lambda_ewc = 0.0
        if self.lambda_f < 0 or self.lambda_ewc < 0:
            raise ParameterError("regularizer coefficients must be non-negative")

    @property
    def uses_rehearsal(self) -> bool:
        return self.method in _REHEARSAL_METHODS

    @property
    def uses_regularizers(self) -> bool:
        return self.lambda_f > 0 or self.lambda_ewc > 0


@dataclass
class IncrementRecord:
    """Everything measured after one increment."""

    increment: int
    new_classes: list[int]  # original labels fed this round
    seen_classes: list[int]
    train_seconds: float
    test_accuracy: float
    per_batch_accuracy: list[float]
    confusion: np.ndarray
    kappa: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    diag_real_training: float
    diag_all_training: float
    diag_test: float
    train_set_size: int
    support_size: int
    svm_kkt_violation: float | None
    support_audit: list[tuple] = field(default_factory=list)


@dataclass
class ExperimentLog:
    method: str
    seed: int
    schedule: list[list[int]]
    records: list[IncrementRecord] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].test_accuracy

    @property
    def total_train_seconds(self) -> float:
        return sum(r.train_seconds for r in self.records)

    def accuracy_matrix(self) -> np.ndarray:
        return accuracy_matrix([r.per_batch_accuracy for r in self.records])

    def to_json(self) -> str:
        blob = {
            "method": self.method,
            "seed": self.seed,
            "schedule": self.schedule,
            "records": [],
        }
        for r in self.records:
            d = asdict(r)
            d["confusion"] = r.confusion.tolist()
            blob["records"].append(d)
        return json.dumps(blob, indent=1)


def _remap_labels(dataset: Dataset, slot_of: dict[int, int], n_classes: int) -> Dataset:
    labels = np.array([slot_of[int(l)] for l in dataset.labels], dtype=np.int64)
    return Dataset(dataset.features, labels, n_classes, dataset.split)


def _concat(datasets: list[Dataset], n_classes: int) -> Dataset:
    return Dataset(
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        n_classes,
        datasets[0].split,
    )


def _train_plain_or_regularized(
    model: NetworkParams,
    train_set: Dataset,
    support: SupportSet | None,
    state: ConsolidationState | None,
    config: MethodConfig,
    lr: float,
    shuffle_rng: SeededRng,
    epochs: int,
) -> None:
    """Minibatch momentum SGD on the composite objective, in place.

    The feature penalty is a sum over all support points; per minibatch it
    is estimated from the support rows that landed in the batch, scaled by
    the number of batches per epoch so the penalty contributes exactly
    once per point per epoch (summed over an epoch this equals adding the
    full penalty at every step). The EWC penalty is data-free and enters
    every step exactly. Support rows sit at the front of the training
    set, so a row index below the support size identifies one.
    """
    x = train_set.features
    y = train_set.one_hot()
    n = len(train_set)
    batches_per_epoch = -(-n // config.batch_size)
    n_support = len(support) if support is not None else 0
    use_feature = (
        state is not None and state.lambda_f > 0 and support is not None and n_support > 0
    )
    use_ewc = state is not None and state.lambda_ewc > 0
    momentum = MomentumState.for_params(model, config.momentum)

    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x[idx], y[idx]
            try:
                trace = forward(model, xb)
            except ShapeError as exc:
                raise TrainingDivergedError(f"non-finite activations: {exc}") from exc
            if not np.isfinite(cross_entropy(trace.outputs, yb)):
                raise TrainingDivergedError("cross-entropy loss is not finite")
            extra = None
            if use_feature:
                in_support = idx < n_support
                if in_support.any():
                    scale = state.lambda_f * batches_per_epoch
                    extra = np.zeros_like(trace.representation)
                    rows = np.flatnonzero(in_support)
                    diff = trace.representation[rows] - state.support_reps_old[idx[rows]]
                    extra[rows] = 2.0 * scale * diff
            grads = backward_from_trace(model, trace, yb, extra)
            if use_ewc:
                _, ewc_grads = ewc_penalty(model, state)
                grads.add_scaled(ewc_grads, state.lambda_ewc)
            sgd_step(model, grads, lr, momentum)


def table2_diagnostic(
    model: NetworkParams,
    real_training_data: Dataset,
    all_training_data: Dataset,
    test_data: Dataset,
) -> tuple[float, float, float]:
    """Accuracies on (new + retained), (new + all old), and test data.

    The gap between the first two exposes underfitting to the old classes
    that the retained sample failed to represent.
    """
    out = []
    for ds in (real_training_data, all_training_data, test_data):
        preds = predict(model, ds.features)
        out.append(accuracy(preds, ds.labels))
    return tuple(out)


def run_experiment_full(
    config: MethodConfig,
    train: Dataset,
    test: Dataset,
    schedule,
) -> tuple[ExperimentLog, NetworkParams | None, ConsolidationState | None]:
    """Run the full incremental schedule; also returns the final model and
    consolidation state so callers can checkpoint them."""
    if not isinstance(schedule, ClassBatchSchedule):
        schedule = ClassBatchSchedule([list(g) for g in schedule])
    for i, group in enumerate(schedule):
        if len(group) == 0:
            raise ScheduleError(f"schedule group {i} is empty")

    class_order = schedule.classes
    slot_of = {int(c): i for i, c in enumerate(class_order)}
    train_batches_raw = split_by_schedule(train, schedule)
    test_batches_raw = split_by_schedule(test, schedule)

    master = SeededRng(config.seed)
    shuffle_rng = master.child(_STREAM_SHUFFLE)
    guess_rng = master.child(_STREAM_GUESS)

    model: NetworkParams | None = None
    if config.method != "random_guess":
        model = init_params(
            train.dim,
            list(config.hidden_dims),
            len(schedule.groups[0]),
            master.child(_STREAM_INIT),
            config.activation,
        )

    log = ExperimentLog(config.method, config.seed, [list(g) for g in schedule])
    support: SupportSet | None = None
    state: ConsolidationState | None = None
    k_seen = 0
    train_slot_batches: list[Dataset] = []
    test_slot_batches: list[Dataset] = []

    for t, group in enumerate(schedule):
        k_seen += len(group)
        train_slot_batches = [b.with_classes(k_seen) for b in train_slot_batches]
        test_slot_batches = [b.with_classes(k_seen) for b in test_slot_batches]
        new_batch = _remap_labels(train_batches_raw[t], slot_of, k_seen)
        if len(new_batch) == 0:
            raise ScheduleError(f"no training data for classes {group}")
        train_slot_batches.append(new_batch)
        test_slot_batches.append(_remap_labels(test_batches_raw[t], slot_of, k_seen))

        tic = time.perf_counter()
        # warm-started methods anneal across increments; from-scratch
        # retraining starts at the full rate every time
        lr = config.learning_rate * config.lr_decay**t
        if config.method == "all_data":
            lr = config.learning_rate
        svm_kkt = None

        if config.method == "random_guess":
            train_set = new_batch
        elif config.method == "all_data":
            model = init_params(
                train.dim,
                list(config.hidden_dims),
                k_seen,
                master.child(_STREAM_REINIT_BASE + t),
                config.activation,
            )
            train_set = _concat(train_slot_batches, k_seen)
            _train_plain_or_regularized(
                model, train_set, None, None, config, lr, shuffle_rng, config.all_data_epochs
            )
        else:
            if t > 0:
                model = expand_output_layer(
                    model, k_seen, master.child(_STREAM_EXPAND_BASE + t), config.new_row_stdev
                )
            if config.method == "fine_tune":
                train_set = new_batch
            else:
                train_set = merge_training_set(support, new_batch).with_classes(k_seen)
            if config.uses_rehearsal:
                # rehearsal never holds more than budget + current batch
                assert len(train_set) <= config.budget + len(new_batch)
            _train_plain_or_regularized(
                model, train_set, support, state, config, lr, shuffle_rng, config.epochs
            )

        # rebuild support set and consolidation state from this round's pool
        if config.uses_rehearsal and config.budget > 0:
            pool = train_set
            reps = compute_representations(model, pool)
            budgets = allocate_budget(config.budget, range(k_seen))
            if config.method == "random_rehearsal":
                support = select_random(
                    pool, reps, budgets, master.child(_STREAM_SELECT_BASE + t)
                )
            else:
                svm_model = train_ovr(
                    SvmProblem(reps, pool.labels, config.svm_c),
                    tol=config.svm_tol,
                    max_epochs=config.svm_max_epochs,
                    seed=config.seed,
                )
                svm_kkt = svm_model.report.max_violation
                support = select_support(
                    svm_model,
                    reps,
                    pool,
                    budgets,
                    uniform=config.uniform_sampling,
                    rng=master.child(_STREAM_SELECT_BASE + t) if config.uniform_sampling else None,
                )
        if config.uses_regularizers:
            if support is not None and len(support) > 0:
                fisher_pool = support.features
                reps_old = support.reps_old.copy()
            else:
                # budget-zero consolidation (EWC-only): sample the round's data
                cap = min(config.fisher_sample_cap, len(train_set))
                pick = master.child(_STREAM_FISHER_POOL_BASE + t).choice(len(train_set), cap)
                fisher_pool = train_set.features[np.sort(pick)]
                reps_old = np.empty((0, model.repr_dim))
            if config.lambda_ewc > 0:
                fisher = fisher_diagonal(
                    model,
                    fisher_pool,
                    config.fisher_samples_per_point,
                    master.child(_STREAM_FISHER_BASE + t),
                )
            else:
                fisher = [np.zeros_like(b) for b in model.blocks()]
            state = ConsolidationState(
                model.copy(), fisher, reps_old, config.lambda_f, config.lambda_ewc
            )
        train_seconds = time.perf_counter() - tic

        # evaluation on the cumulative test set
        cumulative_test = _concat(test_slot_batches, k_seen)
        if config.method == "random_guess":
            preds = guess_rng.integers(0, k_seen, size=len(cumulative_test))
        else:
            preds = predict(model, cumulative_test.features)
        confusion = confusion_matrix(preds, cumulative_test.labels, k_seen)
        per_batch = []
        offset = 0
        for tb in test_slot_batches:
            if len(tb):
                per_batch.append(accuracy(preds[offset : offset + len(tb)], tb.labels))
            else:
                per_batch.append(float("nan"))
            offset += len(tb)
        all_training = _concat(train_slot_batches, k_seen)
        if config.method == "random_guess":
            diag = (1.0 / k_seen, 1.0 / k_seen, accuracy(preds, cumulative_test.labels))
        else:
            diag = table2_diagnostic(model, train_set, all_training, cumulative_test)
        macro_p, macro_r, macro_f1 = macro_prf(confusion)

        audit = []
        if support is not None:
            for i in range(len(support)):
                audit.append(
                    (
                        int(class_order[support.labels[i]]),
                        int(support.source_indices[i]),
                        float(support.margins[i]),
                        bool(support.was_support_vector[i]),
                    )
                )

        log.records.append(
            IncrementRecord(
                increment=t,
                new_classes=[int(c) for c in group],
                seen_classes=[int(c) for c in class_order[:k_seen]],
                train_seconds=train_seconds,
                test_accuracy=accuracy(preds, cumulative_test.labels),
                per_batch_accuracy=per_batch,
                confusion=confusion,
                kappa=cohen_kappa(confusion),
                macro_precision=macro_p,
                macro_recall=macro_r,
                macro_f1=macro_f1,
                diag_real_training=diag[0],
                diag_all_training=diag[1],
                diag_test=diag[2],
                train_set_size=len(train_set),
                support_size=len(support) if support is not None else 0,
                svm_kkt_violation=svm_kkt,
                support_audit=audit,
            )
        )
    return log, model, state


def run_experiment(
    config: MethodConfig,
    train: Dataset,
    test: Dataset,
    schedule,
) -> ExperimentLog:
    """Run the full incremental schedule for one method.

    After each increment the model is evaluated on the union of test data
    of every class seen so far; per-class-batch accuracies feed the
    accuracy matrix.
    """
    log, _, _ = run_experiment_full(config, train, test, schedule)
    return log


def run_increment_supportnet(
    model: NetworkParams,
    state: ConsolidationState | None,
    support_set: SupportSet | None,
    new_batch: Dataset,
    config: MethodConfig,
    increment: int = 0,
):
    """Single-increment view of the rehearsal loop, for stepwise use.

    The model must already be expanded to cover the new classes. Returns
    (model, state, support_set, info dict).
    """
    k = model.n_classes
    if len(new_batch) == 0:
        raise ScheduleError("empty new batch")
    train_set = merge_training_set(support_set, new_batch).with_classes(k)
    shuffle_rng = SeededRng(config.seed, 6000 + increment)
    lr = config.learning_rate * config.lr_decay**increment
    _train_plain_or_regularized(
        model, train_set, support_set, state, config, lr, shuffle_rng, config.epochs
    )
    reps = compute_representations(model, train_set)
    budgets = allocate_budget(config.budget, range(k))
    svm_model = train_ovr(
        SvmProblem(reps, train_set.labels, config.svm_c),
        tol=config.svm_tol,
        max_epochs=config.svm_max_epochs,
        seed=config.seed,
    )
    support = select_support(svm_model, reps, train_set, budgets)
    master = SeededRng(config.seed)
    if config.lambda_ewc > 0:
        fisher = fisher_diagonal(
            model, support.features, config.fisher_samples_per_point,
            master.child(_STREAM_FISHER_BASE + increment),
        )
    else:
        fisher = [np.zeros_like(b) for b in model.blocks()]
    new_state = ConsolidationState(
        model.copy(), fisher, support.reps_old.copy(), config.lambda_f, config.lambda_ewc
    )
    info = {
        "train_set_size": len(train_set),
        "svm_kkt_violation": svm_model.report.max_violation,
    }
    return model, new_state, support, info


def run_baseline_random_rehearsal(
    config: MethodConfig, train: Dataset, test: Dataset, schedule
) -> ExperimentLog:
    """Memory-matched control: same loop, uniform selection, no regularizers."""
    cfg_dict = asdict(config)
    cfg_dict["method"] = "random_rehearsal"
    cfg_dict["hidden_dims"] = tuple(cfg_dict["hidden_dims"])
    return run_experiment(MethodConfig(**cfg_dict), train, test, schedule)
