"""Acceptance suite: one test per numbered criterion, each printing a
PASS line with its measured figures (run pytest -s or -rA to see them).

Criteria 4-8 and 10 need the real MNIST IDX files. They look in
$SUPPORTNET_MNIST_DIR (default ./data/mnist) and skip with an explicit
reason when the files are absent; scripts/fetch_mnist.py downloads them
on a networked machine. Everything else runs self-contained.
"""

import os
import time

import numpy as np
import pytest

from gradcheck import max_relative_error, numerical_gradients
from supportnet.cli import main as cli_main
from supportnet.consolidation import ConsolidationState, fisher_diagonal, total_loss
from supportnet.core_math import SeededRng
from supportnet.data import Dataset, load_idx
from supportnet.engine import MethodConfig, run_experiment
from supportnet.network import forward, init_params, last_layer_gradient_formula, backward_from_trace
from supportnet.support_selector import SupportSet
from supportnet.svm import SvmProblem, brute_force_qp, model_objectives, train_ovr

MNIST_DIR = os.environ.get("SUPPORTNET_MNIST_DIR", os.path.join("data", "mnist"))
MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)
MNIST_SCHEDULE = [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]
SEEDS = (0, 1, 2)


def report(num, name, detail):
    print(f"\nCRITERION {num} PASS - {name}: {detail}")


def mnist_available():
    return all(os.path.exists(os.path.join(MNIST_DIR, f)) for f in MNIST_FILES)


def require_mnist():
    if not mnist_available():
        pytest.skip(
            f"MNIST IDX files not found in {MNIST_DIR} (set SUPPORTNET_MNIST_DIR "
            "or run scripts/fetch_mnist.py); criterion skipped, not waived"
        )


# ---------------------------------------------------------------- criterion 1


def test_criterion_1_full_objective_gradient_check():
    """Every parameter gradient of the combined objective matches central
    finite differences within 1e-5 relative error."""
    start = time.perf_counter()
    params = init_params(6, [8, 7], 3, SeededRng(1), "tanh")
    rng = np.random.default_rng(2)
    batch = Dataset(rng.normal(size=(5, 6)), rng.integers(0, 3, size=5), 3)
    sx = rng.normal(size=(4, 6))
    old_reps = forward(params, sx).representation + 0.25
    support = SupportSet(
        sx, np.zeros(4, dtype=np.int64), old_reps, np.zeros(4),
        np.ones(4, dtype=bool), np.arange(4), 4,
    )
    fisher = [np.abs(rng.normal(size=b.shape)) for b in params.blocks()]
    state = ConsolidationState(params.copy(), fisher, old_reps, 0.8, 2.5)
    for block in params.blocks():
        block += 0.04

    def loss():
        return total_loss(params, batch, support, state)[0]

    _, analytic = total_loss(params, batch, support, state)
    numeric = numerical_gradients(loss, params)
    err = max_relative_error(analytic.blocks(), numeric)
    elapsed = time.perf_counter() - start
    assert err < 1e-5
    assert elapsed < 10.0
    report(1, "full-objective gradient check", f"max rel err {err:.2e} in {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 2


def test_criterion_2_last_layer_closed_form_equivalence():
    """backward's output block equals the closed-form negative gradient
    (sign-flipped) within 1e-12 on 100 random batches."""
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        k, t, n = rng.integers(2, 6), rng.integers(1, 7), rng.integers(1, 9)
        params = init_params(4, [int(t)], int(k), SeededRng(seed), "tanh")
        x = rng.normal(size=(n, 4))
        labels = rng.integers(0, k, size=n)
        hot = np.zeros((n, k))
        hot[np.arange(n), labels] = 1.0
        trace = forward(params, x)
        grads = backward_from_trace(params, trace, hot)
        closed = last_layer_gradient_formula(trace.outputs, hot, trace.representation)
        worst = max(worst, float(np.abs(grads.output + closed).max()))
    elapsed = time.perf_counter() - start
    assert worst < 1e-12
    assert elapsed < 5.0
    report(2, "closed-form last-layer equivalence", f"max abs diff {worst:.2e} over 100 batches in {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 3


def test_criterion_3_svm_oracle_equivalence():
    """Dual coordinate descent matches the projected-gradient oracle on 25
    random small problems: objectives within 1e-4 relative, support sets
    identical whenever every dual value is clear of the threshold."""
    start = time.perf_counter()
    checked_sets = 0
    for fixture in range(25):
        rng = np.random.default_rng(1000 + fixture)
        n = int(rng.integers(6, 21))
        t = int(rng.integers(2, 5))
        k = int(rng.integers(2, 4))
        centers = rng.normal(scale=1.5, size=(k, t))
        rows, labels = [], []
        for cls in range(k):
            count = n // k if cls < k - 1 else n - (n // k) * (k - 1)
            rows.append(centers[cls] + rng.normal(size=(count, t)))
            labels.extend([cls] * count)
        problem = SvmProblem(np.vstack(rows), np.array(labels), C=1.0)
        cd = train_ovr(problem, tol=1e-7, max_epochs=30000, seed=fixture)
        bf = brute_force_qp(problem)
        cd_obj, bf_obj = model_objectives(cd), model_objectives(bf)
        np.testing.assert_allclose(cd_obj, bf_obj, rtol=1e-4)
        for col, cls in enumerate(cd.classes):
            alphas = bf.dual_coefs[col]
            if np.all((alphas < cd.alpha_tol) | (alphas > cd.alpha_tol + 1e-3)):
                assert np.array_equal(cd.support_indices(cls), bf.support_indices(cls))
                checked_sets += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report(3, "SVM oracle equivalence", f"25 fixtures, {checked_sets} unambiguous support sets, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 9


def test_criterion_9_fisher_estimator_accuracy():
    """Empirical Fisher of a softmax regression within 3% of the analytic
    value at 1e5 label draws."""
    start = time.perf_counter()
    params = init_params(1, [], 2, SeededRng(5), init_stdev=0.5)
    x = np.linspace(-1.5, 1.5, 40).reshape(-1, 1)
    probs = forward(params, x).outputs
    analytic = (probs[:, 0] * (1 - probs[:, 0]) * x[:, 0] ** 2).mean()
    est = fisher_diagonal(params, x, 2500, SeededRng(6))
    rel = float(np.abs(est[0][:, 0] - analytic).max() / analytic)
    elapsed = time.perf_counter() - start
    assert rel < 0.03
    assert elapsed < 60.0
    report(9, "Fisher estimator", f"rel dev {rel:.2%} at 1e5 draws in {elapsed:.1f}s")


# ----------------------------------------------------- EWC sweep smoke check


def test_ewc_sweep_runs_on_synthetic_blobs(tmp_path):
    """The coefficient sweep must run end to end on synthetic data across
    the full coefficient range and emit all five summary columns. The
    learning rate keeps the largest coefficient dynamically stable."""
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(
        """
[data]
source = synthetic
classes = 4
dim = 8
train_per_class = 50
test_per_class = 25
schedule = 0,1|2,3
[model]
hidden = 16,8
[method]
name = supportnet
budget = 40
lambda_f = 0.0001
[optimizer]
epochs = 2
lr = 1e-5
seed = 3
"""
    )
    out = tmp_path / "out"
    code = cli_main(
        ["sweep-ewc", "--config", str(cfg), "--out", str(out),
         "--coeffs", "1,10,100,1000,10000,100000"]
    )
    assert code == 0
    rows = (out / "summary.csv").read_text().strip().splitlines()
    assert rows[0] == "lambda_ewc,accuracy,kappa_score,macro_f1,macro_precision,macro_recall"
    assert len(rows) == 7
    report("EWC-sweep", "end-to-end on synthetic blobs", "6 coefficients, 5 criteria columns")


# ------------------------------------------------------- MNIST run machinery


def mnist_config(method, budget, seed, **kw):
    settings = dict(
        method=method,
        budget=budget,
        epochs=10,
        all_data_epochs=10,  # matched per-increment epochs for the runtime claim
        learning_rate=0.05,
        lr_decay=0.7,
        momentum=0.9,
        batch_size=64,
        hidden_dims=(256, 128),
        activation="relu",
        lambda_f=1e-4,
        lambda_ewc=1.0,
        svm_c=0.1,
        svm_max_epochs=3000,
        seed=seed,
    )
    settings.update(kw)
    return MethodConfig(**settings)


@pytest.fixture(scope="module")
def mnist_data():
    require_mnist()
    train = load_idx(
        os.path.join(MNIST_DIR, MNIST_FILES[0]), os.path.join(MNIST_DIR, MNIST_FILES[1]), "train"
    )
    test = load_idx(
        os.path.join(MNIST_DIR, MNIST_FILES[2]), os.path.join(MNIST_DIR, MNIST_FILES[3]), "test"
    )
    assert len(train) == 60000 and train.dim == 784
    assert len(test) == 10000
    return train, test


class _RunCache:
    """Shared MNIST runs so criteria 4-8/10 reuse the same experiments."""

    def __init__(self, train, test):
        self.train = train
        self.test = test
        self.cache = {}

    def get(self, method, budget, seed):
        key = (method, budget, seed)
        if key not in self.cache:
            cfg = mnist_config(method, budget, seed)
            self.cache[key] = run_experiment(cfg, self.train, self.test, MNIST_SCHEDULE)
        return self.cache[key]

    def mean_final(self, method, budget):
        return float(np.mean([self.get(method, budget, s).final_accuracy for s in SEEDS]))


@pytest.fixture(scope="module")
def mnist_runs(mnist_data):
    return _RunCache(*mnist_data)


# ---------------------------------------------------------------- criterion 4


def test_criterion_4_mnist_forgetting_curve(mnist_runs):
    """Final cumulative accuracy >= 0.93 and within 3 points of the same-
    architecture all-data retraining, averaged over 3 seeds."""
    start = time.perf_counter()
    sn = mnist_runs.mean_final("supportnet", 2000)
    ad = mnist_runs.mean_final("all_data", 0)
    elapsed = time.perf_counter() - start
    assert sn >= 0.93
    assert sn >= ad - 0.03
    report(4, "MNIST forgetting curve", f"supportnet {sn:.4f}, all_data {ad:.4f}, {elapsed / 60:.0f} min")


# ---------------------------------------------------------------- criterion 5


def test_criterion_5_fine_tune_collapse(mnist_runs):
    """Fine-tuning alone collapses: final accuracy <= 0.30 and the oldest
    batch is essentially forgotten (accuracy-matrix entry <= 0.10)."""
    finals, oldest = [], []
    for seed in SEEDS:
        log = mnist_runs.get("fine_tune", 0, seed)
        finals.append(log.final_accuracy)
        oldest.append(log.accuracy_matrix()[-1, 0])
    assert float(np.mean(finals)) <= 0.30
    assert float(np.mean(oldest)) <= 0.10
    report(5, "catastrophic-forgetting contrast", f"fine_tune final {np.mean(finals):.4f}, oldest batch {np.mean(oldest):.4f}")


# ---------------------------------------------------------------- criterion 6


def test_criterion_6_selection_superiority(mnist_runs):
    """Margin-ranked selection with a quarter of the memory stays within a
    point of uniform rehearsal at full budget (seed-averaged)."""
    sn_small = mnist_runs.mean_final("supportnet", 500)
    rr_full = mnist_runs.mean_final("random_rehearsal", 2000)
    assert sn_small >= rr_full - 0.01
    report(6, "selection-strategy superiority", f"supportnet@500 {sn_small:.4f} vs random_rehearsal@2000 {rr_full:.4f}")


# ---------------------------------------------------------------- criterion 7


def test_criterion_7_support_size_monotonicity(mnist_runs):
    """Accuracy over budgets {200,...,2000} is non-decreasing within a
    1-point tolerance and saturates: the 200->1000 gain exceeds the
    1000->2000 gain."""
    start = time.perf_counter()
    budgets = [200, 500, 1000, 1500, 2000]
    finals = [mnist_runs.mean_final("supportnet", b) for b in budgets]
    for a, b in zip(finals, finals[1:]):
        assert b >= a - 0.01
    assert (finals[2] - finals[0]) > (finals[4] - finals[2])
    elapsed = time.perf_counter() - start
    assert elapsed < 7200.0
    report(7, "support-size monotonicity", f"{[round(f, 4) for f in finals]} in {elapsed / 60:.0f} min")


# ---------------------------------------------------------------- criterion 8


def test_criterion_8_diagnostic_gap_direction(mnist_runs):
    """SupportNet's real-to-all training accuracy gap is smaller than the
    uniform-rehearsal control's gap."""
    gaps = {}
    for method in ("supportnet", "random_rehearsal"):
        vals = []
        for seed in SEEDS:
            r = mnist_runs.get(method, 2000, seed).records[-1]
            vals.append(r.diag_real_training - r.diag_all_training)
        gaps[method] = float(np.mean(vals))
    assert gaps["supportnet"] < gaps["random_rehearsal"]
    report(8, "underfitting diagnostic", f"gap supportnet {gaps['supportnet']:.4f} < random {gaps['random_rehearsal']:.4f}")


# --------------------------------------------------------------- criterion 10


def test_criterion_10_runtime_accounting(mnist_runs):
    """Accumulated SupportNet training seconds stay below accumulated
    all-data retraining seconds at matched per-increment epochs."""
    sn = float(np.mean([mnist_runs.get("supportnet", 2000, s).total_train_seconds for s in SEEDS]))
    ad = float(np.mean([mnist_runs.get("all_data", 0, s).total_train_seconds for s in SEEDS]))
    assert sn < ad
    report(10, "runtime accounting", f"supportnet {sn:.0f}s < all_data {ad:.0f}s (matched epochs)")
