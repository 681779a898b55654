import json

import numpy as np
import pytest

from supportnet.core_math import SeededRng
from supportnet.data import Dataset, synthetic_blobs
from supportnet.engine import (
    MethodConfig,
    run_baseline_random_rehearsal,
    run_experiment,
    run_experiment_full,
    run_increment_supportnet,
    table2_diagnostic,
)
from supportnet.errors import ParameterError, ScheduleError
from supportnet.network import expand_output_layer, init_params
from supportnet.support_selector import allocate_budget

SCHEDULE = [[0, 1], [2, 3], [4, 5]]


def blob_data(seed=777, classes=6, dim=16, n_train=200, n_test=100, separation=3.0):
    train = synthetic_blobs(classes, dim, n_train, separation, SeededRng(seed, 1), "train")
    test = synthetic_blobs(classes, dim, n_test, separation, SeededRng(seed, 2), "test")
    return train, test


def small_config(method, **kw):
    defaults = dict(
        method=method,
        budget=120,
        epochs=5,
        all_data_epochs=5,
        hidden_dims=(32, 16),
        seed=1,
        learning_rate=0.05,
        lambda_f=1e-3,
        lambda_ewc=1.0,
    )
    defaults.update(kw)
    return MethodConfig(**defaults)


@pytest.fixture(scope="module")
def blobs():
    return blob_data()


class TestMethodConfig:
    def test_unknown_method_rejected(self):
        with pytest.raises(ParameterError):
            MethodConfig(method="magic")

    def test_support_only_zeroes_coefficients(self):
        cfg = MethodConfig(method="support_only", lambda_f=5.0, lambda_ewc=7.0)
        assert cfg.lambda_f == 0.0 and cfg.lambda_ewc == 0.0

    def test_ablations_zero_their_coefficient(self):
        assert MethodConfig(method="supportnet_no_ewc", lambda_ewc=9.0).lambda_ewc == 0.0
        assert MethodConfig(method="supportnet_no_feature", lambda_f=9.0).lambda_f == 0.0

    def test_fine_tune_has_no_budget(self):
        assert MethodConfig(method="fine_tune", budget=500).budget == 0


class TestScheduleHandling:
    def test_missing_class_data_rejected(self, blobs):
        train, test = blobs
        with pytest.raises(ScheduleError):
            run_experiment(
                small_config("fine_tune"), train, test, [[0, 1], [2, 3], [4, 5], [6, 7]]
            )

    def test_empty_group_rejected(self, blobs):
        train, test = blobs
        with pytest.raises(ScheduleError):
            run_experiment(small_config("fine_tune"), train, test, [[0, 1], [], [2, 3, 4, 5]])

    def test_classes_grow_monotonically(self, blobs):
        train, test = blobs
        log = run_experiment(small_config("fine_tune", epochs=1), train, test, SCHEDULE)
        seen = [len(r.seen_classes) for r in log.records]
        assert seen == [2, 4, 6]
        assert [len(r.per_batch_accuracy) for r in log.records] == [1, 2, 3]

    def test_nonascending_class_labels_supported(self, blobs):
        train, test = blobs
        log = run_experiment(
            small_config("fine_tune", epochs=1), train, test, [[4, 5], [0, 3], [1, 2]]
        )
        assert log.records[0].new_classes == [4, 5]
        assert log.records[-1].confusion.shape == (6, 6)


class TestRandomGuess:
    def test_chance_level_accuracy(self, blobs):
        train, test = blobs
        log = run_experiment(small_config("random_guess"), train, test, SCHEDULE)
        for r in log.records:
            k = len(r.seen_classes)
            n = r.confusion.sum()
            # binomial: 5 sigma around 1/k
            sigma = np.sqrt((1 / k) * (1 - 1 / k) / n)
            assert abs(r.test_accuracy - 1 / k) < 5 * sigma


class TestAllData:
    def test_trains_on_everything_each_round(self, blobs):
        train, test = blobs
        log = run_experiment(small_config("all_data"), train, test, SCHEDULE)
        assert [r.train_set_size for r in log.records] == [400, 800, 1200]

    def test_is_the_strongest_method(self, blobs):
        train, test = blobs
        final = {}
        for method in ("all_data", "fine_tune"):
            log = run_experiment(small_config(method), train, test, SCHEDULE)
            final[method] = log.final_accuracy
        assert final["all_data"] > final["fine_tune"]


class TestFineTuneCollapse:
    def test_forgets_first_batch(self, blobs):
        train, test = blobs
        log = run_experiment(small_config("fine_tune"), train, test, SCHEDULE)
        matrix = log.accuracy_matrix()
        assert matrix[0, 0] > 0.9  # learned at first
        assert matrix[-1, 0] < 0.2  # forgotten at the end
        assert log.final_accuracy < 0.5


class TestRehearsalBookkeeping:
    def test_memory_budget_respected(self, blobs):
        train, test = blobs
        log = run_experiment(small_config("supportnet"), train, test, SCHEDULE)
        for r in log.records:
            assert r.train_set_size <= 120 + 400
            assert r.support_size <= 120

    def test_support_covers_all_seen_classes(self, blobs):
        train, test = blobs
        log = run_experiment(small_config("supportnet"), train, test, SCHEDULE)
        for r in log.records:
            k = len(r.seen_classes)
            budgets = allocate_budget(120, range(k))
            counts = {}
            for cls, _, _, _ in r.support_audit:
                counts[cls] = counts.get(cls, 0) + 1
            # audit rows are keyed by original class label; map through order
            slot_budget = {r.seen_classes[slot]: b for slot, b in budgets.items()}
            assert counts == slot_budget

    def test_budget_zero_random_rehearsal_equals_fine_tune(self, blobs):
        train, test = blobs
        ft = run_experiment(small_config("fine_tune"), train, test, SCHEDULE)
        rr = run_experiment(small_config("random_rehearsal", budget=0), train, test, SCHEDULE)
        for a, b in zip(ft.records, rr.records):
            assert a.test_accuracy == b.test_accuracy

    def test_full_budget_trains_on_all_old_data(self, blobs):
        train, test = blobs
        log = run_experiment(
            small_config("random_rehearsal", budget=2400), train, test, SCHEDULE
        )
        # 400 per increment: with the full budget the merged set is all data
        assert [r.train_set_size for r in log.records] == [400, 800, 1200]

    def test_wrapper_matches_config(self, blobs):
        train, test = blobs
        direct = run_experiment(small_config("random_rehearsal"), train, test, SCHEDULE)
        wrapped = run_baseline_random_rehearsal(small_config("supportnet"), train, test, SCHEDULE)
        for a, b in zip(direct.records, wrapped.records):
            assert a.test_accuracy == b.test_accuracy

    def test_budget_zero_supportnet_is_ewc_only(self, blobs):
        # no retained data, but the EWC penalty still anchors old weights
        train, test = blobs
        log = run_experiment(
            small_config("supportnet", budget=0, lambda_f=0.0, lambda_ewc=5.0),
            train,
            test,
            SCHEDULE,
        )
        for r in log.records:
            assert r.support_size == 0
            assert r.train_set_size == 400  # new classes only
        ft = run_experiment(small_config("fine_tune"), train, test, SCHEDULE)
        assert log.final_accuracy != ft.final_accuracy  # the penalty did something


class TestDeterminism:
    def _strip_times(self, log):
        blob = json.loads(log.to_json())
        for r in blob["records"]:
            del r["train_seconds"]
        return blob

    @pytest.mark.parametrize("method", ["supportnet", "random_rehearsal", "all_data"])
    def test_same_seed_bit_identical(self, blobs, method):
        train, test = blobs
        a = run_experiment(small_config(method, epochs=2), train, test, SCHEDULE)
        b = run_experiment(small_config(method, epochs=2), train, test, SCHEDULE)
        assert self._strip_times(a) == self._strip_times(b)

    def test_different_seed_differs(self, blobs):
        train, test = blobs
        a = run_experiment(small_config("supportnet", epochs=2, seed=1), train, test, SCHEDULE)
        b = run_experiment(small_config("supportnet", epochs=2, seed=2), train, test, SCHEDULE)
        assert self._strip_times(a) != self._strip_times(b)


class TestLogConsistency:
    def test_accuracy_matrix_weighted_average_identity(self, blobs):
        train, test = blobs
        log = run_experiment(small_config("supportnet"), train, test, SCHEDULE)
        matrix = log.accuracy_matrix()
        sizes = [100 * 2] * 3  # test examples per batch
        for t, r in enumerate(log.records):
            weights = np.array(sizes[: t + 1])
            weighted = (matrix[t, : t + 1] * weights).sum() / weights.sum()
            assert abs(weighted - r.test_accuracy) < 1e-12

    def test_confusion_row_sums_match_test_sizes(self, blobs):
        train, test = blobs
        log = run_experiment(small_config("supportnet", epochs=2), train, test, SCHEDULE)
        final = log.records[-1]
        assert final.confusion.sum() == 600
        assert (final.confusion.sum(axis=1) == 100).all()

    def test_svm_kkt_logged_for_supportnet(self, blobs):
        # blob representations make ill-conditioned duals; the epoch cap is
        # raised so the residual bound is about the solution, not the cap
        train, test = blobs
        log = run_experiment(
            small_config("supportnet", svm_max_epochs=30000), train, test, SCHEDULE
        )
        for r in log.records:
            assert r.svm_kkt_violation is not None
            assert r.svm_kkt_violation < 1e-3


class TestTable2Diagnostic:
    def test_equal_sets_report_equal_slots(self):
        params = init_params(4, [8], 2, SeededRng(0))
        rng = np.random.default_rng(1)
        ds = Dataset(rng.normal(size=(30, 4)), rng.integers(0, 2, size=30), 2)
        real, all_acc, _ = table2_diagnostic(params, ds, ds, ds)
        assert real == all_acc

    def test_diag_matches_real_equals_all_when_budget_is_full(self, blobs):
        train, test = blobs
        log = run_experiment(
            small_config("random_rehearsal", budget=2400), train, test, SCHEDULE
        )
        for r in log.records:
            assert abs(r.diag_real_training - r.diag_all_training) < 1e-12


class TestFusedStepEquivalence:
    def test_one_full_batch_step_matches_total_loss_gradient(self):
        # the engine's fused backward (feature term folded into the
        # representation gradient) must walk the exact objective
        from supportnet.consolidation import ConsolidationState, total_loss
        from supportnet.engine import _train_plain_or_regularized
        from supportnet.network import MomentumState, forward, sgd_step
        from supportnet.support_selector import SupportSet

        params = init_params(5, [7, 6], 3, SeededRng(31), "tanh")
        rng = np.random.default_rng(32)
        sx = rng.normal(size=(4, 5))
        old_reps = forward(params, sx).representation + 0.1
        support = SupportSet(
            sx, np.zeros(4, dtype=np.int64), old_reps, np.zeros(4),
            np.ones(4, dtype=bool), np.arange(4), 4,
        )
        fisher = [np.abs(rng.normal(size=b.shape)) for b in params.blocks()]
        state = ConsolidationState(params.copy(), fisher, old_reps.copy(), 0.3, 2.0)
        for block in params.blocks():
            block += 0.02
        feats = np.vstack([sx, rng.normal(size=(6, 5))])
        labels = np.concatenate([np.zeros(4, dtype=np.int64), rng.integers(0, 3, size=6)])
        train_set = Dataset(feats, labels, 3)

        manual = params.copy()
        _, grads = total_loss(manual, train_set, support, state)
        sgd_step(manual, grads, 0.05, MomentumState.for_params(manual, 0.9))

        fused = params.copy()
        cfg = MethodConfig(
            method="supportnet", budget=4, epochs=1, batch_size=100, seed=0,
            lambda_f=0.3, lambda_ewc=2.0, momentum=0.9,
        )
        _train_plain_or_regularized(fused, train_set, support, state, cfg, 0.05, SeededRng(9), 1)

        for a, b in zip(fused.blocks(), manual.blocks()):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


class TestStepwiseIncrement:
    def test_single_increment_flow(self, blobs):
        train, test = blobs
        cfg = small_config("supportnet", budget=60)
        model = init_params(16, [32, 16], 2, SeededRng(3))
        first = synthetic_blobs(2, 16, 100, 3.0, SeededRng(5, 1))
        model, state, support, info = run_increment_supportnet(
            model, None, None, first, cfg, increment=0
        )
        assert len(support) == 60
        assert info["svm_kkt_violation"] < 1e-3
        grown = expand_output_layer(model, 4, SeededRng(6))
        second = Dataset(
            np.vstack([synthetic_blobs(4, 16, 50, 3.0, SeededRng(7, 1)).features[100:]]),
            np.concatenate([np.full(50, 2), np.full(50, 3)]),
            4,
        )
        grown, state2, support2, info2 = run_increment_supportnet(
            grown, state, support, second, cfg, increment=1
        )
        assert sorted(np.unique(support2.labels)) == [0, 1, 2, 3]
        assert len(support2) == 60

    def test_empty_batch_rejected(self):
        cfg = small_config("supportnet")
        model = init_params(4, [8], 2, SeededRng(0))
        empty = Dataset(np.empty((0, 4)), np.empty(0, dtype=int), 2)
        with pytest.raises(ScheduleError):
            run_increment_supportnet(model, None, None, empty, cfg)
