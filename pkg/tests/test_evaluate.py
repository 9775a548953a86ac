import copy
import json

import numpy as np
import pytest

from wdmatch.data import DomainDataset, SyntheticShiftSpec, synthetic_pair_with_hidden_labels
from wdmatch.errors import ConfigError, ValidationError
from wdmatch.evaluate import (
    ExperimentConfig,
    accuracy,
    baseline_source_only,
    baseline_target_only,
    hold_out_fold,
    run_cv,
    stratified_folds,
    train_hinge_classifier,
    write_report,
)
from wdmatch.model import HyperParams


def synthetic_config(**overrides):
    spec = SyntheticShiftSpec(
        dim=3, samples=40, separation=6.0, angle=0.2, translation=0.3, seed=2
    )
    base = dict(
        synthetic=spec,
        hp=HyperParams(outer_iters=3, subgrad_iters=25, k=3, r=2),
        folds=4,
        seed=5,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def strip_timing(report):
    report = copy.deepcopy(report)
    for entry in report["methods"].values():
        entry.pop("timing", None)
    return report


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([2.0, -1.0], [1.0, -1.0]) == 1.0

    def test_all_wrong(self):
        assert accuracy([2.0, -1.0], [-1.0, 1.0]) == 0.0

    def test_zero_score_counts_as_positive(self):
        assert accuracy([0.0], [1.0]) == 1.0
        assert accuracy([0.0], [-1.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            accuracy([1.0], [1.0, -1.0])


class TestHingeBaselines:
    def test_separable_training_accuracy(self):
        rng = np.random.default_rng(0)
        x = np.vstack([rng.normal(3.0, 0.5, (30, 2)), rng.normal(-3.0, 0.5, (30, 2))])
        y = np.concatenate([np.ones(30), -np.ones(30)])
        w = train_hinge_classifier(x, y)
        assert accuracy(x @ w, y) == 1.0

    def test_zero_shift_transfers(self):
        spec = SyntheticShiftSpec(dim=3, samples=300, separation=4.0, seed=6)
        source, target, hidden = synthetic_pair_with_hidden_labels(spec)
        w = baseline_source_only(source, HyperParams())
        src_acc = accuracy(source.features @ w, source.labels)
        tgt_acc = accuracy(target.features[target.labeled_count:] @ w, hidden)
        assert abs(src_acc - tgt_acc) < 0.05

    def test_adversarial_flip_scores_below_chance(self):
        spec = SyntheticShiftSpec(
            dim=2, samples=300, separation=6.0, angle=np.pi, seed=7
        )
        source, target, hidden = synthetic_pair_with_hidden_labels(spec)
        w = baseline_source_only(source, HyperParams())
        assert accuracy(target.features[target.labeled_count:] @ w, hidden) < 0.5

    def test_target_only_needs_labels(self):
        unlabeled = DomainDataset(np.zeros((3, 2)), [])
        with pytest.raises(ValidationError):
            baseline_target_only(unlabeled, HyperParams())


class TestStratifiedFolds:
    def test_partition_property(self):
        labels = np.where(np.random.default_rng(1).random(23) < 0.4, 1.0, -1.0)
        folds = stratified_folds(labels, 5, seed=3)
        seen = np.concatenate(folds)
        assert sorted(seen.tolist()) == list(range(23))
        sizes = sorted(len(f) for f in folds)
        assert sizes[-1] - sizes[0] <= 1

    def test_class_balance(self):
        labels = np.array([1.0] * 20 + [-1.0] * 20)
        folds = stratified_folds(labels, 4, seed=0)
        for fold in folds:
            assert np.sum(labels[fold] == 1.0) == 5

    def test_small_classes_still_fill_every_fold(self):
        labels = np.array([1.0] * 5 + [-1.0] * 5)
        folds = stratified_folds(labels, 10, seed=0)
        assert all(len(f) == 1 for f in folds)

    def test_too_few_points(self):
        with pytest.raises(ConfigError):
            stratified_folds(np.ones(9), 10, seed=0)


class TestHoldOutFold:
    def test_held_out_rows_stay_unlabeled(self):
        rng = np.random.default_rng(4)
        target = DomainDataset(rng.standard_normal((10, 2)), np.where(rng.random(6) < 0.5, 1.0, -1.0))
        fold_target, test_x, test_y = hold_out_fold(target, np.array([1, 4]))
        assert fold_target.n == target.n
        assert fold_target.labeled_count == 4
        np.testing.assert_array_equal(test_x, target.features[[1, 4]])
        np.testing.assert_array_equal(test_y, target.labels[[1, 4]])
        # The held-out feature rows are still present in the fold dataset.
        for row in test_x:
            assert np.any(np.all(fold_target.features == row, axis=1))


class TestExperimentConfig:
    def test_requires_some_dataset(self):
        with pytest.raises(ConfigError):
            ExperimentConfig()

    def test_rejects_both_kinds(self):
        spec = SyntheticShiftSpec(dim=2, samples=10, separation=1.0)
        with pytest.raises(ConfigError):
            ExperimentConfig(
                source={"path": "a", "format": "dense-csv"},
                target={"path": "b", "format": "dense-csv"},
                synthetic=spec,
            )

    def test_folds_floor(self):
        with pytest.raises(ConfigError):
            synthetic_config(folds=1)

    def test_unknown_baseline(self):
        with pytest.raises(ConfigError):
            synthetic_config(baselines=("nearest-centroid",))

    def test_no_matching_alias(self):
        config = synthetic_config(baselines=("no-matching",))
        assert config.baselines == ("no-adaptation",)

    def test_json_round_trip(self):
        config = synthetic_config()
        back = ExperimentConfig.from_json_dict(
            json.loads(json.dumps(config.to_json_dict()))
        )
        assert back == config


class TestRunCV:
    def test_separable_pair_all_folds_perfect(self):
        spec = SyntheticShiftSpec(dim=2, samples=60, separation=12.0, seed=9)
        config = ExperimentConfig(
            synthetic=spec,
            hp=HyperParams(outer_iters=3, subgrad_iters=30, k=3, r=2),
            folds=3,
            seed=1,
            baselines=("source-only",),
        )
        report = run_cv(config)
        for entry in report["methods"].values():
            assert entry["fold_accuracies"] == [1.0, 1.0, 1.0]

    def test_coin_flip_labels_near_chance(self):
        spec = SyntheticShiftSpec(dim=3, samples=300, separation=4.0, noise=0.5, seed=10)
        config = ExperimentConfig(
            synthetic=spec,
            hp=HyperParams(outer_iters=4, subgrad_iters=30, r=2, k=4),
            folds=10,
            seed=2,
            baselines=("source-only",),
        )
        report = run_cv(config)
        for method in ("proposed", "source-only"):
            assert 0.35 <= report["methods"][method]["mean_accuracy"] <= 0.65

    def test_fold_count_exceeding_labels_rejected(self):
        spec = SyntheticShiftSpec(dim=2, samples=90, separation=3.0, seed=11)
        config = synthetic_config(synthetic=spec, folds=10)
        # 90 samples -> 9 labeled target points < 10 folds.
        with pytest.raises(ConfigError):
            run_cv(config)

    def test_report_structure_and_partition(self):
        config = synthetic_config()
        report = run_cv(config)
        methods = report["methods"]
        assert set(methods) == {"proposed", "source-only", "target-only", "no-adaptation"}
        labeled = 4  # ceil(40/10)
        seen = sorted(i for fold in report["fold_test_indices"] for i in fold)
        assert seen == list(range(labeled))
        for entry in methods.values():
            assert len(entry["fold_accuracies"]) == config.folds
            assert entry["mean_accuracy"] == pytest.approx(
                float(np.mean(entry["fold_accuracies"]))
            )
            assert all(0.0 <= a <= 1.0 for a in entry["fold_accuracies"])
        for trace in methods["proposed"]["objective_traces"]:
            assert np.all(np.diff(np.asarray(trace)) <= 1e-8)

    def test_reports_reproducible_modulo_timing(self):
        config = synthetic_config()
        a = strip_timing(run_cv(config))
        b = strip_timing(run_cv(config))
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_parallel_matches_serial(self):
        config = synthetic_config(folds=2)
        serial = strip_timing(run_cv(config))
        parallel = strip_timing(run_cv(ExperimentConfig(**{**config.__dict__, "parallel": 2})))
        serial["config"]["parallel"] = parallel["config"]["parallel"] = None
        assert json.dumps(serial, sort_keys=True) == json.dumps(parallel, sort_keys=True)


class TestWriteReport:
    def test_writes_json_and_tsv(self, tmp_path):
        config = synthetic_config(baselines=("source-only",), folds=2)
        report = run_cv(config)
        out = tmp_path / "report.json"
        write_report(report, out)
        parsed = json.loads(out.read_text())
        assert parsed["folds"] == 2
        lines = (tmp_path / "report.tsv").read_text().strip().splitlines()
        assert lines[0] == "method\tfold\taccuracy"
        assert len(lines) == 1 + 2 * len(report["methods"])
