import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdseq.config import config_from_dict
from spdseq.errors import ConfigError, MissingClass, RecordingTooShort
from spdseq.harness import (FoldSpec, MetricsReport, RecordingTokens, TrainConfig, ablation_suite, aggregate,
                            build_sequences, confusion_matrix, cross_validate, evaluate, format_table,
                            load_model, make_folds, oversample, target_indices, train)
from spdseq.model import ModelConfig

TINY = ModelConfig(d_in=15, L=3, t=3, p=6, h=3, ff_dim=28, n_layers_intra=1, n_layers_inter=1, classes=3)


class TestTargets:
    def test_train(self):
        idx = target_indices(100, 10, "train")
        assert len(idx) == 80 and idx[0] == 10 and idx[-1] == 89

    def test_test_clip(self):
        idx = target_indices(100, 10, "test", clip_test=24)
        assert len(idx) == 52 and idx[0] == 24 and idx[-1] == 75

    def test_too_short(self):
        with pytest.raises(RecordingTooShort):
            target_indices(20, 10)

    def test_clip_smaller_than_context(self):
        with pytest.raises(ConfigError):
            target_indices(100, 10, "test", clip_test=5)

    @given(st.integers(0, 24), st.integers(49, 300))
    def test_clipped_targets_independent_of_context(self, ell, E):
        assert np.array_equal(target_indices(E, ell, "test", 24), np.arange(24, E - 24))


def toy_recording(rng, rid, E=12, d=15, classes=3, signal=2.0):
    labels = np.arange(E) % classes
    rng.shuffle(labels)
    tokens = rng.standard_normal((E, 210, d)) * 0.5
    tokens[:, :, :classes] += signal * np.eye(classes)[labels][:, None, :]
    return RecordingTokens(rid, tokens, labels)


class TestSequences:
    def test_windows(self, rng):
        rec = toy_recording(rng, "a")
        seqs = build_sequences([rec], ell=1)
        assert len(seqs) == 10
        w = seqs.windows([0, 3])
        assert w.shape == (2, 3, 210, 15)
        assert np.array_equal(w[1], rec.tokens[3:6])
        assert seqs.labels[3] == rec.labels[4]


class TestOversample:
    def test_uniform(self):
        labels = np.repeat([0, 1, 2], [10, 5, 1])
        out = oversample(labels, seed=0)
        assert np.bincount(labels[out]).tolist() == [10, 10, 10]
        # every original item is kept
        assert set(out) == set(range(len(labels)))

    def test_balanced_is_permutation(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        out = oversample(labels, seed=1)
        assert sorted(out) == list(range(6))

    def test_seeded(self):
        labels = np.repeat([0, 1], [7, 3])
        assert np.array_equal(oversample(labels, 4), oversample(labels, 4))

    def test_missing(self):
        with pytest.raises(MissingClass):
            oversample(np.array([0, 0, 2]), 0, n_classes=3)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 30), min_size=2, max_size=5), st.integers(0, 1000))
    def test_histogram_exactly_uniform(self, counts, seed):
        labels = np.repeat(np.arange(len(counts)), counts)
        out = oversample(labels, seed)
        assert np.bincount(labels[out]).tolist() == [max(counts)] * len(counts)


class TestMetrics:
    def test_perfect(self):
        r = MetricsReport.from_predictions([0, 1, 2, 2], [0, 1, 2, 2], 3)
        assert r.mf1 == 1.0 and r.percent()["MF1"] == 100.0

    def test_two_by_two(self):
        r = MetricsReport.from_confusion([[2, 1], [1, 2]])
        assert np.allclose(r.per_class_f1, [2 / 3, 2 / 3], atol=1e-12)
        assert abs(r.percent()["MF1"] - 200 / 3) <= 1e-12

    def test_constant_predictor(self):
        r = MetricsReport.from_predictions([0] * 8 + [1] * 2, [0] * 10, 2)
        # F1 class 0 = 16/18, class 1 = 0
        assert r.mf1 == pytest.approx(8 / 18, abs=1e-12)
        assert r.accuracy == 0.8
        assert r.mf1 < r.accuracy

    def test_absent_class_counts_as_zero(self):
        r = MetricsReport.from_predictions([0, 1], [0, 1], 3)
        assert r.per_class_f1.tolist() == [1.0, 1.0, 0.0]
        assert r.mf1 == pytest.approx(2 / 3)

    def test_confusion_orientation(self):
        cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
        assert cm.tolist() == [[0, 2], [0, 1]]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_relabeling_invariance(self, seed):
        r = np.random.default_rng(seed)
        y, p = r.integers(0, 5, 50), r.integers(0, 5, 50)
        perm = r.permutation(5)
        a = MetricsReport.from_predictions(y, p, 5).mf1
        b = MetricsReport.from_predictions(perm[y], perm[p], 5).mf1
        assert a == pytest.approx(b, abs=1e-12)

    def test_dict_and_csv(self):
        r = MetricsReport.from_confusion([[3, 1, 0], [0, 2, 0], [1, 0, 4]])
        assert MetricsReport.from_dict(r.to_dict()).mf1 == r.mf1
        lines = r.confusion_csv().splitlines()
        assert lines[0] == "true\\pred,Awake,N1,N2"
        assert lines[1] == "Awake,3,1,0"


class TestAggregate:
    def reports(self, mf1s):
        # two-class reports whose MF1 is set through the diagonal
        out = []
        for m in mf1s:
            r = MetricsReport.from_confusion([[1, 0], [0, 1]])
            r.mf1 = m / 100
            out.append(r)
        return out

    def test_one_fold(self):
        assert aggregate(self.reports([80]))["MF1"] == (pytest.approx(80), 0.0)

    def test_two_folds_sample_std(self):
        mean, std = aggregate(self.reports([80, 82]))["MF1"]
        assert mean == pytest.approx(81)
        assert std == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_identical(self):
        assert aggregate(self.reports([75, 75, 75]))["MF1"][1] == 0.0

    def test_table_layout(self):
        r = MetricsReport.from_confusion(np.diag([5, 5, 5, 5, 5]))
        table = format_table({"base": aggregate([r])})
        assert table.splitlines()[0] == "| Configuration | MF1 | N3 F1 | N2 F1 | N1 F1 |"
        assert "100.00 ± 0.00" in table


class TestFolds:
    def test_disjoint(self):
        with pytest.raises(ConfigError):
            FoldSpec(["a", "b"], ["b"], ["c"])
        with pytest.raises(ConfigError):
            FoldSpec(["a"], ["b"], [])

    def test_rotation(self):
        ids = [f"r{i}" for i in range(6)]
        folds = make_folds(ids, n_validation=1, n_test=2)
        assert len(folds) == 3
        tests = [t for f in folds for t in f.test]
        assert sorted(tests) == ids
        for f in folds:
            assert sorted(f.train + f.validation + f.test) == ids


def corpus(rng, n=4, E=12):
    return {f"r{i}": toy_recording(rng, f"r{i}", E) for i in range(n)}


FOLD = FoldSpec(["r0", "r1"], ["r2"], ["r3"])


class TestTraining:
    def test_zero_learning_rate(self, rng):
        data = corpus(rng)
        cfg = TrainConfig(lr=0.0, max_passes=2, batch_size=8, clip_test=1)
        res = train(FOLD, data, TINY, cfg)
        from spdseq.model import SequenceClassifier
        fresh = SequenceClassifier(TINY).state_dict()
        for k, v in res.model.state_dict().items():
            assert np.array_equal(v, fresh[k])
        assert res.history == [res.history[0]] * 3
        assert res.validation.mf1 == res.history[0]

    def test_learns_and_checkpoints(self, rng, tmp_path):
        data = corpus(rng)
        cfg = TrainConfig(lr=3e-3, max_passes=8, patience=3, batch_size=8, clip_test=1)
        res = train(FOLD, data, TINY, cfg, tmp_path)
        assert res.validation.mf1 >= 0.9
        assert max(res.history) == res.validation.mf1
        model, meta = load_model(res.checkpoint)
        assert meta["best_pass"] == res.best_pass
        for k, v in res.model.state_dict().items():
            assert np.array_equal(model.state_dict()[k], v)
        assert evaluate(res.checkpoint, [data["r3"]], clip=1).mf1 == evaluate(model, [data["r3"]], 1).mf1

    def test_deterministic(self, rng):
        data = corpus(rng)
        cfg = TrainConfig(lr=1e-3, max_passes=1, batch_size=8, clip_test=1)
        a = train(FOLD, data, TINY, cfg).model.state_dict()
        b = train(FOLD, data, TINY, cfg).model.state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_finetune_starts_from_checkpoint(self, rng, tmp_path):
        data = corpus(rng)
        first = train(FOLD, data, TINY, TrainConfig(lr=3e-3, max_passes=1, batch_size=8, clip_test=1), tmp_path)
        res = train(FOLD, data, TINY, TrainConfig(lr=0.0, max_passes=1, batch_size=8, clip_test=1,
                                                  finetune_from=str(first.checkpoint)))
        for k, v in first.model.state_dict().items():
            assert np.array_equal(res.model.state_dict()[k], v)

    def test_clip_must_cover_context(self):
        with pytest.raises(ConfigError):
            TrainConfig(clip_test=0).validate_for(TINY)

    def test_cross_validate(self, rng):
        data = corpus(rng)
        folds = [FOLD, FoldSpec(["r1", "r2"], ["r3"], ["r0"])]
        cv = cross_validate(folds, data, TINY, TrainConfig(lr=3e-3, max_passes=1, batch_size=8, clip_test=1))
        assert len(cv.test) == 2
        assert cv.summary["MF1"][0] == pytest.approx(100 * np.mean([r.mf1 for r in cv.test]))
        with pytest.raises(ConfigError):
            cross_validate([], data, TINY, TrainConfig())


class TestAblations:
    def base(self):
        return config_from_dict({"schema_version": 1,
                                 "paths": {"data_dir": "d", "cache_dir": "c", "run_dir": "runs/base"}}, "/tmp")

    def test_suite(self):
        base = self.base()
        suite = ablation_suite(base)
        assert set(suite) == {"DAW", "MAW", "WPA", "zero_augmentation", "global_covariance", "classic_mha",
                              "L13", "L29"}
        assert suite["DAW"].enrichment.strategy == "DAW"
        assert suite["WPA"].enrichment.strategy == "WPA"
        assert suite["zero_augmentation"].enrichment.feature_source == "ZEROS"
        assert suite["global_covariance"].enrichment.strategy == "GLOBAL_COV"
        assert suite["L13"].model_config(45).ell == 6
        assert suite["L29"].model_config(45).ell == 14
        assert len({v.paths["run_dir"] for v in suite.values()}) == 8

    def test_classic_differs_only_in_attention(self):
        base = self.base()
        variant = ablation_suite(base)["classic_mha"]
        diff = {k for k in base.model if base.model[k] != variant.model[k]}
        assert diff == {"mha_kind"}
        assert variant.enrichment == base.enrichment and variant.train == base.train
