import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, cohen_kappa_score, f1_score

from frameproj.errors import ContractError, FormatError, MetricError
from frameproj.frames import SignalBatch
from frameproj.models import Linear, Module, init_parameters
from frameproj.probe import (
    CLASSIFICATION,
    REGRESSION,
    FeatureMatrix,
    classification_metrics,
    confusion_matrix,
    evaluate_classification,
    evaluate_regression,
    extract_features,
    read_features,
    regression_metrics,
    train_linear_probe,
    write_features,
)
from frameproj.trainer import BundleConfig, build_bundle
from oracles import classification_from_counts

SMALL = dict(length=32, n_scales=8, latent_dim=8, time_width=4, fourier_width=2, wavelet_width=2,
             kernel_size=3, proj_hidden=8, proj_dim=8)


class Passthrough(Module):
    def forward(self, x):
        return x


@pytest.fixture
def bundle():
    return build_bundle(BundleConfig(**SMALL), 0, with_h_mappers=True)


@pytest.fixture
def batch():
    return SignalBatch(np.random.default_rng(4).standard_normal((7, 1, 32)))


def _from_confusion(cm):
    y_true, y_pred = [], []
    for i, row in enumerate(cm):
        for j, count in enumerate(row):
            y_true += [i] * count
            y_pred += [j] * count
    return np.array(y_true), np.array(y_pred)


class TestExtractFeatures:
    def test_shape_and_provenance(self, bundle, batch):
        fm = extract_features(bundle, batch)
        assert fm.values.shape == (7, 3 * SMALL["latent_dim"])
        assert fm.provenance["bundle"] == bundle.hash()
        assert len(fm.provenance["dataset"]) == 64

    def test_identical_rows(self, bundle):
        x = np.tile(np.random.default_rng(0).standard_normal((1, 1, 32)), (4, 1, 1))
        v = extract_features(bundle, SignalBatch(x)).values
        np.testing.assert_array_equal(v, np.broadcast_to(v[0], v.shape))

    def test_passthrough_wiring(self, bundle, batch):
        bundle.h_mappers = {"F": Passthrough(), "W": Passthrough()}
        v = extract_features(bundle, batch).values
        d = SMALL["latent_dim"]
        np.testing.assert_array_equal(v[:, d:2 * d], v[:, :d])
        np.testing.assert_array_equal(v[:, 2 * d:], v[:, :d])

    def test_parts_and_chunks(self, bundle, batch):
        full = extract_features(bundle, batch).values
        only_t = extract_features(bundle, batch, parts=("t",), chunk=3).values
        np.testing.assert_allclose(only_t, full[:, :SMALL["latent_dim"]], atol=1e-12)

    def test_auxiliary_modules_untouched(self, bundle, batch):
        before = bundle.hash()
        extract_features(bundle, batch)
        assert bundle.hash() == before

    def test_wrong_phase(self, batch):
        with pytest.raises(ContractError):
            extract_features(build_bundle(BundleConfig(**SMALL), 0), batch)

    def test_file_round_trip(self, bundle, batch, tmp_path):
        fm = extract_features(bundle, batch)
        write_features(fm, tmp_path / "f.fpt")
        back = read_features(tmp_path / "f.fpt")
        assert back.hash() == fm.hash() and back.provenance == fm.provenance

    def test_file_tamper_detected(self, bundle, batch, tmp_path):
        fm = extract_features(bundle, batch)
        write_features(fm, tmp_path / "f.fpt")
        write_features(FeatureMatrix(fm.values + 1.0), tmp_path / "g.fpt")
        (tmp_path / "f.fpt.json").write_text((tmp_path / "g.fpt.json").read_text())
        with pytest.raises(FormatError):
            read_features(tmp_path / "f.fpt")


class TestLinearProbe:
    def test_separable(self, rng):
        x = np.vstack([rng.normal(-2, 0.5, (30, 3)), rng.normal(2, 0.5, (30, 3))])
        y = np.repeat([0, 1], 30)
        probe = train_linear_probe(x, y, epochs=100)
        assert evaluate_classification(probe, x, y)["accuracy"] == 1.0

    def test_chance_level(self):
        rng = np.random.default_rng(0)
        accs = []
        for trial in range(5):
            x = rng.standard_normal((600, 10))
            y = rng.permutation(np.repeat([0, 1, 2], 200))
            probe = train_linear_probe(x[:300], y[:300], seed=trial)
            accs.append(evaluate_classification(probe, x[300:], y[300:])["accuracy"])
        assert abs(np.mean(accs) - 1 / 3) <= 0.08

    def test_zero_epochs_is_init(self, rng):
        probe = train_linear_probe(rng.standard_normal((6, 4)), np.array([0, 1, 2] * 2), epochs=0, seed=3)
        ref = init_parameters(Linear(4, 3), 3, 30)
        np.testing.assert_array_equal(probe.weight, ref.weight.data)
        np.testing.assert_array_equal(probe.bias, ref.bias.data)

    def test_features_frozen(self, rng):
        fm = FeatureMatrix(rng.standard_normal((20, 5)))
        before = fm.hash()
        train_linear_probe(fm, rng.integers(0, 2, 20))
        assert fm.hash() == before

    def test_deterministic(self, rng):
        x, y = rng.standard_normal((30, 4)), rng.integers(0, 3, 30)
        a, b = train_linear_probe(x, y, seed=5), train_linear_probe(x, y, seed=5)
        np.testing.assert_array_equal(a.weight, b.weight)

    def test_regression_fits_linear_target(self, rng):
        x = rng.standard_normal((200, 3))
        y = x @ np.array([1.5, -2.0, 0.5]) + 3.0
        probe = train_linear_probe(x, y, task=REGRESSION, lr=0.05, epochs=400)
        assert evaluate_regression(probe, x, y, mape=False)["rmse"] < 0.1

    def test_count_mismatch(self, rng):
        with pytest.raises(ContractError):
            train_linear_probe(rng.standard_normal((5, 2)), np.zeros(4, dtype=int))

    def test_unknown_task(self, rng):
        with pytest.raises(ContractError):
            train_linear_probe(rng.standard_normal((5, 2)), np.zeros(5, dtype=int), task="ranking")

    def test_n_classes_override(self, rng):
        probe = train_linear_probe(rng.standard_normal((4, 2)), np.array([0, 1, 0, 1]), n_classes=5, epochs=1)
        assert probe.weight.shape == (2, 5)

    def test_empty_eval(self, rng):
        probe = train_linear_probe(rng.standard_normal((4, 2)), np.array([0, 1, 0, 1]), epochs=1)
        with pytest.raises(ContractError):
            evaluate_classification(probe, np.zeros((0, 2)), np.zeros(0, dtype=int))


class TestClassificationMetrics:
    def test_perfect(self):
        m = classification_metrics([0, 1, 2, 1], [0, 1, 2, 1])
        assert (m["accuracy"], m["macro_f1"], m["weighted_f1"], m["kappa"]) == (1.0, 1.0, 1.0, 1.0)

    def test_constant_prediction(self):
        m = classification_metrics([0, 0, 1, 1], [1, 1, 1, 1])
        assert m["accuracy"] == 0.5 and m["kappa"] == 0.0

    def test_confusion_example(self):
        cm = [[5, 1, 0], [1, 4, 1], [0, 1, 5]]
        y_true, y_pred = _from_confusion(cm)
        np.testing.assert_array_equal(confusion_matrix(y_true, y_pred, 3), cm)
        ref = classification_from_counts(cm)
        m = classification_metrics(y_true, y_pred)
        assert abs(m["accuracy"] - 14 / 18) < 1e-12
        for key in ("accuracy", "macro_f1", "weighted_f1", "kappa"):
            assert abs(m[key] - ref[key]) < 1e-12

    def test_absent_class_counts_zero(self):
        m = classification_metrics([0, 0, 1], [0, 0, 1], n_classes=3)
        assert abs(m["macro_f1"] - 2 / 3) < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(5, 80))
    def test_matches_sklearn_and_counts(self, seed, k, n):
        r = np.random.default_rng(seed)
        y_true, y_pred = r.integers(0, k, n), r.integers(0, k, n)
        m = classification_metrics(y_true, y_pred, k)
        ref = classification_from_counts(confusion_matrix(y_true, y_pred, k).tolist())
        labels = list(range(k))
        assert abs(m["accuracy"] - accuracy_score(y_true, y_pred)) < 1e-12
        assert abs(m["macro_f1"] - f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)) < 1e-12
        assert abs(m["weighted_f1"] - f1_score(y_true, y_pred, labels=labels, average="weighted",
                                               zero_division=0)) < 1e-12
        for key in ("macro_f1", "weighted_f1", "kappa"):
            assert abs(m[key] - ref[key]) < 1e-12
        if len(set(y_true) | set(y_pred)) > 1:
            assert abs(m["kappa"] - cohen_kappa_score(y_true, y_pred, labels=labels)) < 1e-12
        assert 0.0 <= m["accuracy"] <= 1.0

    def test_kappa_below_accuracy(self, rng):
        for _ in range(50):
            y_true = rng.integers(0, 3, 40)
            y_pred = np.where(rng.random(40) < 0.6, y_true, rng.integers(0, 3, 40))
            m = classification_metrics(y_true, y_pred, 3)
            if m["accuracy"] >= 1 / 3:
                assert m["kappa"] <= m["accuracy"] + 1e-12

    def test_empty(self):
        with pytest.raises(ContractError):
            classification_metrics([], [])

    def test_report_outputs(self, tmp_path):
        m = classification_metrics([0, 1], [0, 1])
        m.write_csv(tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == "metric,value"
        assert "accuracy" in m.summary() and m.task == CLASSIFICATION


class TestRegressionMetrics:
    def test_exact(self):
        m = regression_metrics([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
        assert (m["mae"], m["rmse"], m["pearson"], m["mape"]) == (0.0, 0.0, 1.0, 0.0)

    def test_degenerate_target(self):
        m = regression_metrics([1.0, 2.0, 3.0], [2.0, 2.0, 2.0])
        assert abs(m["mae"] - 2 / 3) < 1e-12
        assert abs(m["rmse"] - math.sqrt(2 / 3)) < 1e-12 and abs(m["rmse"] - 0.8165) < 1e-4
        assert m["pearson"] == 0.0 and m.flags["degenerate_variance"]
        assert "degenerate_variance" in m.summary()

    def test_constant_offset(self, rng):
        t = rng.uniform(1, 5, 30)
        m = regression_metrics(t + 0.75, t)
        assert abs(m["mae"] - 0.75) < 1e-12 and abs(m["rmse"] - 0.75) < 1e-12
        assert abs(m["pearson"] - 1.0) < 1e-12

    def test_mape_zero_target(self):
        with pytest.raises(MetricError):
            regression_metrics([1.0, 2.0], [0.0, 1.0])
        assert "mape" not in regression_metrics([1.0, 2.0], [0.0, 1.0], mape=False).values

    def test_non_finite_target(self):
        with pytest.raises(ContractError):
            regression_metrics([1.0], [np.inf])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 50))
    def test_oracles(self, seed, n):
        r = np.random.default_rng(seed)
        p, t = r.normal(0, 3, n), r.uniform(0.5, 4, n) * r.choice([-1, 1], n)
        m = regression_metrics(p, t)
        e = [a - b for a, b in zip(p, t)]
        assert abs(m["mae"] - sum(abs(v) for v in e) / n) < 1e-12
        assert abs(m["rmse"] - math.sqrt(sum(v * v for v in e) / n)) < 1e-12
        assert abs(m["mape"] - 100 * sum(abs(v / b) for v, b in zip(e, t)) / n) < 1e-9
        assert abs(m["pearson"] - np.corrcoef(p, t)[0, 1]) < 1e-12
        assert m["rmse"] >= m["mae"] >= 0
        assert -1.0 <= m["pearson"] <= 1.0
