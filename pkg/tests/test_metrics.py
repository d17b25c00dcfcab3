import csv
import json

import numpy as np
import pytest

from ecgvae import metrics as mt
from ecgvae.errors import DataError, ParameterError
from ecgvae.vae.model import decode, init_params

from conftest import tiny_arch
from helpers import brute_force_auc


class TestReconstruction:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 12, 400))
        assert mt.reconstruction_metrics(x, x) == (0.0, pytest.approx(1.0))

    def test_negation(self):
        x = np.random.default_rng(1).normal(size=(2, 12, 400))
        assert mt.reconstruction_metrics(x, -x)[1] == pytest.approx(-1.0)

    def test_hand_example(self):
        mse, corr = mt.reconstruction_metrics(np.array([0.0, 1, 2]), np.array([0.0, 2, 4]))
        assert mse == pytest.approx(5 / 3)
        assert corr == pytest.approx(1.0)

    def test_per_record_average(self):
        x = np.random.default_rng(2).normal(size=(2, 3, 5))
        x_hat = x.copy()
        x_hat[1] = -x[1]
        assert mt.reconstruction_metrics(x, x_hat)[1] == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            mt.reconstruction_metrics(np.zeros(3), np.zeros(4))


class TestAuroc:
    def test_brute_force_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 201))
            # coarse rounding produces plenty of ties
            scores = np.round(rng.normal(size=n), int(rng.integers(0, 3)))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            assert mt.auc_value(scores, labels) == brute_force_auc(scores, labels)

    def test_hand_example(self):
        r = mt.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert r.auroc == 0.75
        assert round(r.se, 4) == 0.2763
        assert r.ci95[0] == pytest.approx(max(0.0, 0.75 - 1.96 * r.se), abs=1e-4)
        assert r.ci95[1] == 1.0

    def test_perfect(self):
        assert mt.auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auroc == 1.0

    def test_monotone_invariance(self):
        rng = np.random.default_rng(3)
        s = rng.normal(size=100)
        y = rng.integers(0, 2, 100)
        assert mt.auc_value(s, y) == mt.auc_value(np.exp(3 * s) + 7, y)

    def test_bootstrap_se(self):
        rng = np.random.default_rng(4)
        pos, neg = rng.normal(1.0, 1, 100), rng.normal(0.0, 1, 100)
        scores, labels = np.r_[pos, neg], np.r_[np.ones(100), np.zeros(100)]
        boot = [mt.auc_value(np.r_[rng.choice(pos, 100), rng.choice(neg, 100)], labels) for _ in range(2000)]
        se_boot = np.std(boot, ddof=1)
        assert abs(mt.auroc(scores, labels).se - se_boot) / se_boot < 0.25

    def test_se_shrinks(self):
        for a in (0.6, 0.75, 0.9):
            assert mt.hanley_mcneil_se(a, 400, 400) <= 0.6 * mt.hanley_mcneil_se(a, 100, 100)

    def test_single_class(self):
        with pytest.raises(DataError):
            mt.auroc([0.1, 0.2], [1, 1])

    def test_non_binary_labels(self):
        with pytest.raises(DataError):
            mt.auroc([0.1, 0.2], [0, 2])


class TestPairedTest:
    def test_identical(self):
        s = np.random.default_rng(0).random(20)
        y = np.arange(20) % 2
        assert mt.auroc_paired_test(s, s, y) == (0.0, 1.0)

    def test_large_difference(self):
        rng = np.random.default_rng(1)
        y = np.r_[np.ones(500), np.zeros(500)]
        good = np.r_[rng.normal(1.8, 1, 500), rng.normal(0, 1, 500)]
        bad = rng.normal(size=1000)
        z, p = mt.auroc_paired_test(good, bad, y)
        assert z > 0 and p < 0.01

    def test_null_calibration(self):
        rng = np.random.default_rng(2)
        inside = 0
        for _ in range(100):
            signal = rng.normal(size=200)
            a = signal + rng.normal(size=200)
            b = signal + rng.normal(size=200)
            y = rng.permutation(np.r_[np.ones(100), np.zeros(100)])
            z, _ = mt.auroc_paired_test(a, b, y)
            inside += abs(z) < 1.96
        assert inside >= 90

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            mt.auroc_paired_test([0.1, 0.2], [0.1], [0, 1])


class TestMacroF1:
    def test_perfect(self):
        assert mt.macro_f1([0.9, 0.1, 0.8], [1, 0, 1]) == 1.0

    def test_all_negative(self):
        y = np.r_[np.ones(2), np.zeros(6)]
        assert mt.macro_f1(np.zeros(8), y) == pytest.approx((0 + 2 * 0.75 / 1.75) / 2)
        assert mt.macro_f1(np.zeros(8), y) == pytest.approx(0.4286, abs=1e-4)

    def test_class_swap_symmetry(self):
        rng = np.random.default_rng(0)
        s, y = rng.random(50), rng.integers(0, 2, 50)
        pred = (s >= 0.5).astype(float)
        assert mt.macro_f1(pred, y) == pytest.approx(mt.macro_f1(1 - pred, 1 - y))

    def test_threshold_extremes(self):
        y = np.array([0, 1, 1, 0])
        s = np.array([0.2, 0.6, 0.9, 0.4])
        # threshold 0: everything positive, class 0 F1 = 0
        assert mt.macro_f1(s, y, 0.0) == pytest.approx((0 + 2 * 2 / (2 * 2 + 2)) / 2)
        # threshold above every score: everything negative
        assert mt.macro_f1(s, y, 1.0) == pytest.approx((2 * 2 / (2 * 2 + 2) + 0) / 2)

    def test_empty_class_convention(self):
        assert mt.macro_f1([0.1, 0.2], [0, 0]) == 1.0


class TestTraversal:
    @pytest.fixture
    def params(self):
        return init_params(tiny_arch(latent_dim=3, pred_dim=3), seed=0, dtype=np.float64)

    def test_values_and_centre(self, params):
        mu, sd = np.array([0.1, -0.4, 1.0]), np.array([0.5, 2.0, 0.3])
        grid = mt.factor_traversal(params, 1, mu, sd, 7)
        np.testing.assert_allclose(grid.values, -0.4 + 2.0 * np.arange(-3, 4))
        centre = decode(params, mu[None, :])[0] / params.arch.signal_scale
        np.testing.assert_allclose(grid.decoded[3], centre, atol=1e-12)
        assert grid.decoded.shape == (7,) + params.arch.input_shape

    def test_symmetric(self, params):
        grid = mt.factor_traversal(params, 0, np.zeros(3), np.ones(3), 9)
        np.testing.assert_allclose(grid.values + grid.values[::-1], 0.0, atol=1e-15)

    def test_zero_spread(self, params):
        grid = mt.factor_traversal(params, 2, np.ones(3), np.zeros(3), 5)
        assert all(np.array_equal(grid.decoded[0], d) for d in grid.decoded)

    def test_out_of_range(self, params):
        with pytest.raises(ParameterError):
            mt.factor_traversal(params, 3, np.zeros(3), np.ones(3))

    def test_csv(self, params, tmp_path):
        grid = mt.factor_traversal(params, 0, np.zeros(3), np.ones(3), 3)
        grid.to_csv(tmp_path / "t.csv", {"ckpt": "x"})
        lines = (tmp_path / "t.csv").read_text().splitlines()
        meta = json.loads(lines[0][2:])
        assert meta["feature_index"] == 0 and meta["ckpt"] == "x"
        rows = list(csv.reader(lines[1:]))
        assert len(rows) == 4 and len(rows[1]) == 1 + grid.decoded[0].size

    def test_latent_stats(self):
        z = np.array([[0.0, 1.0], [2.0, 1.0]])
        mu, sd = mt.latent_stats(z)
        np.testing.assert_array_equal(mu, [1.0, 1.0])
        np.testing.assert_array_equal(sd, [1.0, 0.0])


class TestReports:
    def rows(self):
        rng = np.random.default_rng(0)
        y = np.r_[np.ones(10), np.zeros(30)]
        x = rng.normal(size=(40, 2, 5))
        out = []
        for k in range(3):
            out.append(mt.prediction_row("a", k, rng.random(40), y, x, x + 0.1 * rng.normal(size=x.shape)))
            out.append(mt.prediction_row("b", k, rng.random(40), y))
        return out

    def test_row_domains(self):
        for r in self.rows():
            assert 0 <= r["auroc"] <= 1 and 0 <= r["macro_f1"] <= 1
            assert r["ci_lo"] <= r["auroc"] <= r["ci_hi"]
            if r["correlation"] is not None:
                assert -1 <= r["correlation"] <= 1 and r["mse"] >= 0

    def test_mean_rows(self):
        rows = self.rows()
        means = mt.mean_rows(rows)
        assert [m["config"] for m in means] == ["a", "b"]
        assert means[0]["auroc"] == pytest.approx(np.mean([r["auroc"] for r in rows if r["config"] == "a"]))
        assert means[1]["mse"] is None

    def test_write(self, tmp_path):
        rows = self.rows()
        mt.write_report(rows, tmp_path / "r.json", tmp_path / "r.csv", {"seed": 1})
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["meta"] == {"seed": 1} and len(doc["rows"]) == len(rows)
        with open(tmp_path / "r.csv") as fh:
            table = list(csv.DictReader(fh))
        assert len(table) == len(rows) and list(table[0]) == list(mt.REPORT_FIELDS)
