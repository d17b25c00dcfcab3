from types import SimpleNamespace

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit, logit

from ecgvae import baselines as bl
from ecgvae.errors import DataError, ParameterError
from ecgvae.metrics import auc_value
from ecgvae.synth import _patient_demographics


def covariance_oracle_mse(x, k):
    """Reconstruction MSE from an eigendecomposition of the covariance."""
    flat = x.reshape(x.shape[0], -1)
    xc = flat - flat.mean(axis=0)
    # the n x n Gram matrix shares its non-zero spectrum with the d x d
    # covariance and is far cheaper for d = 4800
    evals, evecs = np.linalg.eigh(xc @ xc.T / flat.shape[0])
    order = np.argsort(evals)[::-1][:k]
    comps = (xc.T @ evecs[:, order]) / np.sqrt(evals[order] * flat.shape[0])
    rec = xc @ comps @ comps.T
    return float(np.mean((xc - rec) ** 2)), comps.T


@pytest.fixture(scope="module")
def beats50():
    return np.random.default_rng(0).normal(size=(50, 12, 400))


class TestPca:
    def test_rank_one(self):
        rng = np.random.default_rng(1)
        direction = rng.normal(size=30)
        x = 5.0 + rng.normal(size=(20, 1)) * direction
        m = bl.pca_fit(x, 1)
        assert bl.pca_reconstruction_mse(m, x) < 1e-20
        assert m.explained_variance[0] == pytest.approx(m.total_variance)

    def test_full_rank_2d(self):
        x = np.random.default_rng(2).normal(size=(40, 2))
        assert bl.pca_reconstruction_mse(bl.pca_fit(x, 2), x) < 1e-25

    def test_covariance_oracle(self, beats50):
        for k in (1, 5, 20):
            m = bl.pca_fit(beats50, k)
            mse_oracle, comps = covariance_oracle_mse(beats50, k)
            assert abs(bl.pca_reconstruction_mse(m, beats50) - mse_oracle) < 1e-8
            # same subspace: projectors agree
            np.testing.assert_allclose(m.components.T @ m.components, comps.T @ comps, atol=1e-8)

    def test_orthonormal_and_ordered(self, beats50):
        m = bl.pca_fit(beats50, 30)
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(30), atol=1e-6)
        assert np.all(np.diff(m.explained_variance) <= 0)

    def test_mse_monotone_in_k(self, beats50):
        mses = [bl.pca_reconstruction_mse(bl.pca_fit(beats50, k), beats50) for k in range(1, 31)]
        assert all(b <= a for a, b in zip(mses, mses[1:]))

    def test_error_equals_residual_variance(self, beats50):
        m = bl.pca_fit(beats50, 7)
        d = beats50[0].size
        residual = (m.total_variance - m.explained_variance.sum()) / d
        assert bl.pca_reconstruction_mse(m, beats50) == pytest.approx(residual, rel=1e-6)

    def test_sign_convention(self, beats50):
        m = bl.pca_fit(beats50, 4)
        lead = m.components[np.arange(4), np.argmax(np.abs(m.components), axis=1)]
        assert np.all(lead > 0)

    def test_transform_identities(self, beats50):
        m = bl.pca_fit(beats50, 3)
        assert np.allclose(bl.pca_transform(m, m.mean), 0.0)
        x = m.mean + np.array([1.5, -2.0, 0.25]) @ m.components
        np.testing.assert_allclose(bl.pca_inverse(m, bl.pca_transform(m, x)), x, atol=1e-12)
        assert bl.pca_transform(m, beats50[0]).shape == (3,)
        assert bl.pca_transform(m, beats50[:4]).shape == (4, 3)

    @pytest.mark.parametrize("k", [0, 50, 60])
    def test_bad_k(self, beats50, k):
        with pytest.raises(ParameterError):
            bl.pca_fit(beats50, k)


def oracle_objective(x, y, l1, l2):
    """Elastic-net optimum from L-BFGS-B on the split w = u - v, u, v >= 0."""
    mean, std = x.mean(axis=0), x.std(axis=0)
    xs = (x - mean) / np.where(std > 0, std, 1.0)
    d = xs.shape[1]

    def fun(theta):
        u, v, b = theta[:d], theta[d:2 * d], theta[2 * d]
        w = u - v
        s = xs @ w + b
        f = np.mean(np.logaddexp(0, s) - y * s) + l1 * np.sum(u + v) + 0.5 * l2 * w @ w
        r = (expit(s) - y) / y.size
        gw = xs.T @ r + l2 * w
        return f, np.concatenate([gw + l1, -gw + l1, [r.sum()]])

    best = np.inf
    for start in range(3):
        theta0 = np.random.default_rng(start).uniform(0, 1, 2 * d + 1)
        res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                       bounds=[(0, None)] * (2 * d) + [(None, None)],
                       options={"maxiter": 20000, "ftol": 1e-15, "gtol": 1e-12})
        best = min(best, res.fun)
    return best


class TestLogReg:
    def test_oracle_twenty_problems(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(20):
            n, d = int(rng.integers(20, 61)), int(rng.integers(1, 5))
            x = rng.normal(size=(n, d)) * rng.uniform(0.5, 5, d) + rng.normal(0, 3, d)
            w = rng.normal(size=d)
            y = (rng.random(n) < expit(x @ w / x.std(axis=0).mean())).astype(float)
            y[:2] = [0, 1]
            l1, l2 = 10 ** rng.uniform(-4, -1), 10 ** rng.uniform(-4, -1)
            m = bl.logreg_fit(x, y, l1, l2)
            worst = max(worst, abs(m.objective - oracle_objective(x, y, l1, l2)))
        assert worst < 1e-6

    def test_large_l1_intercept_only(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(50, 3))
        y = (rng.random(50) < 0.3).astype(float)
        y[:2] = [0, 1]
        m = bl.logreg_fit(x, y, l1_weight=1e3, l2_weight=1e-3)
        assert np.all(m.coef == 0)
        assert abs(m.intercept - logit(y.mean())) < 1e-6

    def test_separable(self):
        x = np.r_[np.linspace(-3, -0.5, 10), np.linspace(0.5, 3, 10)][:, None]
        y = np.r_[np.zeros(10), np.ones(10)]
        m = bl.logreg_fit(x, y, l1_weight=0.0, l2_weight=1e-2)
        assert np.all((bl.logreg_predict_proba(m, x) >= 0.5) == y.astype(bool))
        assert np.all(np.isfinite(m.coef))

    def test_objective_matches_definition(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(30, 2))
        y = (x[:, 0] + rng.normal(size=30) > 0).astype(float)
        m = bl.logreg_fit(x, y, 0.01, 0.02)
        xs = m.standardize(x)
        s = xs @ m.coef + m.intercept
        by_hand = np.mean(np.log1p(np.exp(-np.abs(s))) + np.maximum(s, 0) - y * s) \
            + 0.01 * np.abs(m.coef).sum() + 0.01 * m.coef @ m.coef
        assert m.objective == pytest.approx(by_hand, abs=1e-12)

    def test_sparsity_property(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(60, 4))
        y = (x[:, 0] > 0).astype(float)
        m = bl.logreg_fit(x, y, 0.05, 1e-3)
        nz = m.coef[m.coef != 0]
        assert np.all(np.abs(nz) > 1e-12)
        assert np.any(m.coef == 0)

    def test_predict_by_hand(self):
        m = bl.LogRegModel(np.array([0.5, -1.0]), 0.25, 0.0, 0.0, np.array([1.0, 2.0]), np.array([2.0, 4.0]))
        # standardized row (3-1)/2=1, (6-2)/4=1 -> score 0.5 - 1 + 0.25 = -0.25
        assert bl.logreg_predict_proba(m, [[3.0, 6.0]])[0] == pytest.approx(1 / (1 + np.exp(0.25)))

    def test_zero_coef_constant(self):
        m = bl.LogRegModel(np.zeros(2), -1.0, 0.0, 0.0, np.zeros(2), np.ones(2))
        p = bl.logreg_predict_proba(m, np.random.default_rng(0).normal(size=(5, 2)))
        np.testing.assert_allclose(p, expit(-1.0))

    def test_monotone_in_positive_feature(self):
        m = bl.LogRegModel(np.array([0.7, -0.2]), 0.0, 0.0, 0.0, np.zeros(2), np.ones(2))
        grid = np.column_stack([np.linspace(-3, 3, 20), np.full(20, 0.4)])
        assert np.all(np.diff(bl.logreg_predict_proba(m, grid)) > 0)

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            bl.logreg_fit(np.ones((5, 1)), np.zeros(5))

    def test_negative_penalty_rejected(self):
        with pytest.raises(ParameterError):
            bl.logreg_fit(np.ones((4, 1)), [0, 1, 0, 1], l1_weight=-1)


def demographic_cohort(n, prevalence, seed):
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < prevalence).astype(int)
    out = []
    for lab in labels:
        sex, age = _patient_demographics(int(lab), rng)
        out.append(SimpleNamespace(sex=sex, age=age, label=int(lab)))
    return out


class TestSexAge:
    def test_weak_signal(self):
        train, test = demographic_cohort(2000, 0.3, 0), demographic_cohort(2000, 0.3, 1)
        p, _ = bl.sex_age_baseline(train, test)
        a = auc_value(p, [r.label for r in test])
        assert 0.5 < a < 0.65

    def test_label_independent(self):
        train, test = demographic_cohort(600, 0.3, 2), demographic_cohort(600, 0.3, 3)
        rng = np.random.default_rng(4)
        for cohort in (train, test):
            for r, lab in zip(cohort, rng.permutation([r.label for r in cohort])):
                r.label = int(lab)
        p, _ = bl.sex_age_baseline(train, test)
        assert abs(auc_value(p, [r.label for r in test]) - 0.5) < 0.08

    def test_deterministic(self):
        train, test = demographic_cohort(200, 0.3, 5), demographic_cohort(50, 0.3, 6)
        a, _ = bl.sex_age_baseline(train, test)
        b, _ = bl.sex_age_baseline(train, test)
        assert np.array_equal(a, b)
