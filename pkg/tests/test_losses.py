import math

import numpy as np
import pytest

from ecgvae.errors import ParameterError
from ecgvae.vae.losses import LossWeights, bce_loss, combine_terms, kl_loss, mse_loss, total_loss


class TestMse:
    def test_examples(self):
        x = np.random.default_rng(0).normal(size=(12, 400))
        assert mse_loss(x, x) == 0.0
        assert mse_loss(x, x + 1) == pytest.approx(1.0, abs=1e-12)
        assert mse_loss(np.zeros(2), np.array([1.0, 3.0])) == 5.0

    def test_batched(self):
        x = np.zeros((3, 2, 2))
        xh = np.stack([np.full((2, 2), v) for v in (0.0, 1.0, 2.0)])
        np.testing.assert_array_equal(mse_loss(x, xh, batched=True), [0.0, 1.0, 4.0])


class TestKl:
    def test_examples(self):
        assert kl_loss(np.zeros(3), np.zeros(3)) == 0.0
        assert kl_loss(np.array([1.0]), np.array([0.0])) == 0.5
        assert kl_loss(np.array([0.0]), np.array([math.log(4)])) == pytest.approx(0.5 * (3 - math.log(4)), abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            mu, lv = rng.normal(0, 2, 5), rng.normal(0, 2, 5)
            assert kl_loss(mu, lv) > 0

    def test_small_logvar_precision(self):
        # expm1 keeps the closed form accurate near zero
        assert kl_loss(np.zeros(1), np.array([1e-9])) == pytest.approx(0.5e-18, rel=1e-6)


class TestBce:
    def test_examples(self):
        assert bce_loss(0.0, 0) == pytest.approx(math.log(2), abs=1e-15)
        assert bce_loss(0.0, 1) == pytest.approx(math.log(2), abs=1e-15)
        assert bce_loss(50.0, 1) <= 1e-20
        assert bce_loss(1.0, 1) == pytest.approx(math.log1p(math.exp(-1)), abs=1e-15)

    def test_stable_for_huge_logits(self):
        for lg in (1e6, -1e6):
            for y in (0, 1):
                assert math.isfinite(bce_loss(lg, y))
        assert bce_loss(-1e6, 1) == pytest.approx(1e6)


class TestTotal:
    def setup_method(self):
        # MSE = 2, KL = 0.5, BCE = 0.1 by construction
        self.x = np.zeros((12, 400))
        self.xh = np.full((12, 400), math.sqrt(2.0))
        self.mu, self.lv = np.array([1.0, 0.0]), np.zeros(2)
        self.logit = -math.log(math.expm1(0.1))

    def test_weighted_sum(self):
        total, terms = total_loss(self.x, self.xh, self.mu, self.lv, self.logit, 1, LossWeights(4, 500), "full")
        assert terms.bce == pytest.approx(0.1, abs=1e-14)
        assert total == pytest.approx(54.0, abs=1e-12)
        assert combine_terms(2.0, 0.5, 0.1, LossWeights(4, 500), "full") == pytest.approx(54.0, abs=1e-12)

    def test_degenerate_weights(self):
        total, terms = total_loss(self.x, self.xh, self.mu, self.lv, self.logit, 1, LossWeights(0, 0), "full")
        assert total == terms.mse

    def test_pretrain_excludes_bce(self):
        total, _ = total_loss(self.x, self.xh, self.mu, self.lv, self.logit, 1, LossWeights(4, 500), "pretrain")
        assert total == pytest.approx(2.0 + 4 * 0.5, abs=1e-12)

    def test_missing_label(self):
        for label in (None, float("nan")):
            total, terms = total_loss(self.x, self.xh, self.mu, self.lv, self.logit, label, LossWeights(4, 500), "head")
            assert terms.bce == 0.0 and total == pytest.approx(4.0, abs=1e-12)

    def test_batch_mean(self):
        x = np.zeros((2, 3))
        xh = np.array([[1.0] * 3, [3.0] * 3])
        total, terms = total_loss(x, xh, np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2), np.array([1.0, np.nan]),
                                  LossWeights(1, 1), "full")
        assert terms.mse == 5.0
        assert terms.bce == pytest.approx(math.log(2) / 2)

    def test_unknown_phase(self):
        with pytest.raises(ParameterError):
            combine_terms(1, 1, 1, LossWeights(), "warmup")

    def test_negative_weights(self):
        with pytest.raises(ParameterError):
            LossWeights(beta=-1)
