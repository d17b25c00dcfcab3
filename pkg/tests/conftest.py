import numpy as np
import pytest

from ecgvae.prep import preprocess_dataset
from ecgvae.synth import generate_dataset
from ecgvae.train import BeatSet
from ecgvae.vae.model import Batch, VaeArchitecture, init_params, sample_noise

TINY = dict(channels=(2,) * 7, input_shape=(4, 32))


def tiny_arch(latent_dim=2, pred_dim=1, **kw):
    return VaeArchitecture(latent_dim=latent_dim, pred_dim=pred_dim, **{**TINY, **kw})


# batch seed 1 with noise seed 101 keeps every ReLU pre-activation further
# than the finite-difference step from zero (checked by the gradient tests)
FD_BATCH_SEED, FD_NOISE_SEED = 1, 101


def tiny_batch(arch, n=3, seed=FD_BATCH_SEED, labels=None, dtype=np.float64):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 50, size=(n,) + arch.input_shape).astype(dtype)
    rr = rng.normal(0, 1, size=(n, 2)).astype(dtype)
    if labels is None:
        labels = (np.arange(n) % 2).astype(float)
    return Batch(x, rr, np.asarray(labels, dtype=float))


@pytest.fixture
def tiny_params():
    arch = tiny_arch()
    return init_params(arch, seed=3, dtype=np.float64)


@pytest.fixture
def tiny_noise(tiny_params):
    return sample_noise(tiny_params.arch, 3, np.random.default_rng(FD_NOISE_SEED), np.float64)


@pytest.fixture(scope="session")
def small_cohort():
    """40 patients x 2 records, preprocessed; shared by the slower tests."""
    recs = generate_dataset(40, 2, 0.25, seed=11)
    beats, rejected = preprocess_dataset(recs)
    assert not rejected
    return recs, beats, BeatSet.from_mean_beats(beats)
