"""Shared oracles for the test-suite."""

from contextlib import contextmanager

import numpy as np

from ecgvae.cli import main
from ecgvae.train import BeatSet
from ecgvae.vae import layers
from ecgvae.vae.model import loss_and_grads


@contextmanager
def relu_patterns(store: list):
    """Record the sign pattern of every ReLU evaluated inside the block."""
    original = layers.relu_forward

    def recording(x):
        out, mask = original(x)
        store.append(mask.copy())
        return out, mask

    layers.relu_forward = recording
    try:
        yield
    finally:
        layers.relu_forward = original


def finite_difference_check(params, batch, weights, phase, mask, noise, h=1e-4, floor=1e-6):
    """Central differences of the total loss against the analytic gradient.

    Returns (worst relative error over all entries, number of entries
    checked, largest analytic entry outside the trainable set, number of
    stencils on which some ReLU changed sign). The relative error is
    |a - n| / max(|a| + |n|, floor). A stencil that crosses a ReLU kink makes
    the central difference a poor oracle, so callers should pick inputs for
    which the last count is zero.
    """
    _, grads = loss_and_grads(params, batch, weights, phase, mask, noise)
    base: list = []
    with relu_patterns(base):
        loss_and_grads(params, batch, weights, phase, mask, noise, need_grads=False)
    kinks = 0

    def loss():
        nonlocal kinks
        seen: list = []
        with relu_patterns(seen):
            out = loss_and_grads(params, batch, weights, phase, mask, noise, need_grads=False)[0].total
        if any(not np.array_equal(a, b) for a, b in zip(seen, base)):
            kinks += 1
        return out

    worst, count, leak = 0.0, 0, 0.0
    trainable = ("head.w", "head.b") if mask == "head_only" else tuple(params.tensors)
    for name, arr in params.tensors.items():
        if name not in trainable:
            leak = max(leak, float(np.max(np.abs(grads[name]))))
            continue
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(g[i] - num) / max(abs(g[i]) + abs(num), floor))
            count += 1
    return worst, count, leak, kinks


def brute_force_auc(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return wins / (pos.size * neg.size)


def tiny_beatset(arch, n=24, seed=0, prevalence=0.25, labeled=True):
    """Random BeatSet shaped for ``arch``; one record per patient.

    Positive records get a bump on the first lead so the head has something
    to learn.
    """
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) < max(2, int(round(prevalence * n)))).astype(float)
    labels = labels[rng.permutation(n)]
    x = rng.normal(0, 0.3, size=(n,) + tuple(arch.input_shape))
    x[:, 0, :] += 0.8 * labels[:, None]
    rr = np.column_stack([rng.normal(800, 60, n), rng.uniform(10, 50, n)])
    return BeatSet(
        x=x.astype(np.float32), rr=rr,
        labels=labels if labeled else np.full(n, np.nan),
        patient_ids=np.array([f"P{i:04d}" for i in range(n)]),
        sex=rng.integers(0, 2, n).astype(float), age=rng.integers(30, 80, n).astype(float),
    )


QUIET = ["--log-level", "WARNING"]


def run_cli(*argv):
    return main([str(a) for a in argv] + QUIET)


def cli_chain(root, seed=1):
    """synth -> preprocess -> split -> pretrain -> finetune (head, full) ->
    features -> eval, all at toy scale. Returns the output directory."""
    d = root
    train = ["--epochs", 2, "--batch-size", 8, "--seed", seed]
    assert run_cli("synth", "--patients", 24, "--prevalence", 0.3, "--seed", seed, "--out", d / "raw") == 0
    assert run_cli("preprocess", "--in", d / "raw", "--out", d / "mb") == 0
    assert run_cli("split", "--in", d / "mb", "--seed", seed, "--out", d / "plan.json") == 0
    assert run_cli("pretrain", "--in", d / "mb", "--plan", d / "plan.json", "--latent", 3, *train,
               "--out", d / "pre.ckpt") == 0
    assert run_cli("finetune", "--ckpt", d / "pre.ckpt", "--in", d / "mb", "--plan", d / "plan.json",
               "--stage", "head", "--pred-dim", 2, *train, "--out", d / "head.ckpt") == 0
    assert run_cli("finetune", "--ckpt", d / "head.ckpt", "--in", d / "mb", "--plan", d / "plan.json",
               "--stage", "full", *train, "--out", d / "full.ckpt") == 0
    assert run_cli("features", "--ckpt", d / "full.ckpt", "--in", d / "mb", "--out", d / "features.csv") == 0
    assert run_cli("eval", "--ckpt", d / "full.ckpt", "--in", d / "mb", "--plan", d / "plan.json",
               "--out", d / "report.json") == 0
    return d


CHAIN_OUTPUTS = ("raw/records.ebd", "mb/meanbeats.ebd", "plan.json", "pre.ckpt", "head.ckpt", "full.ckpt",
                 "features.csv", "report.json", "report.csv")
