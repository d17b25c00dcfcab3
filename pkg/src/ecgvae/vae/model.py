"""Convolutional beta-VAE with a single affine prediction head.

The encoder is a stack of 2-D convolutions over a (leads x time) image;
the decoder mirrors it with nearest-neighbour upsampling followed by
convolution. A linear head maps the first ``pred_dim`` latent entries plus
the two standardised RR statistics to one logit.

Everything is plain numpy. ``forward`` records a cache and ``backward``
returns exact gradients of the batch-mean loss.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import NumericError, ParameterError
from . import layers
from .losses import PHASES, LossTerms, LossWeights, combine_terms

log = logging.getLogger(__name__)

MASKS = ("head_only", "all")
DEFAULT_CHANNELS = (8, 16, 32, 64, 64, 64, 64)


@dataclass(frozen=True)
class VaeArchitecture:
    latent_dim: int = 10
    pred_dim: int | None = None
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    kernel: int = 5
    lead_kernel: int = 3
    residual_layer_indices: tuple[int, ...] = (4, 5, 6)
    input_shape: tuple[int, int] = (12, 400)
    dropout_rate: float = 0.1
    # model units are 10 uV (mV * 100) so reconstruction error is on the
    # scale of the KL and BCE terms; the network itself sees x / signal_scale
    signal_scale: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "residual_layer_indices", tuple(int(i) for i in self.residual_layer_indices))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.pred_dim is None:
            object.__setattr__(self, "pred_dim", self.latent_dim)
        if self.latent_dim < 1:
            raise ParameterError("latent_dim", "must be >= 1")
        if not 1 <= self.pred_dim <= self.latent_dim:
            raise ParameterError("pred_dim", f"must lie in [1, latent_dim={self.latent_dim}]")
        if len(self.channels) != 7:
            raise ParameterError("channels", "exactly 7 conv layers are required")
        if not 0 <= self.dropout_rate < 1:
            raise ParameterError("dropout_rate", "must lie in [0, 1)")
        for i in self.residual_layer_indices:
            if i == 0 or self.channels[i] != self.channels[i - 1]:
                raise ParameterError(
                    "residual_layer_indices",
                    f"layer {i} needs equal in/out channels for an identity skip",
                )
        h, w = self.bottleneck_hw
        if h < 1 or w < 1 or h * self.lead_factor != self.input_shape[0] or w * self.time_factor != self.input_shape[1]:
            raise ParameterError("input_shape", f"{self.input_shape} is not divisible by the encoder strides")

    @property
    def split_task(self) -> bool:
        return self.pred_dim < self.latent_dim

    def encoder_strides(self) -> list[tuple[int, int]]:
        strides, n_down = [], 0
        for i in range(len(self.channels)):
            if i in self.residual_layer_indices:
                strides.append((1, 1))
            else:
                strides.append((2, 2) if n_down < 2 else (1, 2))
                n_down += 1
        return strides

    @property
    def lead_factor(self) -> int:
        return int(np.prod([s[0] for s in self.encoder_strides()]))

    @property
    def time_factor(self) -> int:
        return int(np.prod([s[1] for s in self.encoder_strides()]))

    @property
    def bottleneck_hw(self) -> tuple[int, int]:
        return self.input_shape[0] // self.lead_factor, self.input_shape[1] // self.time_factor

    @property
    def hidden_size(self) -> int:
        h, w = self.bottleneck_hw
        return h * w * self.channels[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VaeArchitecture":
        return cls(**d)


def _enc_layers(arch: VaeArchitecture):
    """(name, c_in, c_out, stride, residual) for every encoder conv."""
    out, cin = [], 1
    for i, (cout, stride) in enumerate(zip(arch.channels, arch.encoder_strides())):
        out.append((f"enc{i}", cin, cout, stride, i in arch.residual_layer_indices))
        cin = cout
    return out


def _dec_layers(arch: VaeArchitecture):
    """(name, c_in, c_out, upsample, residual, linear) mirroring the encoder."""
    out = []
    enc = _enc_layers(arch)
    for k, (_, cin, cout, stride, residual) in enumerate(reversed(enc)):
        last = k == len(enc) - 1
        out.append((f"dec{k}", cout, cout if residual else cin, stride, residual, last))
    return out


@dataclass
class VaeParams:
    arch: VaeArchitecture
    tensors: dict[str, np.ndarray]
    # training-set mean/std of (rr_mean_ms, rr_std_ms)
    rr_stats: np.ndarray = field(default_factory=lambda: np.array([[0.0, 0.0], [1.0, 1.0]]))

    def copy(self) -> "VaeParams":
        return VaeParams(self.arch, {k: v.copy() for k, v in self.tensors.items()}, self.rr_stats.copy())

    def astype(self, dtype) -> "VaeParams":
        return VaeParams(self.arch, {k: v.astype(dtype) for k, v in self.tensors.items()}, self.rr_stats.copy())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def __getitem__(self, key):
        return self.tensors[key]

    def standardize_rr(self, rr) -> np.ndarray:
        rr = np.atleast_2d(np.asarray(rr, dtype=float))
        return (rr - self.rr_stats[0]) / self.rr_stats[1]


def head_names() -> tuple[str, str]:
    return ("head.w", "head.b")


def param_shapes(arch: VaeArchitecture) -> dict[str, tuple[int, ...]]:
    kh, kw = arch.lead_kernel, arch.kernel
    shapes = {}
    for name, cin, cout, _, _ in _enc_layers(arch):
        shapes[f"{name}.w"] = (kh, kw, cin, cout)
        shapes[f"{name}.b"] = (cout,)
    hid, lat = arch.hidden_size, arch.latent_dim
    shapes["mu.w"], shapes["mu.b"] = (hid, lat), (lat,)
    shapes["logvar.w"], shapes["logvar.b"] = (hid, lat), (lat,)
    shapes["dec_fc.w"], shapes["dec_fc.b"] = (lat, hid), (hid,)
    for name, cin, cout, _, _, _ in _dec_layers(arch):
        shapes[f"{name}.w"] = (kh, kw, cin, cout)
        shapes[f"{name}.b"] = (cout,)
    shapes["head.w"], shapes["head.b"] = (arch.pred_dim + 2,), (1,)
    return shapes


def init_params(arch: VaeArchitecture, seed: int = 0, dtype=np.float32) -> VaeParams:
    """He-normal weights (variance 2 / fan_in) and zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
        tensors[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    params = VaeParams(arch, tensors)
    log.info("initialised VAE with %d parameters (latent %d, pred %d)",
             params.n_parameters(), arch.latent_dim, arch.pred_dim)
    return params


@dataclass
class Noise:
    """Stochastic inputs of one training-mode pass.

    ``eps`` has shape (N, L); ``dropout`` holds one pre-scaled keep-mask per
    encoder residual layer. Fixing both makes the pass deterministic.
    """

    eps: np.ndarray | None = None
    dropout: dict[str, np.ndarray] | None = None


def sample_noise(arch: VaeArchitecture, n: int, rng: np.random.Generator, dtype=np.float32) -> Noise:
    eps = rng.standard_normal((n, arch.latent_dim)).astype(dtype)
    masks = {}
    if arch.dropout_rate > 0:
        keep = 1.0 - arch.dropout_rate
        shape = (arch.input_shape[0], arch.input_shape[1])
        for name, _, cout, stride, residual in _enc_layers(arch):
            shape = (-(-shape[0] // stride[0]), -(-shape[1] // stride[1]))
            if residual:
                u = rng.random((n, shape[0], shape[1], cout))
                masks[name] = ((u < keep) / keep).astype(dtype)
    return Noise(eps, masks)


@dataclass
class Batch:
    """Model-ready arrays: ``x`` (N, H, W) in model units, ``rr`` (N, 2)
    standardised, ``labels`` (N,) float with NaN for unlabeled records."""

    x: np.ndarray
    rr: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.x.shape[0]


@dataclass
class ForwardResult:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    x_hat: np.ndarray | None
    logit: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ParameterError(what, "contains non-finite values")


def _encode(params: VaeParams, x, noise: Noise | None, cache: dict):
    arch = params.arch
    h = (x / arch.signal_scale)[..., None]
    for name, _, _, stride, residual in _enc_layers(arch):
        a, conv_cache = layers.conv2d_forward(h, params[f"{name}.w"], params[f"{name}.b"], stride)
        a, relu_mask = layers.relu_forward(a)
        if residual:
            a = h + a
            if noise is not None and noise.dropout and name in noise.dropout:
                a = a * noise.dropout[name]
        cache[name] = (conv_cache, relu_mask)
        h = a
    flat = h.reshape(h.shape[0], -1)
    cache["flat"] = flat
    mu = flat @ params["mu.w"] + params["mu.b"]
    logvar = flat @ params["logvar.w"] + params["logvar.b"]
    return mu, logvar


def _decode(params: VaeParams, z, cache: dict):
    arch = params.arch
    hb, wb = arch.bottleneck_hw
    cache["dec_in"] = z
    a = z @ params["dec_fc.w"] + params["dec_fc.b"]
    a, cache["dec_fc"] = layers.relu_forward(a)
    h = a.reshape(z.shape[0], hb, wb, arch.channels[-1])
    for name, _, _, factor, residual, linear in _dec_layers(arch):
        if residual:
            a, conv_cache = layers.conv2d_forward(h, params[f"{name}.w"], params[f"{name}.b"])
            a, relu_mask = layers.relu_forward(a)
            h = h + a
        else:
            a, conv_cache = layers.upconv_forward(h, params[f"{name}.w"], params[f"{name}.b"], factor)
            relu_mask = None
            if not linear:
                a, relu_mask = layers.relu_forward(a)
            h = a
        cache[name] = (conv_cache, relu_mask)
    return h[..., 0] * arch.signal_scale


def head_forward(params: VaeParams, z, rr):
    """Logit and head input for latent rows ``z`` and standardised ``rr``."""
    lp = params.arch.pred_dim
    inp = np.concatenate([z[:, :lp], rr.astype(z.dtype)], axis=1)
    return inp @ params["head.w"] + params["head.b"], inp


def forward(params: VaeParams, x, rr, noise: Noise | None = None, decode=True) -> ForwardResult:
    """Batched pass. ``noise=None`` is eval mode: z = mu and no dropout."""
    x = np.asarray(x, dtype=params.dtype)
    rr = np.atleast_2d(np.asarray(rr, dtype=params.dtype))
    cache: dict = {}
    mu, logvar = _encode(params, x, noise, cache)
    if noise is not None and noise.eps is not None:
        std = np.exp(0.5 * logvar)
        z = mu + std * noise.eps
        cache["std"] = std
    else:
        z = mu.copy()
    x_hat = _decode(params, z, cache) if decode else None
    logit, head_in = head_forward(params, z, rr)
    cache["head_in"] = head_in
    return ForwardResult(mu, logvar, z, x_hat, logit, cache)


def encode(params: VaeParams, mean_beat, mode="eval", rng=None, rr=None):
    """Latent code of one 12 x 400 beat (model units) or a batch of them.

    Returns ``(mu, logvar, z)``. In ``train`` mode z is sampled with the
    reparameterisation trick and dropout is active.
    """
    x = np.asarray(mean_beat, dtype=params.dtype)
    _check_finite(x, "mean_beat")
    single = x.ndim == 2
    if single:
        x = x[None]
    noise = None
    if mode == "train":
        rng = rng if rng is not None else np.random.default_rng()
        noise = sample_noise(params.arch, x.shape[0], rng, params.dtype)
    elif mode != "eval":
        raise ParameterError("mode", f"unknown mode {mode!r}")
    cache: dict = {}
    mu, logvar = _encode(params, x, noise, cache)
    z = mu + np.exp(0.5 * logvar) * noise.eps if noise is not None else mu.copy()
    if single:
        return mu[0], logvar[0], z[0]
    return mu, logvar, z


def decode(params: VaeParams, z):
    z = np.asarray(z, dtype=params.dtype)
    single = z.ndim == 1
    if single:
        z = z[None]
    if z.shape[-1] != params.arch.latent_dim:
        raise ParameterError("z", f"expected length {params.arch.latent_dim}, got {z.shape[-1]}")
    _check_finite(z, "z")
    out = _decode(params, z, {})
    return out[0] if single else out


def predict_logit(params: VaeParams, z, rr_mean_ms, rr_std_ms, standardized=False):
    """Head logit from a latent vector and raw (ms) RR statistics."""
    rr = np.array([[rr_mean_ms, rr_std_ms]], dtype=float)
    if not standardized:
        rr = params.standardize_rr(rr)
    z = np.atleast_2d(np.asarray(z, dtype=params.dtype))
    logit, _ = head_forward(params, z, rr)
    return float(logit[0])


def _decoder_backward(params: VaeParams, d_xhat, cache, grads):
    arch = params.arch
    dh = (d_xhat * arch.signal_scale)[..., None]
    for name, _, _, factor, residual, linear in reversed(_dec_layers(arch)):
        conv_cache, relu_mask = cache[name]
        if residual:
            da = layers.relu_backward(dh, relu_mask)
            dx, dw, db = layers.conv2d_backward(da, conv_cache)
            dh = dh + dx
        else:
            da = dh if linear else layers.relu_backward(dh, relu_mask)
            dh, dw, db = layers.upconv_backward(da, conv_cache)
        grads[f"{name}.w"], grads[f"{name}.b"] = dw, db
    da = layers.relu_backward(dh.reshape(dh.shape[0], -1), cache["dec_fc"])
    dz, grads["dec_fc.w"], grads["dec_fc.b"] = layers.dense_backward(da, cache["dec_in"], params["dec_fc.w"])
    return dz


def _encoder_backward(params: VaeParams, dmu, dlogvar, cache, noise, grads):
    arch = params.arch
    flat = cache["flat"]
    dflat, grads["mu.w"], grads["mu.b"] = layers.dense_backward(dmu, flat, params["mu.w"])
    dflat2, grads["logvar.w"], grads["logvar.b"] = layers.dense_backward(dlogvar, flat, params["logvar.w"])
    dflat += dflat2
    hb, wb = arch.bottleneck_hw
    dh = dflat.reshape(-1, hb, wb, arch.channels[-1])
    enc = _enc_layers(arch)
    for idx, (name, _, _, _, residual) in enumerate(reversed(enc)):
        conv_cache, relu_mask = cache[name]
        first = idx == len(enc) - 1
        if residual:
            if noise is not None and noise.dropout and name in noise.dropout:
                dh = dh * noise.dropout[name]
            da = layers.relu_backward(dh, relu_mask)
            dx, dw, db = layers.conv2d_backward(da, conv_cache)
            dh = dh + dx
        else:
            da = layers.relu_backward(dh, relu_mask)
            dh, dw, db = layers.conv2d_backward(da, conv_cache, need_dx=not first)
        grads[f"{name}.w"], grads[f"{name}.b"] = dw, db


def loss_and_grads(params: VaeParams, batch: Batch, weights: LossWeights, phase: str,
                   mask: str = "all", noise: Noise | None = None, need_grads=True):
    """Batch-mean loss terms and exact gradients for every parameter.

    ``mask='head_only'`` returns zero gradients outside the head. The BCE
    gradient reaches the latent code only through the first ``pred_dim``
    entries because the head never reads the others.
    """
    if phase not in PHASES:
        raise ParameterError("phase", f"unknown phase {phase!r}")
    if mask not in MASKS:
        raise ParameterError("mask", f"unknown mask {mask!r}")
    n = len(batch)
    if n == 0:
        raise ParameterError("batch", "must be nonempty")
    fr = forward(params, batch.x, batch.rr, noise)
    dt = params.dtype
    x = np.asarray(batch.x, dtype=dt)
    diff = fr.x_hat - x
    n_entries = diff[0].size
    mse_i = np.mean(diff.reshape(n, -1).astype(np.float64) ** 2, axis=1)
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError("kl") below
        kl_i = 0.5 * np.sum(fr.mu.astype(np.float64) ** 2 + np.expm1(fr.logvar.astype(np.float64))
                            - fr.logvar, axis=1)
    labels = np.asarray(batch.labels, dtype=float)
    has = ~np.isnan(labels)
    use_bce = phase != "pretrain"
    logit64 = fr.logit.astype(np.float64)
    bce_i = np.zeros(n)
    if use_bce and has.any():
        lg, y = logit64[has], labels[has]
        bce_i[has] = np.log1p(np.exp(-np.abs(lg))) + np.maximum(lg, 0) - lg * y
    terms = {"mse": mse_i.mean(), "kl": kl_i.mean(), "bce": bce_i.mean()}
    for term, value in terms.items():
        if not np.isfinite(value):
            raise NumericError(term)
    total = combine_terms(terms["mse"], terms["kl"], terms["bce"], weights, phase)
    lt = LossTerms(float(total), float(terms["mse"]), float(terms["kl"]), float(terms["bce"]))
    if not np.isfinite(total):
        raise NumericError("total")
    if not need_grads:
        return lt, None

    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    dlogit = np.zeros(n, dtype=dt)
    if use_bce and weights.gamma != 0 and has.any():
        sig = 1.0 / (1.0 + np.exp(-logit64[has]))
        dlogit[has] = (weights.gamma * (sig - labels[has]) / n).astype(dt)
    head_in = fr.cache["head_in"]
    grads["head.w"] = head_in.T @ dlogit
    grads["head.b"] = np.asarray([dlogit.sum()], dtype=dt)
    if mask == "head_only":
        return lt, grads

    lp = params.arch.pred_dim
    dz = np.zeros_like(fr.z)
    dz[:, :lp] = np.outer(dlogit, params["head.w"][:lp])
    d_xhat = (2.0 / (n * n_entries)) * diff
    dz += _decoder_backward(params, d_xhat.astype(dt), fr.cache, grads)
    beta = weights.beta
    dmu = dz + (beta / n) * fr.mu
    dlogvar = (0.5 * beta / n) * np.expm1(fr.logvar)
    if noise is not None and noise.eps is not None:
        dlogvar = dlogvar + dz * 0.5 * fr.cache["std"] * noise.eps
    _encoder_backward(params, dmu.astype(dt), dlogvar.astype(dt), fr.cache, noise, grads)
    return lt, grads


def backward(params: VaeParams, batch: Batch, weights: LossWeights, phase: str,
             mask: str = "all", noise: Noise | None = None):
    """Gradient dict congruent to ``params.tensors``."""
    return loss_and_grads(params, batch, weights, phase, mask, noise)[1]
