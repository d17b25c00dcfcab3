"""Framework-free beta-VAE with a prediction head."""

from .losses import LossTerms, LossWeights, bce_loss, combine_terms, kl_loss, mse_loss, total_loss
from .model import (
    Batch,
    Noise,
    VaeArchitecture,
    VaeParams,
    backward,
    decode,
    encode,
    forward,
    init_params,
    loss_and_grads,
    param_shapes,
    predict_logit,
    sample_noise,
)
