"""Training objective: reconstruction MSE, KL to the standard-normal prior,
and a sampled Wasserstein penalty between the two modality posteriors.

The closed-form diagonal-Gaussian 2-Wasserstein distance lives here too; it
is the deterministic latent distance used at inference time and the oracle
the sampled estimator is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nd
from .errors import ContractError, ShapeError
from .model import GeneratedPair, LatentGaussian


@dataclass(frozen=True)
class LossWeights:
    """Weights for total = l1*mse + l2(epoch)*kl + l3*w_latent.

    l2 starts at ``lambda2`` and drops to ``lambda2_late`` once the epoch
    reaches ``switch_epoch`` (epochs are counted from zero).
    """

    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 1.0
    lambda2_late: float = 0.01
    switch_epoch: int = 10

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda2_late"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        if self.switch_epoch < 0:
            raise ContractError("switch_epoch must be nonnegative")

    def lambda2_at(self, epoch: int) -> float:
        return self.lambda2 if epoch < self.switch_epoch else self.lambda2_late


@dataclass(frozen=True)
class LossBreakdown:
    mse: float
    kl: float
    w_latent: float
    total: float
    epoch: int


def mse_loss(x_hat: GeneratedPair, x) -> nd.Tensor:
    """Mean squared error over the concatenated (d_a + d_v)-vector.

    ``x`` needs ``audio``/``visual`` arrays matching the pair's slots;
    batches average over rows as well as feature entries.
    """
    if x_hat.audio_hat is None or x_hat.visual_hat is None:
        raise ContractError("mse_loss needs a full pair; a modality slot is missing")
    target_a = np.asarray(x.audio, dtype=np.float64)
    target_v = np.asarray(x.visual, dtype=np.float64)
    if x_hat.audio_hat.shape != target_a.shape or x_hat.visual_hat.shape != target_v.shape:
        raise ShapeError(
            f"pair shapes {x_hat.audio_hat.shape}/{x_hat.visual_hat.shape} do not match "
            f"targets {target_a.shape}/{target_v.shape}"
        )
    da = x_hat.audio_hat - target_a
    dv = x_hat.visual_hat - target_v
    n = da.size + dv.size
    return ((da * da).sum() + (dv * dv).sum()) / float(n)


def kl_standard_normal(g: LatentGaussian) -> nd.Tensor:
    """Closed-form KL(q || N(0, I)) summed over latent dims.

    For a batched posterior this is the mean of the per-row KLs.
    """
    per_dim = g.mean * g.mean + g.logvar.exp() - g.logvar - 1.0
    if per_dim.ndim == 1:
        return per_dim.sum() * 0.5
    return per_dim.sum(axis=1).mean() * 0.5


def wasserstein_latent_sampled(z_a: nd.Tensor, z_v: nd.Tensor) -> nd.Tensor:
    """Euclidean distance between the two reparameterized latent samples.

    Batched inputs give the mean of per-row distances.  Differentiable with
    respect to both samples (zero subgradient at coincident points).
    """
    z_a = nd.Tensor.as_tensor(z_a)
    z_v = nd.Tensor.as_tensor(z_v)
    if z_a.shape != z_v.shape:
        raise ShapeError(f"latent shapes differ: {z_a.shape} vs {z_v.shape}")
    d = z_a - z_v
    sq = d * d
    if sq.ndim == 1:
        return sq.sum().sqrt()
    return sq.sum(axis=1).sqrt().mean()


def gaussian_w2_closed_form(g1: LatentGaussian, g2: LatentGaussian, use_sigma: bool = True) -> float:
    """2-Wasserstein distance between two diagonal Gaussians.

    W2^2 = ||mu1 - mu2||^2 + sum_d (sigma1_d - sigma2_d)^2; with
    ``use_sigma=False`` only the mean term is kept.
    """
    m1, m2 = g1.mean_array, g2.mean_array
    if m1.shape != m2.shape:
        raise ShapeError(f"latent dims differ: {m1.shape} vs {m2.shape}")
    sq = float(np.sum((m1 - m2) ** 2))
    if use_sigma:
        sq += float(np.sum((g1.sigma_array - g2.sigma_array) ** 2))
    return math.sqrt(sq)


def total_loss(mse: float, kl: float, w_latent: float, weights: LossWeights, epoch: int) -> LossBreakdown:
    """Apply the epoch-scheduled weights to already-computed components."""
    lam2 = weights.lambda2_at(epoch)
    total = weights.lambda1 * mse + lam2 * kl + weights.lambda3 * w_latent
    return LossBreakdown(mse=mse, kl=kl, w_latent=w_latent, total=total, epoch=epoch)
