"""The paired-modality VAE network.

Two MLP encoders (one per modality) map a feature vector to a diagonal
Gaussian over a shared latent space.  In the default ``shared`` mode one
decoder reconstructs the concatenated (audio, visual) pair from any latent;
the ``separate`` ablation mode unties the decoder into two per-modality
heads, with cross-generation routing one modality's latent through the
other modality's decoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import nd
from .errors import ContractError, ShapeError

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

MODALITIES = ("audio", "visual")

DECODER_MODES = ("shared", "separate")


@dataclass(frozen=True)
class Arch:
    """Network dimensions. Hidden layers use tanh; heads are linear."""

    audio_dim: int
    visual_dim: int
    latent_dim: int = 8
    hidden_dim: int = 64

    def __post_init__(self):
        for name in ("audio_dim", "visual_dim", "latent_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")

    def encoder_layers(self, modality: str):
        d = self.audio_dim if modality == "audio" else self.visual_dim
        return [
            nd.LayerSpec(d, self.hidden_dim, "tanh"),
            nd.LayerSpec(self.hidden_dim, 2 * self.latent_dim),
        ]

    def decoder_layers(self, output_dim: int):
        return [
            nd.LayerSpec(self.latent_dim, self.hidden_dim, "tanh"),
            nd.LayerSpec(self.hidden_dim, output_dim),
        ]


@dataclass
class LatentGaussian:
    """Diagonal Gaussian posterior; mean/logvar may be (L,) or a (B, L) batch."""

    mean: nd.Tensor
    logvar: nd.Tensor

    @property
    def mean_array(self) -> np.ndarray:
        return self.mean.data

    @property
    def sigma_array(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar.data)

    @property
    def latent_dim(self) -> int:
        return self.mean.shape[-1]


@dataclass
class GeneratedPair:
    """Reconstructed feature pair; a slot is None when a separate-mode decoder
    produced only its own modality."""

    audio_hat: Optional[nd.Tensor]
    visual_hat: Optional[nd.Tensor]
    source_modality: Optional[str] = None

    def concat_array(self) -> np.ndarray:
        """Both slots as one flat (..., d_a + d_v) array (values only)."""
        if self.audio_hat is None or self.visual_hat is None:
            raise ContractError("pair is missing a modality slot")
        return np.concatenate([self.audio_hat.data, self.visual_hat.data], axis=-1)


@dataclass
class ModelParams:
    """All weights plus the architecture descriptor."""

    arch: Arch
    decoder_mode: str
    audio_encoder: nd.ParamTape
    visual_encoder: nd.ParamTape
    decoder: Optional[nd.ParamTape] = None
    decoder_audio: Optional[nd.ParamTape] = None
    decoder_visual: Optional[nd.ParamTape] = None
    seed: int = 0

    def tapes(self) -> dict:
        """Component tapes in serialization order."""
        out = {"audio_encoder": self.audio_encoder, "visual_encoder": self.visual_encoder}
        if self.decoder_mode == "shared":
            out["decoder"] = self.decoder
        else:
            out["decoder_audio"] = self.decoder_audio
            out["decoder_visual"] = self.decoder_visual
        return out

    def merged_tape(self) -> nd.ParamTape:
        """One tape over every component, names prefixed; tensors are shared."""
        merged = nd.ParamTape()
        for prefix, tape in self.tapes().items():
            for name, tensor in tape.items():
                merged.add(f"{prefix}/{name}", tensor)
        return merged


def _check_modality(modality: str) -> None:
    if modality not in MODALITIES:
        raise ContractError(f"modality must be one of {MODALITIES}, got {modality!r}")


def init_model(
    arch: Arch,
    decoder_mode: str = "shared",
    seed: Union[int, np.random.Generator] = 0,
) -> ModelParams:
    """Seeded weight initialization; draw order is fixed so results are
    reproducible from the seed alone."""
    if decoder_mode not in DECODER_MODES:
        raise ContractError(f"decoder_mode must be one of {DECODER_MODES}, got {decoder_mode!r}")
    if isinstance(seed, np.random.Generator):
        rng, seed_value = seed, -1
    else:
        rng, seed_value = np.random.default_rng(seed), int(seed)

    params = ModelParams(
        arch=arch,
        decoder_mode=decoder_mode,
        audio_encoder=nd.init_mlp(arch.encoder_layers("audio"), rng),
        visual_encoder=nd.init_mlp(arch.encoder_layers("visual"), rng),
        seed=seed_value,
    )
    if decoder_mode == "shared":
        params.decoder = nd.init_mlp(arch.decoder_layers(arch.audio_dim + arch.visual_dim), rng)
    else:
        params.decoder_audio = nd.init_mlp(arch.decoder_layers(arch.audio_dim), rng)
        params.decoder_visual = nd.init_mlp(arch.decoder_layers(arch.visual_dim), rng)
    return params


def encode(params: ModelParams, modality: str, x) -> LatentGaussian:
    """Posterior q(z|x) for one modality; accepts a vector or a (B, d) batch."""
    _check_modality(modality)
    x = nd.Tensor.as_tensor(x)
    expected = params.arch.audio_dim if modality == "audio" else params.arch.visual_dim
    if x.shape[-1] != expected:
        raise ShapeError(f"{modality} input has dim {x.shape[-1]}, expected {expected}")
    tape = params.audio_encoder if modality == "audio" else params.visual_encoder
    out = nd.mlp_forward(tape, x, params.arch.encoder_layers(modality))
    latent = params.arch.latent_dim
    mean = out.slice_cols(0, latent)
    logvar = out.slice_cols(latent, 2 * latent).clamp(LOGVAR_MIN, LOGVAR_MAX)
    return LatentGaussian(mean, logvar)


def reparameterize(g: LatentGaussian, eps) -> nd.Tensor:
    """z = mean + exp(logvar/2) * eps; gradients flow into mean and logvar."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != g.mean.shape:
        raise ShapeError(f"eps shape {eps.shape} != latent shape {g.mean.shape}")
    return g.mean + (g.logvar * 0.5).exp() * eps


def decode(params: ModelParams, z, modality: Optional[str] = None) -> GeneratedPair:
    """Reconstruction from a latent.

    Shared mode runs the one decoder and splits its output into the two
    slots; ``modality`` is only recorded as the pair's source.  Separate
    mode requires ``modality`` and runs that modality's decoder, filling
    that slot alone.
    """
    z = nd.Tensor.as_tensor(z)
    arch = params.arch
    if z.shape[-1] != arch.latent_dim:
        raise ShapeError(f"latent has dim {z.shape[-1]}, expected {arch.latent_dim}")

    if params.decoder_mode == "shared":
        out = nd.mlp_forward(params.decoder, z, arch.decoder_layers(arch.audio_dim + arch.visual_dim))
        return GeneratedPair(
            audio_hat=out.slice_cols(0, arch.audio_dim),
            visual_hat=out.slice_cols(arch.audio_dim, arch.audio_dim + arch.visual_dim),
            source_modality=modality,
        )

    if modality is None:
        raise ContractError("separate-mode decode requires a modality")
    _check_modality(modality)
    if modality == "audio":
        out = nd.mlp_forward(params.decoder_audio, z, arch.decoder_layers(arch.audio_dim))
        return GeneratedPair(audio_hat=out, visual_hat=None, source_modality="audio")
    out = nd.mlp_forward(params.decoder_visual, z, arch.decoder_layers(arch.visual_dim))
    return GeneratedPair(audio_hat=None, visual_hat=out, source_modality="visual")


def decode_full(params: ModelParams, z, source_modality: Optional[str] = None) -> GeneratedPair:
    """Full (audio, visual) pair from a latent, in either decoder mode.

    Separate mode fills the counterpart slot by pushing the same latent
    through the other modality's decoder (cross-generation).
    """
    if params.decoder_mode == "shared":
        return decode(params, z, source_modality)
    return GeneratedPair(
        audio_hat=decode(params, z, "audio").audio_hat,
        visual_hat=decode(params, z, "visual").visual_hat,
        source_modality=source_modality,
    )


def generate_pair(params: ModelParams, modality: str, x, eps):
    """encode -> reparameterize -> decode_full; always yields both slots.

    Returns the pair together with the posterior used to sample it.
    """
    g = encode(params, modality, x)
    z = reparameterize(g, eps)
    return decode_full(params, z, modality), g
