"""Mini-batch training loop and checkpoint serialization.

Each batch runs two passes, one per input modality: encode, reparameterize,
reconstruct the full pair, and score it against the true pair.  The two
passes share the objective with a single Wasserstein term tying their
latent samples together; one Adam step is taken per batch over all tapes.
Everything is driven by one seeded generator, so a (dataset, config) pair
maps to a bitwise-reproducible checkpoint.  Labels never enter: the loop
sees only feature pairs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import SimpleNamespace
from typing import List, Optional, Tuple

import numpy as np

from . import __version__, nd
from .errors import ContractError, DataFormatError, NumericError
from .losses import LossBreakdown, LossWeights, kl_standard_normal, mse_loss, total_loss, wasserstein_latent_sampled
from .model import Arch, DECODER_MODES, ModelParams, decode_full, encode, init_model, reparameterize

PASS_MODES = ("both-per-batch", "alternate-epochs")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    decoder_mode: str = "shared"
    wasserstein_enabled: bool = True
    pass_mode: str = "both-per-batch"
    latent_dim: int = 8
    hidden_dim: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be nonnegative")
        if self.decoder_mode not in DECODER_MODES:
            raise ContractError(f"decoder_mode must be one of {DECODER_MODES}")
        if self.pass_mode not in PASS_MODES:
            raise ContractError(f"pass_mode must be one of {PASS_MODES}")

    def effective_weights(self) -> LossWeights:
        return self.weights if self.wasserstein_enabled else replace(self.weights, lambda3=0.0)


@dataclass(frozen=True)
class TrainLogEntry:
    epoch: int
    breakdown: LossBreakdown
    wall_seconds: float


def train(pairs, config: TrainConfig) -> Tuple[ModelParams, List[TrainLogEntry]]:
    """Train on a flat set of feature pairs (anything with .audio/.visual)."""
    pairs = list(pairs)
    if not pairs:
        raise ContractError("training set is empty")
    x_audio = np.stack([np.asarray(p.audio, dtype=np.float64) for p in pairs])
    x_visual = np.stack([np.asarray(p.visual, dtype=np.float64) for p in pairs])
    n = x_audio.shape[0]

    arch = Arch(
        audio_dim=x_audio.shape[1],
        visual_dim=x_visual.shape[1],
        latent_dim=config.latent_dim,
        hidden_dim=config.hidden_dim,
    )
    rng = np.random.default_rng(config.seed)
    params = init_model(arch, config.decoder_mode, seed=rng)
    params.seed = config.seed
    tape = params.merged_tape()
    state = nd.AdamState(learning_rate=config.learning_rate)
    weights = config.effective_weights()

    # alternate-epochs mode keeps the last posterior mean seen per sample
    stored_mean = {m: np.zeros((n, config.latent_dim)) for m in ("audio", "visual")}
    stored_seen = {m: np.zeros(n, dtype=bool) for m in ("audio", "visual")}

    log: List[TrainLogEntry] = []
    for epoch in range(config.epochs):
        t_start = time.perf_counter()
        lam2 = weights.lambda2_at(epoch)
        perm = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            target = SimpleNamespace(audio=x_audio[idx], visual=x_visual[idx])

            if config.pass_mode == "both-per-batch":
                loss, comps = _both_pass_loss(params, target, rng, weights, lam2)
            else:
                modality = "audio" if epoch % 2 == 0 else "visual"
                loss, comps = _alternate_pass_loss(
                    params, target, idx, modality, rng, weights, lam2, stored_mean, stored_seen
                )

            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}: "
                    f"components mse={comps[0]!r} kl={comps[1]!r} w={comps[2]!r}"
                )
            grads = nd.backward(loss, tape)
            nd.adam_step(state, tape, grads)
            sums += comps
            batches += 1

        mean = sums / batches
        breakdown = total_loss(float(mean[0]), float(mean[1]), float(mean[2]), weights, epoch)
        log.append(TrainLogEntry(epoch=epoch, breakdown=breakdown, wall_seconds=time.perf_counter() - t_start))
    return params, log


def _both_pass_loss(params, target, rng, weights, lam2):
    g_a = encode(params, "audio", target.audio)
    eps_a = rng.standard_normal(g_a.mean.shape)
    z_a = reparameterize(g_a, eps_a)
    pair_a = decode_full(params, z_a, "audio")

    g_v = encode(params, "visual", target.visual)
    eps_v = rng.standard_normal(g_v.mean.shape)
    z_v = reparameterize(g_v, eps_v)
    pair_v = decode_full(params, z_v, "visual")

    mse = mse_loss(pair_a, target) + mse_loss(pair_v, target)
    kl = kl_standard_normal(g_a) + kl_standard_normal(g_v)
    w = wasserstein_latent_sampled(z_a, z_v)
    loss = weights.lambda1 * mse + lam2 * kl + weights.lambda3 * w
    return loss, np.array([mse.item(), kl.item(), w.item()])


def _alternate_pass_loss(params, target, idx, modality, rng, weights, lam2, stored_mean, stored_seen):
    other = "visual" if modality == "audio" else "audio"
    x = target.audio if modality == "audio" else target.visual
    g = encode(params, modality, x)
    eps = rng.standard_normal(g.mean.shape)
    z = reparameterize(g, eps)
    pair = decode_full(params, z, modality)

    mse = mse_loss(pair, target)
    kl = kl_standard_normal(g)

    # W against the opposite modality's last stored posterior means (constants);
    # rows with no stored anchor yet are masked out of the term entirely
    seen = stored_seen[other][idx]
    if seen.any():
        anchor = stored_mean[other][idx]
        mask = seen.astype(np.float64)[:, None]
        diff = (z - anchor) * mask
        w = (diff * diff).sum(axis=1).sqrt().sum() / float(seen.sum())
    else:
        w = nd.Tensor(0.0)

    stored_mean[modality][idx] = g.mean.data
    stored_seen[modality][idx] = True

    loss = weights.lambda1 * mse + lam2 * kl + weights.lambda3 * w
    return loss, np.array([mse.item(), kl.item(), w.item()])


def write_train_log(log: List[TrainLogEntry], path) -> None:
    """One JSON object per epoch: epoch, mse, kl, w_latent, total."""
    lines = []
    for entry in log:
        b = entry.breakdown
        lines.append(
            json.dumps(
                {"epoch": entry.epoch, "mse": b.mse, "kl": b.kl, "w_latent": b.w_latent, "total": b.total},
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


# ---- checkpoints ---------------------------------------------------------------


def save_checkpoint(params: ModelParams, directory, metadata: Optional[dict] = None) -> None:
    """Write model.json (header) and params.f32 (flat little-endian float32)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    manifest = []
    chunks = []
    for prefix, tape in params.tapes().items():
        for name, tensor in tape.items():
            manifest.append({"name": f"{prefix}/{name}", "shape": list(tensor.shape)})
            chunks.append(tensor.data.reshape(-1))

    header = {
        "format": "pairvae-checkpoint",
        "version": __version__,
        "arch": {
            "audio_dim": params.arch.audio_dim,
            "visual_dim": params.arch.visual_dim,
            "latent_dim": params.arch.latent_dim,
            "hidden_dim": params.arch.hidden_dim,
        },
        "decoder_mode": params.decoder_mode,
        "seed": params.seed,
        "manifest": manifest,
        "metadata": metadata or {},
    }
    (directory / "model.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    np.concatenate(chunks).astype("<f4").tofile(directory / "params.f32")


def load_checkpoint(directory) -> ModelParams:
    """Rebuild ModelParams; unknown header fields are ignored."""
    directory = Path(directory)
    header_path = directory / "model.json"
    if not header_path.exists():
        raise DataFormatError(f"missing file: {header_path}")
    header = json.loads(header_path.read_text())

    mode = header.get("decoder_mode")
    if mode not in DECODER_MODES:
        raise DataFormatError(f"unknown decoder_mode {mode!r} in checkpoint header")
    try:
        arch = Arch(
            audio_dim=int(header["arch"]["audio_dim"]),
            visual_dim=int(header["arch"]["visual_dim"]),
            latent_dim=int(header["arch"]["latent_dim"]),
            hidden_dim=int(header["arch"]["hidden_dim"]),
        )
        manifest = header["manifest"]
    except KeyError as exc:
        raise DataFormatError(f"checkpoint header is missing field {exc}") from exc

    params = init_model(arch, mode, seed=int(header.get("seed", 0)))
    expected = [
        (f"{prefix}/{name}", tensor)
        for prefix, tape in params.tapes().items()
        for name, tensor in tape.items()
    ]
    if len(manifest) != len(expected):
        raise DataFormatError("checkpoint manifest does not match the declared architecture")
    for entry, (name, tensor) in zip(manifest, expected):
        if entry["name"] != name or tuple(entry["shape"]) != tensor.shape:
            raise DataFormatError(
                f"manifest entry {entry['name']!r} {entry['shape']} does not match expected {name!r} {list(tensor.shape)}"
            )

    total = sum(t.size for _, t in expected)
    params_path = directory / "params.f32"
    if not params_path.exists():
        raise DataFormatError(f"missing file: {params_path}")
    raw = np.fromfile(params_path, dtype="<f4")
    if raw.size != total:
        raise DataFormatError(f"corrupt checkpoint: params.f32 holds {raw.size} floats, manifest expects {total}")

    offset = 0
    for _, tensor in expected:
        block = raw[offset : offset + tensor.size]
        tensor.data = block.astype(np.float64).reshape(tensor.shape)
        offset += tensor.size
    return params
