"""Paired-modality VAE toolkit.

Two modality encoders feed one latent space; a shared decoder (or separate
per-modality decoders, for the ablation variant) reconstructs the full
feature pair from either modality.  Training couples reconstruction error,
a KL pull toward the standard-normal prior, and a sampled Wasserstein
penalty that aligns the two posteriors.  Downstream evaluation covers
temporal cross-modal localization, cross-/intra-modal retrieval, and latent
space export.
"""

__version__ = "0.1.0"
