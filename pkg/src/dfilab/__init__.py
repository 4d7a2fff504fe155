"""Discriminator Feature-based Inference (DFI) on low-dimensional toy data.

Submodules:

- ``autodiff`` / ``nn`` / ``optim``: tape autodiff, dense networks, Adam
- ``data``: Gaussian-mixture ground truth
- ``gan``: GAN training and discriminator feature extraction
- ``inference``: encoders, DFI connection networks and latent refinement
- ``metrics``: Fréchet distance, mode coverage, reconstruction errors
- ``scgan``: spatially conditioned generation on top of a frozen DFI stage
- ``harness``: configs, checkpoints, reports, plots and the ``dfi-lab`` CLI
"""

__version__ = "0.1.0"
