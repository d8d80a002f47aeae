"""Embryo image synthesis and evaluation workbench.

Covers dataset ingestion and leakage-free splitting, per-stage latent
diffusion and style-based adversarial generators, Frechet-distance
checkpoint selection, real/synthetic classification benchmarks, and an
expert Turing-test service with region annotation.
"""

__version__ = "0.1.0"
