"""Multi-adversarial VAE-GAN lab.

Joint image generation and semi-supervised multi-class classification with
an ensemble of discriminators, plus FID / DDD / accuracy / F1 metrics and
DC-GAN / VAE-GAN baselines for controlled comparison.
"""

__version__ = "0.1.0"
