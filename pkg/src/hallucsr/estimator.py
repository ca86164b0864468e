"""scikit-learn style front end.

``fit`` takes high-resolution images; LR inputs are synthesized by area
downscaling. ``predict``/``transform`` reconstruct HR images from LR inputs
and ``sample`` draws hallucinations.
"""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images
from .data import make_pair
from .evaluation import psnr
from .imagecore import downscale, to_numpy, to_tensor
from .losses import LossWeights
from .nets import GeneratorConfig, build_bundle
from .training import TrainConfig, substream_seed, train


class HallucinationSR(TransformerMixin, BaseEstimator):
    """One-to-many super-resolution GAN.

    Parameters mirror :class:`GeneratorConfig`, :class:`LossWeights` and
    :class:`TrainConfig`; ``n_steps`` is the number of D/G iterations.

    Attributes
    ----------
    bundle_ : ModelBundle
        Trained networks and optimizer state.
    metrics_ : list of dict
        One row of loss values per training step.
    """

    def __init__(self, scale_factor=8, base_channels=32, num_residual_blocks=8, noise_dim=64,
                 min_channels=16, gamma=10.0, beta=0.1, alpha=1.0, tau=10.0, epsilon=0.1,
                 r1_coeff=10.0, lr_generator=1e-4, lr_discriminator=4e-4, batch_size=8,
                 n_steps=2000, stage_widths=(32, 64, 128), random_state=0):
        self.scale_factor = scale_factor
        self.base_channels = base_channels
        self.num_residual_blocks = num_residual_blocks
        self.noise_dim = noise_dim
        self.min_channels = min_channels
        self.gamma = gamma
        self.beta = beta
        self.alpha = alpha
        self.tau = tau
        self.epsilon = epsilon
        self.r1_coeff = r1_coeff
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.stage_widths = stage_widths
        self.random_state = random_state

    def _configs(self, hr_shape):
        h, w, c = hr_shape
        gen = GeneratorConfig(lr_size=h // self.scale_factor, scale_factor=self.scale_factor,
                              base_channels=self.base_channels, num_residual_blocks=self.num_residual_blocks,
                              noise_dim=self.noise_dim, channels=c, min_channels=self.min_channels)
        weights = LossWeights(gamma=self.gamma, beta=self.beta, alpha=self.alpha, tau=self.tau,
                              epsilon=self.epsilon, r1_coeff=self.r1_coeff)
        trn = TrainConfig(lr_generator=self.lr_generator, lr_discriminator=self.lr_discriminator,
                          batch_size=self.batch_size, total_steps=self.n_steps,
                          seed=self.random_state, weights=weights, checkpoint_every=max(self.n_steps, 1))
        return gen, trn

    def fit(self, X, y=None):
        """Train on HR images ``X`` of shape (N, H, W, C); ``y`` is ignored."""
        X = check_images(X, multiple_of=self.scale_factor, min_side=3 * self.scale_factor)
        gen_cfg, train_cfg = self._configs(X.shape[1:])
        dataset = [make_pair(hr, self.scale_factor, f"{i:06d}") for i, hr in enumerate(to_tensor(X))]
        bundle = build_bundle(gen_cfg, seed=substream_seed(self.random_state, "init"),
                              stage_widths=self.stage_widths)
        self.bundle_, self.metrics_ = train(train_cfg, dataset, bundle=bundle)
        self.bundle_.generator.eval()
        self.n_channels_in_ = X.shape[-1]
        return self

    def _lr_tensor(self, X):
        check_is_fitted(self, "bundle_")
        X = check_images(X, channels=self.n_channels_in_, name="X_lr")
        return to_tensor(X)

    def _generate(self, lr: torch.Tensor, z: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            return to_numpy(self.bundle_.generator(lr, z).image)

    def predict(self, X):
        """Reconstruct HR images (``z = 0``) from LR images ``X``."""
        lr = self._lr_tensor(X)
        return self._generate(lr, torch.zeros(self.noise_dim))

    def transform(self, X):
        return self.predict(X)

    def sample(self, X, n_samples=4, random_state=None):
        """Hallucinations with shape (N, n_samples, H, W, C)."""
        lr = self._lr_tensor(X)
        seed = self.random_state if random_state is None else random_state
        gen = torch.Generator().manual_seed(substream_seed(seed, "sample"))
        outs = [self._generate(lr, torch.randn(self.noise_dim, generator=gen)) for _ in range(n_samples)]
        return np.stack(outs, axis=1)

    def score(self, X, y=None):
        """Mean reconstruction PSNR (dB) on HR images ``X`` after downscaling them."""
        hr = to_tensor(check_images(X, multiple_of=self.scale_factor))
        sr = to_tensor(self.predict(to_numpy(downscale(hr, self.scale_factor))))
        return float(np.mean([psnr(a, b) for a, b in zip(sr, hr)]))
