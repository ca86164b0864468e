"""Training objectives for the reconstruction and hallucination passes.

Adversarial losses take raw logits (any shape) and average over every
element, so patch-shaped discriminator outputs work unchanged.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F


class DegenerateNoiseError(ValueError):
    """Two noise vectors are too close for the diversity ratio."""


@dataclass
class LossWeights:
    gamma: float = 10.0
    beta: float = 0.1
    alpha: float = 1.0
    tau: float = 10.0
    epsilon: float = 0.1
    r1_coeff: float = 10.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _finite(x: torch.Tensor, what: str) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"{what} contains non-finite values")


def perceptual_loss(
    sr: torch.Tensor,
    hr: torch.Tensor,
    extractor: Callable[[torch.Tensor], Sequence[torch.Tensor]],
) -> torch.Tensor:
    """Sum over extractor stages of the mean absolute feature difference."""
    _same_shape(sr, hr, "perceptual_loss")
    total = sr.new_zeros(())
    for f_sr, f_hr in zip(extractor(sr), extractor(hr)):
        total = total + (f_sr - f_hr).abs().mean()
    return total


def gradient_recon_loss(g_sr: torch.Tensor, g_hr: torch.Tensor) -> torch.Tensor:
    _same_shape(g_sr, g_hr, "gradient_recon_loss")
    return (g_sr - g_hr).abs().mean()


def diversity_loss(
    g1: torch.Tensor,
    g2: torch.Tensor,
    z1: torch.Tensor,
    z2: torch.Tensor,
    tau: float = 10.0,
) -> torch.Tensor:
    """Clamped ratio of gradient-map distance to noise distance.

    ``min(mean|g1 - g2| / ||z1 - z2||_2, tau)`` per sample, averaged over the
    batch. Unbatched inputs (``z`` of shape ``(m,)``) count as one sample.
    The generator maximizes this quantity.
    """
    _same_shape(g1, g2, "diversity_loss")
    if z1.dim() == 1:
        z1, z2 = z1[None], z2[None]
        g1, g2 = g1[None], g2[None]
    _same_shape(z1, z2, "diversity_loss noise")
    if g1.shape[0] != z1.shape[0]:
        raise ValueError(f"batch of maps ({g1.shape[0]}) and noise ({z1.shape[0]}) differ")

    znorm = torch.linalg.vector_norm(z1 - z2, dim=1)
    if (znorm < 1e-8).any():
        raise DegenerateNoiseError("noise vectors z1 and z2 coincide (||z1 - z2|| < 1e-8)")
    dist = (g1 - g2).abs().flatten(1).mean(dim=1)
    return torch.clamp(dist / znorm, max=tau).mean()


def d_adversarial_loss(logits_real: torch.Tensor, logits_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating logistic loss for the discriminator."""
    _finite(logits_real, "logits_real")
    _finite(logits_fake, "logits_fake")
    return F.softplus(-logits_real).mean() + F.softplus(logits_fake).mean()


def g_adversarial_loss(logits_fake: torch.Tensor) -> torch.Tensor:
    _finite(logits_fake, "logits_fake")
    return F.softplus(-logits_fake).mean()


def _as_list(inputs) -> list[torch.Tensor]:
    return list(inputs) if isinstance(inputs, (list, tuple)) else [inputs]


def r1_from_logits(logits_real: torch.Tensor, real_inputs) -> torch.Tensor:
    """R1 penalty given logits already computed from ``real_inputs``.

    The inputs must have ``requires_grad`` set before the forward pass. The
    graph is kept so the penalty itself can be backpropagated.
    """
    inputs = _as_list(real_inputs)
    batch = inputs[0].shape[0]
    if not logits_real.requires_grad:
        return inputs[0].new_zeros(())
    grads = torch.autograd.grad(logits_real.sum(), inputs, create_graph=True, allow_unused=True)
    sq = inputs[0].new_zeros(batch)
    for g in grads:
        if g is not None:
            sq = sq + g.pow(2).reshape(batch, -1).sum(dim=1)
    return 0.5 * sq.mean()


def r1_penalty(discriminator, real_batch, cond=None) -> torch.Tensor:
    """Half the batch-mean squared norm of d(sum of real logits)/d(real inputs).

    ``real_batch`` is a tensor or a list of per-scale tensors sharing the
    batch dimension; ``discriminator(inputs, cond)`` must return logits.
    A given ``cond`` is part of the discriminator input and is included in
    the gradient norm.
    """
    inputs = [x.detach().requires_grad_(True) for x in _as_list(real_batch)]
    arg = inputs if isinstance(real_batch, (list, tuple)) else inputs[0]
    if cond is not None:
        cond = cond.detach().requires_grad_(True)
        logits = discriminator(arg, cond)
        return r1_from_logits(logits, inputs + [cond])
    return r1_from_logits(discriminator(arg, cond), inputs)


def recons_total(percp, grad, adv_g, adv_i, w: LossWeights):
    return w.gamma * (percp + grad) + w.beta * (adv_g + adv_i)


def halluc_total(adv_g, adv_i, div, w: LossWeights):
    # diversity is maximized, so it enters the minimized objective negated
    return adv_g + adv_i - w.alpha * div
