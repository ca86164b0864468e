"""Alternating discriminator / generator optimization.

Each iteration runs one discriminator step followed by one generator step.
The generator step combines a reconstruction pass (``z = 0``) and a
hallucination pass (two noise draws per item) into a single update.
"""
from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import PairedSample
from .imagecore import compute_gradient, constraint_map, downscale
from .losses import (
    LossWeights,
    d_adversarial_loss,
    diversity_loss,
    g_adversarial_loss,
    gradient_recon_loss,
    halluc_total,
    perceptual_loss,
    r1_from_logits,
    recons_total,
)
from .nets import GeneratorConfig, ModelBundle, build_bundle, save_checkpoint

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "loss_DI", "loss_Dg", "loss_recons", "loss_halluc",
                  "L_percp", "L_grad", "L_z", "r1_I", "r1_g")


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_generator: float = 1e-4
    lr_discriminator: float = 4e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.9
    batch_size: int = 8
    total_steps: int = 2000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 500
    hflip: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.total_steps <= 0:
            raise ValueError("total_steps must be > 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be > 0")


def substream_seed(seed: int, name: str) -> int:
    """Independent seed for a named random stream derived from the root seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def make_rng(seed: int) -> dict[str, torch.Generator]:
    return {name: torch.Generator().manual_seed(substream_seed(seed, name)) for name in ("data", "z")}


def attach_optimizers(bundle: ModelBundle, config: TrainConfig) -> None:
    """Create Adam optimizers (extractor excluded) and restore any loaded state."""
    betas = (config.adam_beta1, config.adam_beta2)
    bundle.opt_g = torch.optim.Adam(bundle.generator.parameters(), lr=config.lr_generator, betas=betas)
    d_params = list(bundle.disc_image.parameters()) + list(bundle.disc_grad.parameters())
    bundle.opt_d = torch.optim.Adam(d_params, lr=config.lr_discriminator, betas=betas)
    if bundle.optimizer_state:
        bundle.opt_g.load_state_dict(bundle.optimizer_state["generator"])
        bundle.opt_d.load_state_dict(bundle.optimizer_state["discriminators"])
        bundle.optimizer_state = None


def real_pyramid(hr: torch.Tensor, config: GeneratorConfig) -> tuple[list, list]:
    """Ground-truth images and gradient maps at every generator output scale."""
    images, grads = [], []
    for size in config.scale_sizes():
        img = downscale(hr, hr.shape[-1] // size)
        images.append(img)
        grads.append(compute_gradient(img))
    return images, grads


def sample_batch(dataset: Sequence[PairedSample], batch_size: int, gen: torch.Generator, hflip: bool = False):
    n = len(dataset)
    if n >= batch_size:
        idx = torch.randperm(n, generator=gen)[:batch_size]
    else:
        idx = torch.randint(n, (batch_size,), generator=gen)
    lr = torch.stack([dataset[i].lr for i in idx.tolist()])
    hr = torch.stack([dataset[i].hr for i in idx.tolist()])
    if hflip:
        flip = torch.rand(batch_size, generator=gen) < 0.5
        lr = torch.where(flip[:, None, None, None], lr.flip(-1), lr)
        hr = torch.where(flip[:, None, None, None], hr.flip(-1), hr)
    return lr, hr


def _check_finite(values: dict, where: str) -> None:
    bad = {k: v for k, v in values.items() if not np.isfinite(v)}
    if bad:
        raise NonFiniteLossError(f"non-finite loss in {where}: {bad}")


def train_step_discriminators(bundle: ModelBundle, batch, rng: dict, weights: LossWeights) -> dict:
    lr, hr = batch
    cfg = bundle.config
    b = lr.shape[0]
    G, DI, Dg = bundle.generator, bundle.disc_image, bundle.disc_grad

    real_imgs, real_grads = real_pyramid(hr, cfg)
    z = torch.randn(b, cfg.noise_dim, generator=rng["z"])
    z[: b // 2] = 0.0  # first half reconstructs, second half hallucinates
    with torch.no_grad():
        fake = G(lr, z)
        cond_fake = constraint_map(fake.image, lr, cfg.scale_factor, weights.epsilon)

    DI.requires_grad_(True)
    Dg.requires_grad_(True)
    real_imgs = [x.detach().requires_grad_(True) for x in real_imgs]
    real_grads = [x.detach().requires_grad_(True) for x in real_grads]
    # the zero constraint map is part of the real input, so R1 covers it too
    cond_real = torch.zeros_like(cond_fake).requires_grad_(True)

    logits_real_i = DI(real_imgs, cond_real)
    logits_fake_i = DI(fake.images, cond_fake)
    logits_real_g = Dg(real_grads)
    logits_fake_g = Dg(fake.gradients)
    try:
        adv_i = d_adversarial_loss(logits_real_i, logits_fake_i)
        adv_g = d_adversarial_loss(logits_real_g, logits_fake_g)
    except ValueError as exc:
        raise NonFiniteLossError(f"discriminator step: {exc}") from exc
    r1_i = r1_from_logits(logits_real_i, real_imgs + [cond_real])
    r1_g = r1_from_logits(logits_real_g, real_grads)
    loss_i = adv_i + weights.r1_coeff * r1_i
    loss_g = adv_g + weights.r1_coeff * r1_g

    out = {"loss_DI": loss_i.item(), "loss_Dg": loss_g.item(), "r1_I": r1_i.item(), "r1_g": r1_g.item()}
    _check_finite(out, "discriminator step")
    bundle.opt_d.zero_grad(set_to_none=True)
    (loss_i + loss_g).backward()
    bundle.opt_d.step()
    G.zero_grad(set_to_none=True)
    return out


def _draw_noise_pair(b: int, m: int, gen: torch.Generator):
    z1 = torch.randn(b, m, generator=gen)
    z2 = torch.randn(b, m, generator=gen)
    return z1, z2


def train_step_generator(bundle: ModelBundle, batch, rng: dict, weights: LossWeights) -> dict:
    lr, hr = batch
    cfg = bundle.config
    b = lr.shape[0]
    G, DI, Dg = bundle.generator, bundle.disc_image, bundle.disc_grad
    DI.requires_grad_(False)
    Dg.requires_grad_(False)

    _, real_grads = real_pyramid(hr, cfg)
    z1, z2 = _draw_noise_pair(b, cfg.noise_dim, rng["z"])
    if (torch.linalg.vector_norm(z1 - z2, dim=1) < 1e-8).any():
        log.warning("degenerate noise pair drawn; resampling once")
        z1, z2 = _draw_noise_pair(b, cfg.noise_dim, rng["z"])

    # one forward over [reconstruction | hallucination z1 | hallucination z2]
    z = torch.cat([torch.zeros(b, cfg.noise_dim), z1, z2])
    out = G(lr.repeat(3, 1, 1, 1), z)
    cond = constraint_map(out.image, lr.repeat(3, 1, 1, 1), cfg.scale_factor, weights.epsilon)
    logits_i = DI(out.images, cond)
    logits_g = Dg(out.gradients)

    rec, hal = slice(0, b), slice(b, 3 * b)
    try:
        adv = {name: (g_adversarial_loss(logits[rec]), g_adversarial_loss(logits[hal]))
               for name, logits in (("g", logits_g), ("i", logits_i))}
    except ValueError as exc:
        raise NonFiniteLossError(f"generator step: {exc}") from exc
    percp = perceptual_loss(out.image[rec], hr, bundle.extractor)
    grad = torch.stack([gradient_recon_loss(g[rec], g_hr) for g, g_hr in zip(out.gradients, real_grads)]).mean()
    loss_recons = recons_total(percp, grad, adv["g"][0], adv["i"][0], weights)

    div = diversity_loss(out.gradient[b:2 * b], out.gradient[2 * b:], z1, z2, weights.tau)
    loss_halluc = halluc_total(adv["g"][1], adv["i"][1], div, weights)

    result = {"loss_recons": loss_recons.item(), "loss_halluc": loss_halluc.item(),
              "L_percp": percp.item(), "L_grad": grad.item(), "L_z": div.item()}
    _check_finite(result, "generator step")
    bundle.opt_g.zero_grad(set_to_none=True)
    (loss_recons + loss_halluc).backward()
    bundle.opt_g.step()
    DI.requires_grad_(True)
    Dg.requires_grad_(True)
    return result


def _format_row(row: dict) -> list[str]:
    return [str(row["step"])] + [repr(float(row[k])) for k in METRIC_COLUMNS[1:]]


def train(
    config: TrainConfig,
    dataset: Sequence[PairedSample],
    generator_config: Optional[GeneratorConfig] = None,
    out_dir=None,
    bundle: Optional[ModelBundle] = None,
    stage_widths: Sequence[int] = (32, 64, 128),
) -> tuple[ModelBundle, list[dict]]:
    """Train (or resume training of) a bundle on ``dataset``.

    Pass a bundle from ``load_checkpoint`` to resume; its step counter,
    optimizer moments and random streams pick up exactly where they stopped.
    With ``out_dir`` set, metrics are appended to ``metrics.csv`` and
    checkpoints written every ``checkpoint_every`` steps and at the end.
    Returns the bundle and one metrics dict per step run.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if bundle is None:
        if generator_config is None:
            raise ValueError("generator_config is required when not resuming")
        bundle = build_bundle(generator_config, seed=substream_seed(config.seed, "init"),
                              stage_widths=stage_widths)
    attach_optimizers(bundle, config)
    bundle.metadata["train_config"] = asdict(config)
    rng = make_rng(config.seed)
    for name, state in bundle.rng_state.items():
        rng[name].set_state(state)

    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "metrics.csv"
        fresh = bundle.step == 0 or not csv_path.exists()
        fh = open(csv_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(METRIC_COLUMNS)

    rows = []
    bundle.generator.train()
    try:
        while bundle.step < config.total_steps:
            batch = sample_batch(dataset, config.batch_size, rng["data"], config.hflip)
            d_out = train_step_discriminators(bundle, batch, rng, config.weights)
            g_out = train_step_generator(bundle, batch, rng, config.weights)
            bundle.step += 1
            row = {"step": bundle.step, **d_out, **g_out}
            rows.append(row)
            if writer is not None:
                writer.writerow(_format_row(row))
                fh.flush()
            if out_dir is not None and (bundle.step % config.checkpoint_every == 0
                                        or bundle.step == config.total_steps):
                bundle.rng_state = {k: g.get_state() for k, g in rng.items()}
                save_checkpoint(bundle, out_dir / f"checkpoint_{bundle.step:06d}.pt")
                save_checkpoint(bundle, out_dir / "checkpoint.pt")
    finally:
        if writer is not None:
            fh.close()
    bundle.rng_state = {k: g.get_state() for k, g in rng.items()}
    return bundle, rows

