"""Generator, the two mirrored discriminators and the perceptual feature extractor.

Multi-scale tensors are passed as lists ordered from the coarsest upsampled
scale (``2 * lr_size``) to the full output resolution.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

CHECKPOINT_FORMAT = "hallucsr-checkpoint-v1"
#: largest possible gradient magnitude for images in [-1, 1]
MAX_GRADIENT = 2.0 * math.sqrt(2.0)


@dataclass
class GeneratorConfig:
    lr_size: int = 4
    scale_factor: int = 8
    base_channels: int = 32
    num_residual_blocks: int = 8
    noise_dim: int = 64
    leak: float = 0.2
    channels: int = 3
    min_channels: int = 16
    normalization: str = "none"

    def __post_init__(self):
        f = self.scale_factor
        if f < 2 or f & (f - 1):
            raise ValueError(f"scale_factor must be a power of 2, got {f}")
        if self.num_residual_blocks < 1:
            raise ValueError("num_residual_blocks must be >= 1")
        if self.noise_dim < 1:
            raise ValueError("noise_dim must be >= 1")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.normalization not in ("none", "instance"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def num_scales(self) -> int:
        return int(math.log2(self.scale_factor))

    @property
    def hr_size(self) -> int:
        return self.lr_size * self.scale_factor

    def scale_sizes(self) -> list[int]:
        return [self.lr_size * 2 ** k for k in range(1, self.num_scales + 1)]

    def stage_channels(self, k: int) -> int:
        """Feature width at ``lr_size * 2**k`` (k = 0 is the residual trunk)."""
        return max(self.base_channels >> k, self.min_channels)


@dataclass
class MultiScaleOutput:
    images: list[torch.Tensor]
    gradients: list[torch.Tensor]

    @property
    def image(self) -> torch.Tensor:
        return self.images[-1]

    @property
    def gradient(self) -> torch.Tensor:
        return self.gradients[-1]


def _conv(cin, cout, k=3):
    return nn.Conv2d(cin, cout, k, padding=k // 2)


def init_weights(module: nn.Module, leak: float, residual_scale: float = 0.1) -> None:
    """He-normal init for every conv; the last conv of each residual branch is scaled down."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, a=leak, nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    for m in module.modules():
        if isinstance(m, ResidualBlock):
            with torch.no_grad():
                m.body[-2].weight.mul_(residual_scale)


def _norm(kind: str, ch: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(ch, affine=True)
    return nn.Identity()


class ResidualBlock(nn.Module):
    def __init__(self, ch: int, leak: float, normalization: str = "none"):
        super().__init__()
        self.body = nn.Sequential(
            _conv(ch, ch), _norm(normalization, ch), nn.LeakyReLU(leak),
            _conv(ch, ch), _norm(normalization, ch),
        )

    def forward(self, x):
        return x + self.body(x)


class UpBlock(nn.Module):
    """x2 nearest upsampling, a shared conv block, then image and gradient heads.

    The image head adds its projection to the upsampled pre-activation of the
    previous scale, which carries low-frequency colour through unchanged.
    """

    def __init__(self, cin: int, cout: int, img_channels: int, leak: float):
        super().__init__()
        self.shared = nn.Sequential(
            _conv(cin, cout), nn.LeakyReLU(leak),
            _conv(cout, cout), nn.LeakyReLU(leak),
        )
        self.image_branch = nn.Sequential(_conv(cout, cout), nn.LeakyReLU(leak))
        self.gradient_branch = nn.Sequential(_conv(cout, cout), nn.LeakyReLU(leak))
        self.to_image = nn.Conv2d(cout, img_channels, 1)
        self.to_gradient = nn.Conv2d(cout, 1, 1)

    def forward(self, feat, prev_logit):
        h = self.shared(F.interpolate(feat, scale_factor=2, mode="nearest"))
        logit = F.interpolate(prev_logit, scale_factor=2, mode="nearest")
        logit = logit + self.to_image(self.image_branch(h))
        grad = MAX_GRADIENT * torch.sigmoid(self.to_gradient(self.gradient_branch(h)))
        return h, logit, torch.tanh(logit), grad


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c = config
        trunk = c.stage_channels(0)
        self.head = nn.Sequential(_conv(c.channels + c.noise_dim, trunk), nn.LeakyReLU(c.leak))
        self.trunk = nn.Sequential(*[ResidualBlock(trunk, c.leak, c.normalization)
                                     for _ in range(c.num_residual_blocks)])
        self.upblocks = nn.ModuleList(
            UpBlock(c.stage_channels(k - 1), c.stage_channels(k), c.channels, c.leak)
            for k in range(1, c.num_scales + 1)
        )
        init_weights(self, c.leak)
        # start with small gradient predictions rather than sigmoid(0) * max
        for block in self.upblocks:
            nn.init.constant_(block.to_gradient.bias, -3.0)

    def forward(self, lr: torch.Tensor, z: torch.Tensor) -> MultiScaleOutput:
        c = self.config
        if lr.dim() != 4 or lr.shape[1] != c.channels:
            raise ValueError(f"lr must be (B, {c.channels}, H, W), got {tuple(lr.shape)}")
        if z.dim() == 1:
            z = z.expand(lr.shape[0], -1)
        if z.shape != (lr.shape[0], c.noise_dim):
            raise ValueError(f"z must be ({lr.shape[0]}, {c.noise_dim}), got {tuple(z.shape)}")
        h, w = lr.shape[-2:]
        noise = z[:, :, None, None].expand(-1, -1, h, w)
        feat = self.trunk(self.head(torch.cat([lr, noise.to(lr.dtype)], dim=1)))

        logit = torch.atanh(lr.clamp(-0.999, 0.999))
        images, gradients = [], []
        for block in self.upblocks:
            feat, logit, image, grad = block(feat, logit)
            images.append(image)
            gradients.append(grad)
        return MultiScaleOutput(images, gradients)


class DownBlock(nn.Module):
    """1x1 pixel-to-feature input, two convs, then 2x average pooling."""

    def __init__(self, in_pixels: int, carry: int, ch: int, cout: int, leak: float):
        super().__init__()
        self.from_pixels = nn.Sequential(nn.Conv2d(in_pixels, ch, 1), nn.LeakyReLU(leak))
        self.body = nn.Sequential(
            _conv(ch + carry, ch), nn.LeakyReLU(leak),
            _conv(ch, cout), nn.LeakyReLU(leak),
        )

    def forward(self, x, carry=None):
        h = self.from_pixels(x)
        if carry is not None:
            h = torch.cat([carry, h], dim=1)
        return F.avg_pool2d(self.body(h), 2)


class Discriminator(nn.Module):
    """Mirror of the generator: downblocks fed at every scale, then residual blocks.

    The output is the raw map of the last 1x1 convolution, at the LR grid.
    """

    def __init__(self, config: GeneratorConfig, in_channels: int, cond_channels: int = 0):
        super().__init__()
        self.config = config
        self.cond_channels = cond_channels
        c = config
        n = c.num_scales
        blocks = []
        for k in range(n, 0, -1):
            carry = 0 if k == n else c.stage_channels(k)
            blocks.append(DownBlock(in_channels, carry, c.stage_channels(k), c.stage_channels(k - 1), c.leak))
        self.downblocks = nn.ModuleList(blocks)
        trunk = c.stage_channels(0)
        if cond_channels:
            self.merge_cond = nn.Sequential(nn.Conv2d(trunk + cond_channels, trunk, 1), nn.LeakyReLU(c.leak))
        self.trunk = nn.Sequential(*[ResidualBlock(trunk, c.leak, c.normalization)
                                     for _ in range(c.num_residual_blocks)])
        self.act = nn.LeakyReLU(c.leak)
        self.to_logits = nn.Conv2d(trunk, 1, 1, bias=False)
        init_weights(self, c.leak)

    def forward(self, inputs: Sequence[torch.Tensor], cond: Optional[torch.Tensor] = None) -> torch.Tensor:
        if len(inputs) != len(self.downblocks):
            raise ValueError(f"expected {len(self.downblocks)} scales, got {len(inputs)}")
        h = None
        for block, x in zip(self.downblocks, reversed(list(inputs))):
            h = block(x, h)
        if self.cond_channels:
            if cond is None:
                cond = h.new_zeros(h.shape[0], self.cond_channels, *h.shape[-2:])
            if cond.shape != (h.shape[0], self.cond_channels, *h.shape[-2:]):
                raise ValueError(f"cond must have shape {(h.shape[0], self.cond_channels, *h.shape[-2:])}, "
                                 f"got {tuple(cond.shape)}")
            h = self.merge_cond(torch.cat([h, cond.to(h.dtype)], dim=1))
        return self.to_logits(self.act(self.trunk(h)))


class FeatureExtractor(nn.Module):
    """Frozen stack of stride-2 conv stages; calling it returns every stage's features.

    Inputs are images in [-1, 1]; optional per-channel ``input_mean`` and
    ``input_std`` are applied first (pretrained weights usually expect them).
    """

    def __init__(self, stage_widths: Sequence[int], in_channels: int = 3, leak: float = 0.2, seed: int = 0):
        super().__init__()
        if not stage_widths:
            raise ValueError("stage_widths must be nonempty")
        self.stage_widths = list(stage_widths)
        self.seed = seed
        widths = [in_channels, *stage_widths]
        self.stages = nn.ModuleList(
            nn.Sequential(nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.LeakyReLU(leak))
            for cin, cout in zip(widths[:-1], widths[1:])
        )
        self.register_buffer("input_mean", torch.zeros(in_channels))
        self.register_buffer("input_std", torch.ones(in_channels))
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # always frozen
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = (x - self.input_mean[:, None, None]) / self.input_std[:, None, None]
        feats = []
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats

    @classmethod
    def from_weights(cls, path, leak: float = 0.2) -> "FeatureExtractor":
        """Load pretrained stages from an ``.npz`` file.

        Expected keys: ``stage0.weight`` with shape ``(out, in, 3, 3)``,
        ``stage0.bias`` with shape ``(out,)``, then ``stage1.*`` and so on.
        Optional ``input_mean``/``input_std`` hold one value per input channel.
        """
        try:
            data = dict(np.load(path))
        except Exception as exc:
            raise ValueError(f"cannot read feature weights from {path}: {exc}") from exc
        n = 0
        while f"stage{n}.weight" in data:
            n += 1
        if n == 0:
            raise ValueError(f"{path}: no 'stage0.weight' entry")
        weights = [data[f"stage{i}.weight"] for i in range(n)]
        in_channels = weights[0].shape[1]
        for i, w in enumerate(weights):
            if w.ndim != 4 or w.shape[2:] != (3, 3):
                raise ValueError(f"{path}: stage{i}.weight must be (out, in, 3, 3), got {w.shape}")
            expected_in = in_channels if i == 0 else weights[i - 1].shape[0]
            if w.shape[1] != expected_in:
                raise ValueError(f"{path}: stage{i}.weight expects {w.shape[1]} inputs, previous stage gives {expected_in}")
            if f"stage{i}.bias" not in data or data[f"stage{i}.bias"].shape != (w.shape[0],):
                raise ValueError(f"{path}: missing or malformed stage{i}.bias")
        ext = cls([w.shape[0] for w in weights], in_channels=in_channels, leak=leak)
        with torch.no_grad():
            for i, stage in enumerate(ext.stages):
                stage[0].weight.copy_(torch.from_numpy(weights[i]))
                stage[0].bias.copy_(torch.from_numpy(data[f"stage{i}.bias"]))
            for key in ("input_mean", "input_std"):
                if key in data:
                    getattr(ext, key).copy_(torch.from_numpy(np.asarray(data[key], dtype=np.float32)))
        return ext


def build_feature_extractor(seed: int = 0, stage_widths: Sequence[int] = (32, 64, 128),
                            in_channels: int = 3) -> FeatureExtractor:
    """Random frozen extractor; identical seeds give identical parameters."""
    ext = FeatureExtractor(stage_widths, in_channels=in_channels, seed=seed)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for stage in ext.stages:
            conv = stage[0]
            fan_in = conv.weight[0].numel()
            conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in))
            conv.bias.zero_()
    return ext


@dataclass
class ModelBundle:
    """Everything needed to train, resume or sample."""

    config: GeneratorConfig
    generator: Generator
    disc_image: Discriminator
    disc_grad: Discriminator
    extractor: FeatureExtractor
    step: int = 0
    opt_g: Optional[torch.optim.Optimizer] = None
    opt_d: Optional[torch.optim.Optimizer] = None
    # filled by load_checkpoint until optimizers are attached
    optimizer_state: Optional[dict] = None
    rng_state: dict = field(default_factory=dict)
    # plain-data extras stored with checkpoints (train/run configs)
    metadata: dict = field(default_factory=dict)


def build_bundle(config: GeneratorConfig, seed: int = 0, extractor: Optional[FeatureExtractor] = None,
                 stage_widths: Sequence[int] = (32, 64, 128)) -> ModelBundle:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        generator = Generator(config)
        disc_image = Discriminator(config, config.channels, cond_channels=1)
        disc_grad = Discriminator(config, 1)
    if extractor is None:
        extractor = build_feature_extractor(seed, stage_widths, in_channels=config.channels)
    return ModelBundle(config, generator, disc_image, disc_grad, extractor)


def generator_forward(bundle: ModelBundle, lr: torch.Tensor, z: torch.Tensor) -> MultiScaleOutput:
    """Reconstruction when ``z`` is all zeros, hallucination otherwise."""
    return bundle.generator(lr, z)


def discriminator_forward(bundle: ModelBundle, which: str, inputs: Sequence[torch.Tensor],
                          cond: Optional[torch.Tensor] = None) -> torch.Tensor:
    if which == "image":
        return bundle.disc_image(inputs, cond)
    if which == "gradient":
        if cond is not None:
            raise ValueError("the gradient discriminator takes no conditioning map")
        return bundle.disc_grad(inputs)
    raise ValueError(f"which must be 'image' or 'gradient', got {which!r}")


# -- checkpoints ----------------------------------------------------------------

_MODULES = ("generator", "disc_image", "disc_grad", "extractor")


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Write one archive: parameters keyed ``<module>.<param>``, config, counters, optimizer and RNG state."""
    params = {}
    for name in _MODULES:
        for key, value in getattr(bundle, name).state_dict().items():
            params[f"{name}.{key}"] = value.detach().clone()
    optimizer = bundle.optimizer_state
    if bundle.opt_g is not None:
        optimizer = {"generator": bundle.opt_g.state_dict(), "discriminators": bundle.opt_d.state_dict()}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "generator_config": asdict(bundle.config),
        "extractor_stage_widths": list(bundle.extractor.stage_widths),
        "step": int(bundle.step),
        "params": params,
        "optimizer": optimizer,
        "rng_state": dict(bundle.rng_state),
        "metadata": dict(bundle.metadata),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> ModelBundle:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
    config = GeneratorConfig(**payload["generator_config"])
    extractor = FeatureExtractor(payload["extractor_stage_widths"], in_channels=config.channels)
    bundle = build_bundle(config, extractor=extractor)
    for name in _MODULES:
        prefix = f"{name}."
        state = {k[len(prefix):]: v for k, v in payload["params"].items() if k.startswith(prefix)}
        getattr(bundle, name).load_state_dict(state)
    bundle.step = payload["step"]
    bundle.optimizer_state = payload["optimizer"]
    bundle.rng_state = payload["rng_state"]
    bundle.metadata = payload["metadata"]
    return bundle
