"""Cycle-consistent ink-removal model: two generators, one discriminator.

The removal generator maps marker patches toward the clean domain, the
re-inking generator reconstructs the input for the cycle loss, and a single
patch discriminator judges realness on the clean domain only. A
full_cyclegan switch adds the second discriminator and reverse cycle of the
standard two-domain setup for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import CheckpointError, ConfigError, ShapeError

CHECKPOINT_VERSION = 1
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and loss hyperparameters.

    base_filters scales every layer width together (64 reproduces the
    standard resnet generator / 70x70 patch discriminator widths; tests use
    much smaller values). residual_blocks defaults to 6 for 128px patches.
    """

    base_filters: int = 64
    residual_blocks: int = 6
    disc_base_filters: int = 64
    disc_layers: int = 3
    lambda_cyc: float = 10.0
    full_cyclegan: bool = False

    def __post_init__(self):
        if self.base_filters < 1 or self.disc_base_filters < 1:
            raise ConfigError("filter counts must be positive")
        if self.residual_blocks < 0:
            raise ConfigError("residual_blocks must be >= 0")
        if self.disc_layers < 1:
            raise ConfigError("disc_layers must be >= 1")
        if self.lambda_cyc < 0:
            raise ConfigError("lambda_cyc must be >= 0")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """7x7 stem, two stride-2 downsamplers, residual trunk, two upsampling
    stages, 7x7 head with tanh so outputs stay in [-1, 1].

    Upsampling is nearest-resize followed by a 3x3 conv rather than a
    transposed conv: transposed convs imprint a checkerboard on the output
    that edge-based fidelity metrics punish hard.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        b = config.base_filters
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, b, 7),
            nn.InstanceNorm2d(b),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, b * 2, 3, stride=2, padding=1),
            nn.InstanceNorm2d(b * 2),
            nn.ReLU(inplace=True),
            nn.Conv2d(b * 2, b * 4, 3, stride=2, padding=1),
            nn.InstanceNorm2d(b * 4),
            nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(b * 4) for _ in range(config.residual_blocks)]
        layers += [
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(b * 4, b * 2, 3, padding=1),
            nn.InstanceNorm2d(b * 2),
            nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(b * 2, b, 3, padding=1),
            nn.InstanceNorm2d(b),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(b, 3, 7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"generator expects Bx3xHxW, got {tuple(x.shape)}")
        if x.shape[2] % 4 != 0 or x.shape[3] % 4 != 0:
            raise ShapeError(
                f"generator input dims must be divisible by 4 (two stride-2 stages), "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        return self.model(x)


class Discriminator(nn.Module):
    """Patch realness classifier: stride-2 conv stack widened 64-128-256,
    a stride-1 512 layer, then a 1-map score grid (receptive field 70x70 at
    the default depth)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        b = config.disc_base_filters
        layers: list[nn.Module] = [nn.Conv2d(3, b, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
        ch = b
        for _ in range(1, config.disc_layers):
            layers += [
                nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1),
                nn.InstanceNorm2d(ch * 2),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            ch *= 2
        layers += [
            nn.Conv2d(ch, ch * 2, 4, stride=1, padding=1),
            nn.InstanceNorm2d(ch * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(ch * 2, 1, 4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)

    def min_input_size(self) -> int:
        """Smallest square input for which every conv still has output."""
        n = 2  # final stride-1 k4p1 conv needs >= 2
        n = n + 1  # the stride-1 512 layer
        for _ in range(self.config.disc_layers):
            n = 2 * n - 2 + 2  # invert out = floor((n - 2) / 2) + 1
        return n

    def output_grid(self, height: int, width: int) -> tuple[int, int]:
        """Score-grid dims implied by the stride schedule."""
        h, w = height, width
        for _ in range(self.config.disc_layers):
            h, w = (h + 2 - 4) // 2 + 1, (w + 2 - 4) // 2 + 1
        h, w = h - 1, w - 1  # stride-1 512 layer
        h, w = h - 1, w - 1  # stride-1 score conv
        return h, w

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"discriminator expects Bx3xHxW, got {tuple(x.shape)}")
        minimum = self.min_input_size()
        if x.shape[2] < minimum or x.shape[3] < minimum:
            raise ShapeError(
                f"discriminator input {x.shape[2]}x{x.shape[3]} below minimum {minimum}"
            )
        return self.model(x)


def init_parameters(module: nn.Module, rng_seed: int) -> None:
    """Zero-mean Gaussian init (sigma 0.02) for all convs, seeded and ordered."""
    gen = torch.Generator().manual_seed(rng_seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, INIT_STD, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()


# --------------------------------------------------------------------------- #
# Pixel mapping and losses
# --------------------------------------------------------------------------- #
def to_unit_range(patches: np.ndarray) -> torch.Tensor:
    """uint8 NHWC (or HWC) -> float32 NCHW in [-1, 1] via v / 127.5 - 1."""
    arr = np.asarray(patches)
    if arr.ndim == 3:
        arr = arr[None]
    t = torch.from_numpy(arr.astype(np.float32) / 127.5 - 1.0)
    return t.permute(0, 3, 1, 2).contiguous()


def from_unit_range(batch: torch.Tensor) -> np.ndarray:
    """float NCHW in [-1, 1] -> uint8 NHWC via round((v + 1) * 127.5), clamped."""
    arr = batch.detach().permute(0, 2, 3, 1).numpy().astype(np.float64)
    return np.clip(np.round((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def adversarial_losses(
    d_real: torch.Tensor, d_fake: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares adversarial pair.

    loss_D = 1/2 mean[(D(real) - 1)^2] + 1/2 mean[D(fake)^2]
    loss_G_adv = mean[(D(fake) - 1)^2]
    """
    if d_real.shape != d_fake.shape:
        raise ShapeError(f"score grids differ: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}")
    loss_d = 0.5 * ((d_real - 1.0) ** 2).mean() + 0.5 * (d_fake**2).mean()
    loss_g = ((d_fake - 1.0) ** 2).mean()
    return loss_d, loss_g


def cycle_loss(x: torch.Tensor, reconstructed: torch.Tensor, weight: float = 10.0) -> torch.Tensor:
    """weight * mean absolute difference between input and reconstruction."""
    if x.shape != reconstructed.shape:
        raise ShapeError(f"cycle shapes differ: {tuple(x.shape)} vs {tuple(reconstructed.shape)}")
    return weight * (x - reconstructed).abs().mean()


# --------------------------------------------------------------------------- #
# Bundles and checkpoints
# --------------------------------------------------------------------------- #
@dataclass
class ModelBundle:
    """The three (or four) networks plus the config that shaped them."""

    config: ModelConfig
    g_remove: Generator
    g_add: Generator
    d_clean: Discriminator
    d_marker: Discriminator | None = None
    version: int = CHECKPOINT_VERSION

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "ModelBundle":
        g_remove = Generator(config)
        g_add = Generator(config)
        d_clean = Discriminator(config)
        init_parameters(g_remove, seed * 4 + 1)
        init_parameters(g_add, seed * 4 + 2)
        init_parameters(d_clean, seed * 4 + 3)
        d_marker = None
        if config.full_cyclegan:
            d_marker = Discriminator(config)
            init_parameters(d_marker, seed * 4 + 4)
        return cls(config=config, g_remove=g_remove, g_add=g_add, d_clean=d_clean, d_marker=d_marker)

    def networks(self) -> dict[str, nn.Module]:
        nets = {"g_remove": self.g_remove, "g_add": self.g_add, "d_clean": self.d_clean}
        if self.d_marker is not None:
            nets["d_marker"] = self.d_marker
        return nets

    def state_dicts(self) -> dict[str, dict]:
        return {name: net.state_dict() for name, net in self.networks().items()}


def config_to_dict(config: ModelConfig) -> dict:
    return {
        "base_filters": config.base_filters,
        "residual_blocks": config.residual_blocks,
        "disc_base_filters": config.disc_base_filters,
        "disc_layers": config.disc_layers,
        "lambda_cyc": config.lambda_cyc,
        "full_cyclegan": config.full_cyclegan,
    }


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        base_filters=int(d["base_filters"]),
        residual_blocks=int(d["residual_blocks"]),
        disc_base_filters=int(d["disc_base_filters"]),
        disc_layers=int(d["disc_layers"]),
        lambda_cyc=float(d["lambda_cyc"]),
        full_cyclegan=bool(d["full_cyclegan"]),
    )


def save_bundle(bundle: ModelBundle, path, extra: dict | None = None) -> None:
    """Versioned checkpoint container; extra carries trainer state."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": config_to_dict(bundle.config),
        "state": bundle.state_dicts(),
    }
    if extra:
        payload["trainer"] = extra
    torch.save(payload, path)


def load_bundle(path) -> tuple[ModelBundle, dict | None]:
    """Load and validate a checkpoint; returns (bundle, trainer_state)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"not a recognized checkpoint: {path}")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['format_version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    config = config_from_dict(payload["model_config"])
    bundle = ModelBundle.create(config)
    for name, net in bundle.networks().items():
        if name not in payload["state"]:
            raise CheckpointError(f"checkpoint missing network {name!r}")
        saved = payload["state"][name]
        current = net.state_dict()
        if set(saved) != set(current):
            raise CheckpointError(f"checkpoint parameter names for {name!r} do not match config")
        for key, tensor in saved.items():
            if tuple(tensor.shape) != tuple(current[key].shape):
                raise CheckpointError(
                    f"shape mismatch in {name}.{key}: checkpoint {tuple(tensor.shape)} "
                    f"vs config {tuple(current[key].shape)}"
                )
        net.load_state_dict(saved)
    return bundle, payload.get("trainer")
