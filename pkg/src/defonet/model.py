"""Generator (conditional 3-D autoencoder with skips) and critic networks."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .condition import CONDITION_DIM

OUTPUT_EPS = 1e-7

# Channel widths per resolution; N >= 64 uses the first row.
_DEFAULT_WIDTHS = {
    64: dict(encoder=[64, 128, 256, 512, 512], latent=512, fc_hidden=2048, critic=[64, 128, 256, 512, 1]),
    32: dict(encoder=[32, 64, 128, 256], latent=256, fc_hidden=1024, critic=[32, 64, 128, 1]),
    16: dict(encoder=[32, 64, 128], latent=128, fc_hidden=512, critic=[32, 64, 1]),
    8: dict(encoder=[32, 64], latent=64, fc_hidden=256, critic=[32, 1]),
}


def n_stages(resolution: int) -> int:
    """Number of halvings: five at N >= 64, otherwise down to a 2³ volume."""
    if resolution < 8 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= 8, got {resolution}")
    return 5 if resolution >= 64 else int(math.log2(resolution)) - 1


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class GeneratorSpec:
    resolution: int = 64
    encoder_channels: list = field(default_factory=lambda: list(_DEFAULT_WIDTHS[64]["encoder"]))
    latent_dim: int = 512
    fc_hidden: int = 2048
    condition_dim: int = CONDITION_DIM
    leaky_slope: float = 0.2
    batch_norm: bool = True

    def __post_init__(self):
        if len(self.encoder_channels) != n_stages(self.resolution):
            raise ValueError(
                f"N={self.resolution} needs {n_stages(self.resolution)} encoder stages, "
                f"got {len(self.encoder_channels)}"
            )
        if self.latent_dim <= 0 or self.fc_hidden <= 0:
            raise ValueError("latent_dim and fc_hidden must be positive")

    @classmethod
    def default(cls, resolution: int) -> "GeneratorSpec":
        w = _DEFAULT_WIDTHS[min(resolution, 64)]
        return cls(resolution, list(w["encoder"]), w["latent"], w["fc_hidden"])

    def spec_hash(self) -> str:
        return _hash(asdict(self))


@dataclass
class DiscriminatorSpec:
    resolution: int = 64
    channels: list = field(default_factory=lambda: list(_DEFAULT_WIDTHS[64]["critic"]))
    condition_inject_layer: int = 2
    condition_dim: int = CONDITION_DIM
    sigmoid_output: bool = False

    def __post_init__(self):
        if len(self.channels) != n_stages(self.resolution):
            raise ValueError(
                f"N={self.resolution} needs {n_stages(self.resolution)} critic layers, got {len(self.channels)}"
            )
        if not 2 <= self.condition_inject_layer <= len(self.channels):
            raise ValueError("condition_inject_layer must name one of layers 2..L")

    @property
    def mask_spatial(self) -> int:
        return self.resolution >> (self.condition_inject_layer - 1)

    @classmethod
    def default(cls, resolution: int, sigmoid_output: bool = False) -> "DiscriminatorSpec":
        return cls(resolution, list(_DEFAULT_WIDTHS[min(resolution, 64)]["critic"]), sigmoid_output=sigmoid_output)

    def spec_hash(self) -> str:
        return _hash(asdict(self))


class SamePad3d(nn.Module):
    """Pad so a stride-1 4³ convolution keeps the spatial size (1 before, 2 after)."""

    def forward(self, x):
        return F.pad(x, (1, 2, 1, 2, 1, 2))


class Generator(nn.Module):
    """Encoder (conv 4³ stride 1, leaky ReLU, 2³ max-pool) -> FC bottleneck with the
    condition appended to the latent code -> up-convolution decoder.

    Each decoder up-convolution output is concatenated with the pre-pool
    activation of the encoder block at the same spatial size; a 3³
    convolution with a sigmoid fuses the last of these into occupancy.
    With ``spec.batch_norm`` every convolution is batch-normalized before
    its activation.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        c = spec.encoder_channels
        s = len(c)

        def _norm(width):
            return nn.BatchNorm3d(width) if spec.batch_norm else nn.Identity()

        self.encoder = nn.ModuleList()
        prev = 1
        for width in c:
            self.encoder.append(nn.Sequential(SamePad3d(), nn.Conv3d(prev, width, 4), _norm(width)))
            prev = width
        self.bottom = spec.resolution >> s
        flat = c[-1] * self.bottom**3
        self.fc_enc = nn.Sequential(
            nn.Linear(flat, spec.fc_hidden), nn.LeakyReLU(spec.leaky_slope),
            nn.Linear(spec.fc_hidden, spec.latent_dim), nn.LeakyReLU(spec.leaky_slope),
        )
        self.fc_dec = nn.Sequential(
            nn.Linear(spec.latent_dim + spec.condition_dim, spec.fc_hidden), nn.ReLU(),
            nn.Linear(spec.fc_hidden, flat), nn.ReLU(),
        )
        # up-conv j doubles the size and is joined by encoder block s-1-j's activation
        self.decoder = nn.ModuleList()
        prev = c[-1]
        for j in range(s):
            width = c[max(s - 2 - j, 0)]
            self.decoder.append(
                nn.Sequential(nn.ConvTranspose3d(prev, width, 4, stride=2, padding=1), _norm(width))
            )
            prev = width + c[s - 1 - j]
        self.head = nn.Conv3d(prev, 1, 3, padding=1)
        init_weights(self)

    def forward(self, x, cond, return_sizes: bool = False):
        spec = self.spec
        n = spec.resolution
        if x.dim() == 4:
            x = x.unsqueeze(1)
        if x.shape[1:] != (1, n, n, n):
            raise ValueError(f"generator input layer expects (B, 1, {n}, {n}, {n}), got {tuple(x.shape)}")
        if cond.dim() != 2 or cond.shape != (x.shape[0], spec.condition_dim):
            raise ValueError(f"condition layer expects (B, {spec.condition_dim}), got {tuple(cond.shape)}")
        sizes = []
        skips = []
        h = x
        for block in self.encoder:
            h = F.leaky_relu(block(h), spec.leaky_slope)
            skips.append(h)
            h = F.max_pool3d(h, 2)
            sizes.append(h.shape[-1])
        b = h.shape[0]
        z = self.fc_enc(h.reshape(b, -1))
        h = self.fc_dec(torch.cat([z, cond.to(z.dtype)], dim=1))
        h = h.reshape(b, spec.encoder_channels[-1], self.bottom, self.bottom, self.bottom)
        s = len(self.decoder)
        for j, layer in enumerate(self.decoder):
            h = torch.cat([F.relu(layer(h)), skips[s - 1 - j]], dim=1)
        # float32 sigmoid rounds to exactly 0 or 1 once saturated
        out = torch.sigmoid(self.head(h)).clamp(OUTPUT_EPS, 1 - OUTPUT_EPS).squeeze(1)
        return (out, sizes) if return_sizes else out


class Discriminator(nn.Module):
    """Stride-2 4³ convolutions; condition block masks join the input of one layer.

    The final 1-channel map is averaged into one score per grid. The score is
    linear (a Wasserstein critic) unless ``sigmoid_output`` is set.
    """

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.layers = nn.ModuleList()
        prev = 1
        for i, width in enumerate(spec.channels, start=1):
            in_ch = prev + (spec.condition_dim if i == spec.condition_inject_layer else 0)
            self.layers.append(nn.Conv3d(in_ch, width, 4, stride=2, padding=1))
            prev = width
        init_weights(self)

    def forward(self, grid, masks, return_sizes: bool = False):
        spec = self.spec
        n = spec.resolution
        if grid.dim() == 4:
            grid = grid.unsqueeze(1)
        if grid.shape[1:] != (1, n, n, n):
            raise ValueError(f"critic input layer expects (B, 1, {n}, {n}, {n}), got {tuple(grid.shape)}")
        m = spec.mask_spatial
        if masks.shape != (grid.shape[0], spec.condition_dim, m, m, m):
            raise ValueError(
                f"critic layer {spec.condition_inject_layer} expects masks (B, {spec.condition_dim}, {m}, {m}, {m}), "
                f"got {tuple(masks.shape)}"
            )
        sizes = []
        h = grid
        last = len(self.layers)
        for i, layer in enumerate(self.layers, start=1):
            if i == spec.condition_inject_layer:
                h = torch.cat([h, masks.to(h.dtype)], dim=1)
            h = layer(h)
            sizes.append(h.shape[-1])
            if i < last:
                h = F.relu(h)
        score = h.mean(dim=(1, 2, 3, 4))
        if spec.sigmoid_output:
            score = torch.sigmoid(score)
        return (score, sizes) if return_sizes else score


def block_masks(cond: torch.Tensor, spatial: int) -> torch.Tensor:
    """Batched block masks: (B, 11) one-hot rows -> (B, 11, S, S, S)."""
    return cond[:, :, None, None, None].expand(-1, -1, spatial, spatial, spatial)


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv3d, nn.ConvTranspose3d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            nn.init.zeros_(m.bias)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
