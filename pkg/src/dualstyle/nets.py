"""Network definitions: mapper M, shared encoder E, SPADE generator G,
critic D with attribute-classifier head C.

All style codes have shape (B, code_channels, H/k, W/k).  Images are
(B, 3, H, W) in [-1, 1].  Conditioning vectors (edit directions or keep
masks, entries in {-1,0,+1}) are broadcast to constant channels and
concatenated with the module input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .config import ExperimentConfig
from .errors import DimensionError, NumericalFault

MAX_CHANNELS = 128


def check_finite(t: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericalFault(f"non-finite values in {what}")
    return t


def _lrelu(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, 0.2)


class MappingNetwork(nn.Module):
    """Noise + direction -> spatial style code, grown from 2x2 by upsampling."""

    def __init__(self, noise_dim: int, n_attrs: int, code_hw: int, code_channels: int, hidden: int):
        super().__init__()
        if code_hw < 2 or code_hw & (code_hw - 1):
            raise DimensionError(f"style-code spatial size must be a power of two >= 2, got {code_hw}")
        self.noise_dim = noise_dim
        self.n_attrs = n_attrs
        self.code_hw = code_hw
        self.fc1 = nn.Linear(noise_dim + n_attrs, hidden)
        self.fc2 = nn.Linear(hidden, code_channels * 4)
        self.blocks = nn.ModuleList(
            nn.Conv2d(code_channels, code_channels, 3, padding=1)
            for _ in range(int(math.log2(code_hw // 2)))
        )
        self.out = nn.Conv2d(code_channels, code_channels, 1)

    def forward(self, noise: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = _lrelu(self.fc1(torch.cat([noise, cond], dim=1)))
        h = _lrelu(self.fc2(h))
        h = h.view(h.shape[0], -1, 2, 2)
        for block in self.blocks:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = _lrelu(block(h))
        return self.out(h)


class ConditionedEncoder(nn.Module):
    """Image + direction channels -> spatial style code (shared E)."""

    def __init__(self, n_attrs: int, downsample: int, code_channels: int, base_channels: int):
        super().__init__()
        self.n_attrs = n_attrs
        stages = int(math.log2(downsample))
        if 2 ** stages != downsample:
            raise DimensionError(f"code_downsample must be a power of two, got {downsample}")
        self.stem = nn.Conv2d(3 + n_attrs, base_channels, 3, padding=1)
        downs = []
        c = base_channels
        for _ in range(stages):
            c_out = min(2 * c, MAX_CHANNELS)
            downs.append(nn.Conv2d(c, c_out, 3, stride=2, padding=1))
            c = c_out
        self.downs = nn.ModuleList(downs)
        self.out = nn.Conv2d(c, code_channels, 1)

    def forward(self, image: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        planes = cond[:, :, None, None].expand(-1, -1, image.shape[2], image.shape[3])
        h = _lrelu(self.stem(torch.cat([image, planes], dim=1)))
        for down in self.downs:
            h = _lrelu(down(h))
        return self.out(h)


class Spade(nn.Module):
    """Parameter-free instance norm modulated by maps computed from the code."""

    def __init__(self, channels: int, code_channels: int, hidden: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(channels, affine=False, track_running_stats=False)
        self.shared = nn.Conv2d(code_channels, hidden, 3, padding=1)
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        if code.shape[2:] != x.shape[2:]:
            code = F.interpolate(code, size=x.shape[2:], mode="nearest")
        h = _lrelu(self.shared(code))
        return self.norm(x) * (1 + self.gamma(h)) + self.beta(h)


class SpadeResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, code_channels: int, hidden: int):
        super().__init__()
        c_mid = min(c_in, c_out)
        self.spade1 = Spade(c_in, code_channels, hidden)
        self.conv1 = nn.Conv2d(c_in, c_mid, 3, padding=1)
        self.spade2 = Spade(c_mid, code_channels, hidden)
        self.conv2 = nn.Conv2d(c_mid, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        h = self.conv1(_lrelu(self.spade1(x, code)))
        h = self.conv2(_lrelu(self.spade2(h, code)))
        s = self.skip(x) if self.skip is not None else x
        return h + s


class Generator(nn.Module):
    """Autoencoding generator; the decoder is SPADE-conditioned at every stage."""

    def __init__(self, downsample: int, code_channels: int, base_channels: int, spade_hidden: int):
        super().__init__()
        stages = int(math.log2(downsample))
        self.stem = nn.Conv2d(3, base_channels, 3, padding=1)
        downs, channels = [], [base_channels]
        c = base_channels
        for _ in range(stages):
            c_out = min(2 * c, MAX_CHANNELS)
            downs.append(nn.Conv2d(c, c_out, 3, stride=2, padding=1))
            c = c_out
            channels.append(c)
        self.downs = nn.ModuleList(downs)
        ups = []
        for i in range(stages, 0, -1):
            ups.append(SpadeResBlock(channels[i], channels[i - 1], code_channels, spade_hidden))
        self.ups = nn.ModuleList(ups)
        self.out = nn.Conv2d(base_channels, 3, 3, padding=1)

    def forward(self, image: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        h = _lrelu(self.stem(image))
        for down in self.downs:
            h = _lrelu(down(h))
        for up in self.ups:
            h = up(h, code)
            h = F.interpolate(h, scale_factor=2, mode="nearest")
        return torch.tanh(self.out(h))


class Critic(nn.Module):
    """Shared conv trunk with a realness head (D) and an attribute head (C)."""

    def __init__(self, image_size: int, n_attrs: int, base_channels: int):
        super().__init__()
        stages = max(1, int(math.log2(image_size)) - 2)
        convs, c_in = [], 3
        c = base_channels
        hw = image_size
        for _ in range(stages):
            convs.append(nn.Conv2d(c_in, c, 3, stride=2, padding=1))
            c_in = c
            c = min(2 * c, MAX_CHANNELS)
            hw //= 2
        self.trunk = nn.ModuleList(convs)
        flat = c_in * hw * hw
        self.d_head = nn.Linear(flat, 1)
        self.c_head = nn.Linear(flat, n_attrs)

    def features(self, image: torch.Tensor) -> torch.Tensor:
        h = image
        for conv in self.trunk:
            h = _lrelu(conv(h))
        return h.flatten(1)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.features(image)
        return self.d_head(h).squeeze(1), self.c_head(h)


def init_weights(module: nn.Module, rng: np.random.Generator) -> None:
    """Fan-in scaled normal init, deterministic under the given generator."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight[0, 0].numel() if m.weight.ndim > 2 else 1)
            std = 1.0 / math.sqrt(fan_in)
            w = rng.normal(0.0, std, size=tuple(m.weight.shape))
            with torch.no_grad():
                m.weight.copy_(torch.from_numpy(w).to(m.weight.dtype))
                if m.bias is not None:
                    m.bias.zero_()


@dataclass
class NetworkBundle:
    """The five parameterized function graphs (D and C share one trunk)."""

    mapper: MappingNetwork
    encoder: ConditionedEncoder
    generator: Generator
    critic: Critic
    n_attrs: int
    noise_dim: int
    code_hw: int
    code_channels: int
    image_size: int

    # -- forward ops ------------------------------------------------------

    def _cond(self, cond, batch: int) -> torch.Tensor:
        p = next(self.encoder.parameters())
        t = torch.as_tensor(np.asarray(cond), dtype=p.dtype, device=p.device)
        if t.ndim == 1:
            t = t[None, :].expand(batch, -1)
        if t.shape != (batch, self.n_attrs):
            raise DimensionError(f"conditioning shape {tuple(t.shape)} != ({batch}, {self.n_attrs})")
        return t

    def map_noise(self, noise: torch.Tensor, cond) -> torch.Tensor:
        if noise.ndim == 1:
            noise = noise[None, :]
        if noise.shape[1] != self.noise_dim:
            raise DimensionError(f"noise dim {noise.shape[1]} != {self.noise_dim}")
        out = self.mapper(noise, self._cond(cond, noise.shape[0]))
        return check_finite(out, "mapping network output")

    def encode(self, image: torch.Tensor, cond) -> torch.Tensor:
        image = self._check_image(image)
        out = self.encoder(image, self._cond(cond, image.shape[0]))
        return check_finite(out, "encoder output")

    def generate(self, image: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        image = self._check_image(image)
        if code.shape[1:] != (self.code_channels, self.code_hw, self.code_hw):
            raise DimensionError(
                f"style code shape {tuple(code.shape[1:])} != "
                f"({self.code_channels}, {self.code_hw}, {self.code_hw})")
        return check_finite(self.generator(image, code), "generator output")

    def discriminate(self, image: torch.Tensor) -> torch.Tensor:
        score, _ = self.critic(self._check_image(image))
        return check_finite(score, "critic score")

    def classify(self, image: torch.Tensor) -> torch.Tensor:
        _, logits = self.critic(self._check_image(image))
        return torch.sigmoid(check_finite(logits, "classifier logits"))

    def _check_image(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim == 3:
            image = image[None]
        if image.ndim != 4 or image.shape[1] != 3 or image.shape[2] != self.image_size or image.shape[3] != self.image_size:
            raise DimensionError(f"expected (B, 3, {self.image_size}, {self.image_size}) image, got {tuple(image.shape)}")
        return image

    # -- parameter groups -------------------------------------------------

    def named_tensors(self) -> dict[str, torch.Tensor]:
        out: dict[str, torch.Tensor] = {}
        for prefix, mod in (("M", self.mapper), ("E", self.encoder),
                            ("G", self.generator), ("DC", self.critic)):
            for name, p in mod.named_parameters():
                out[f"{prefix}.{name}"] = p
        return out

    def params_dc(self) -> list[torch.Tensor]:
        return list(self.critic.parameters())

    def params_g(self) -> list[torch.Tensor]:
        return list(self.generator.parameters())

    def params_me(self) -> list[torch.Tensor]:
        return list(self.mapper.parameters()) + list(self.encoder.parameters())

    def to_dtype(self, dtype: torch.dtype) -> "NetworkBundle":
        for mod in (self.mapper, self.encoder, self.generator, self.critic):
            mod.to(dtype)
        return self


def build_bundle(cfg: ExperimentConfig, rng: np.random.Generator | None = None) -> NetworkBundle:
    code_hw = cfg.image_size // cfg.code_downsample
    bundle = NetworkBundle(
        mapper=MappingNetwork(cfg.noise_dim, cfg.n_attrs, code_hw, cfg.code_channels, cfg.map_hidden),
        encoder=ConditionedEncoder(cfg.n_attrs, cfg.code_downsample, cfg.code_channels, cfg.base_channels),
        generator=Generator(cfg.code_downsample, cfg.code_channels, cfg.base_channels, cfg.spade_hidden),
        critic=Critic(cfg.image_size, cfg.n_attrs, cfg.critic_channels),
        n_attrs=cfg.n_attrs,
        noise_dim=cfg.noise_dim,
        code_hw=code_hw,
        code_channels=cfg.code_channels,
        image_size=cfg.image_size,
    )
    if rng is None:
        rng = np.random.default_rng([cfg.seed, 1])
    for mod in (bundle.mapper, bundle.encoder, bundle.generator, bundle.critic):
        init_weights(mod, rng)
    return bundle
