"""The seven training objectives and their aggregates.

All L1 terms reduce by MEAN over elements so the default weights are
resolution independent.  The adversarial value ``adv`` follows the
Wasserstein form E[D(real)] - E[D(fake)]; the critic minimizes its negation
plus a gradient penalty, the generator side minimizes -E[D(fake)].
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch

from .codec import lem, rem
from .config import ExperimentConfig
from .errors import DimensionError, NumericalFault
from .nets import NetworkBundle

EPS_CLS = 1e-7   # classifier probability clamp
EPS_MS = 1e-5    # mode-seeking denominator guard


@dataclass
class LossWeights:
    lambda_cls: float = 1.0
    lambda_rec: float = 10.0
    lambda_cyc: float = 1.0
    lambda_ms: float = 1.0
    lambda_sty: float = 1.0
    lambda_ak: float = 1.0
    lambda_gp: float = 10.0

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "LossWeights":
        return cls(**{f.name: getattr(cfg, f.name) for f in fields(cls)})


@dataclass
class LossReport:
    adv: float
    cls: float
    rec: float
    sty: float
    ms: float
    ak: float
    cyc: float
    gp: float
    total_G: float
    total_ME: float
    total_DC: float
    total_r: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _mean_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def loss_sty(s_rand: torch.Tensor, s_ref: torch.Tensor) -> torch.Tensor:
    """Mean absolute distance between the paired label- and reference-codes."""
    return _mean_l1(s_rand, s_ref)


def loss_adv_D(bundle: NetworkBundle, real: torch.Tensor, fakes: torch.Tensor) -> torch.Tensor:
    """Critic-side adversarial term (negated Wasserstein gap, to minimize)."""
    scores = bundle.discriminate(torch.cat([real, fakes]))
    real_scores, fake_scores = scores.split([real.shape[0], fakes.shape[0]])
    return -(real_scores.mean() - fake_scores.mean())


def loss_adv_G(bundle: NetworkBundle, fakes: torch.Tensor) -> torch.Tensor:
    """Generator-side adversarial term -E[D(fake)]."""
    return -bundle.discriminate(fakes).mean()


def gradient_penalty(bundle: NetworkBundle, real: torch.Tensor, fake: torch.Tensor,
                     rng: np.random.Generator) -> torch.Tensor:
    """Mean (|grad D(x_hat)|_2 - 1)^2 on per-sample image-space interpolates."""
    if real.shape != fake.shape:
        raise DimensionError(f"real/fake shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}")
    eps = torch.as_tensor(rng.random(real.shape[0]), dtype=real.dtype, device=real.device)
    eps = eps.view(-1, 1, 1, 1)
    mixed = (eps * real + (1 - eps) * fake.detach()).requires_grad_(True)
    scores = bundle.discriminate(mixed)
    grads, = torch.autograd.grad(scores.sum(), mixed, create_graph=True,
                                 allow_unused=True)
    if grads is None:  # critic ignores its input entirely
        grads = torch.zeros_like(mixed)
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1) ** 2).mean()


def loss_cls(bundle: NetworkBundle, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-attribute binary cross-entropy, averaged over batch and attributes."""
    probs = bundle.classify(images).clamp(EPS_CLS, 1 - EPS_CLS)
    y = torch.as_tensor(np.asarray(labels), dtype=probs.dtype, device=probs.device)
    if y.shape != probs.shape:
        raise DimensionError(f"label shape {tuple(y.shape)} != probs shape {tuple(probs.shape)}")
    return -(y * probs.log() + (1 - y) * (1 - probs).log()).mean()


def loss_rec(bundle: NetworkBundle, source: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """Identity-direction reconstruction through both code paths, averaged."""
    zero = np.zeros(bundle.n_attrs, dtype=np.int8)
    codes = torch.cat([lem(bundle, source, noise, zero), rem(bundle, source, source, zero)])
    recons = bundle.generate(source.repeat(2, 1, 1, 1), codes)
    return _mean_l1(source.repeat(2, 1, 1, 1), recons)


def loss_cyc(bundle: NetworkBundle, source: torch.Tensor, fake_label: torch.Tensor,
             fake_ref: torch.Tensor, diff, s_rand: torch.Tensor, s_ref: torch.Tensor) -> torch.Tensor:
    """Latent cycle consistency; the fed-back images enter as constants so no
    gradient reaches the generator."""
    d = np.asarray(diff)
    reverse = -d if d.ndim == 1 else np.concatenate([-d, -d])
    s_source = bundle.encode(source, d)
    branch = bundle.encode(torch.cat([fake_label.detach(), fake_ref.detach()]), reverse)
    rand_branch, ref_branch = branch.split(source.shape[0])
    return loss_sty(s_rand, s_source + rand_branch) + loss_sty(s_ref, s_source + ref_branch)


def loss_ms(bundle: NetworkBundle, source: torch.Tensor, noise_a: torch.Tensor,
            noise_b: torch.Tensor, diff, fake_a: torch.Tensor | None = None) -> torch.Tensor:
    """Mode-seeking ratio: noise distance over generated-image distance."""
    if fake_a is None:
        fake_a = bundle.generate(source, lem(bundle, source, noise_a, diff))
    fake_b = bundle.generate(source, lem(bundle, source, noise_b, diff))
    numerator = _mean_l1(noise_a, noise_b)
    denominator = _mean_l1(fake_a, fake_b) + EPS_MS
    return numerator / denominator


def loss_ak(bundle: NetworkBundle, source: torch.Tensor, fake: torch.Tensor, keep_mask) -> torch.Tensor:
    """Feature-preservation distance on the unedited attributes."""
    k = np.asarray(keep_mask)
    cond = k if k.ndim == 1 else np.concatenate([k, k])
    feats = bundle.encode(torch.cat([source, fake]), cond)
    src_feats, fake_feats = feats.split(source.shape[0])
    return _mean_l1(src_feats, fake_feats)


def aggregate_objectives(components: dict[str, float], weights: LossWeights) -> LossReport:
    """Combine per-term scalars into the four optimization totals.

    ``components`` must carry: adv (Wasserstein gap), adv_G, cls (generated
    images vs target labels), cls_real (real images vs true labels), rec,
    sty, ms, ak, cyc, gp.
    """
    c = {k: float(v) for k, v in components.items()}
    for name, value in c.items():
        if not np.isfinite(value):
            raise NumericalFault(f"loss component {name!r} is non-finite: {value}")
    w = weights
    total_g = (c["adv_G"] + w.lambda_cls * c["cls"] + w.lambda_rec * c["rec"]
               + w.lambda_sty * c["sty"] + w.lambda_ms * c["ms"] + w.lambda_ak * c["ak"])
    report = LossReport(
        adv=c["adv"], cls=c["cls"], rec=c["rec"], sty=c["sty"], ms=c["ms"],
        ak=c["ak"], cyc=c["cyc"], gp=c["gp"],
        total_G=total_g,
        total_ME=total_g + w.lambda_cyc * c["cyc"],
        total_DC=-c["adv"] + w.lambda_cls * c["cls_real"] + w.lambda_gp * c["gp"],
        total_r=w.lambda_sty * c["sty"],
    )
    for name, value in report.as_dict().items():
        if not np.isfinite(value):
            raise NumericalFault(f"aggregate {name!r} is non-finite: {value}")
    return report
