"""Desk-scale evaluation: Fréchet distance on feature statistics, oracle
attribute accuracy with a keep-rate for unedited attributes, and a
feature-space diversity score.

The feature extractor is a small convolutional encoder trained on the
synthetic attribute-classification task and then frozen; it stands in for
the large pretrained embedders that are meaningless on 32x32 shapes.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .codec import lem
from .errors import DimensionError, NumericalFault
from .nets import NetworkBundle, init_weights
from .synthdata import SynthDataset, SynthSpec, oracle_classify

log = logging.getLogger(__name__)

EIG_CLIP = 1e-8


@dataclass
class FeatureStats:
    mu: np.ndarray             # (F,)
    sigma: np.ndarray          # (F, F)
    count: int

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FeatureStats":
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise DimensionError(f"need (N>=2, F) features, got shape {x.shape}")
        return cls(mu=x.mean(axis=0), sigma=np.cov(x, rowvar=False), count=x.shape[0])


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the matrix
    square root taken on the symmetrized product and negative eigenvalues
    clipped to zero."""
    if a.mu.shape != b.mu.shape:
        raise DimensionError(f"feature dims differ: {a.mu.shape} vs {b.mu.shape}")
    dim = a.mu.shape[0]
    if a.count < dim + 1 or b.count < dim + 1:
        warnings.warn(f"feature stats from fewer than F+1={dim + 1} samples; "
                      "covariance estimates may be degenerate", stacklevel=2)
    product = a.sigma @ b.sigma
    sym = (product + product.T) / 2
    eigvals = np.linalg.eigvalsh(sym)
    trace_sqrt = np.sqrt(np.clip(eigvals, 0.0, None)).sum()
    diff = a.mu - b.mu
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2 * trace_sqrt)
    if not np.isfinite(value):
        raise NumericalFault("Frechet distance is non-finite")
    return max(value, 0.0)


class FeatureEncoder(nn.Module):
    """Frozen evaluation embedder; ``features`` is the pooled penultimate map."""

    def __init__(self, n_attrs: int, feature_dim: int = 64):
        super().__init__()
        self.feature_dim = feature_dim
        self.conv1 = nn.Conv2d(3, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, feature_dim, 3, stride=2, padding=1)
        self.head = nn.Linear(feature_dim, n_attrs)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.conv1(images), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        h = F.leaky_relu(self.conv3(h), 0.2)
        return h.mean(dim=(2, 3))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images))


def pretrain_feature_encoder(dataset: SynthDataset, seed: int, steps: int = 400,
                             batch_size: int = 64, lr: float = 1e-3,
                             feature_dim: int = 64) -> FeatureEncoder:
    """Supervised attribute-classification training, deterministic under seed."""
    from .trainer import Adam  # local import to avoid a module cycle

    n = dataset.labels.shape[1]
    enc = FeatureEncoder(n, feature_dim)
    init_weights(enc, np.random.default_rng([seed, 11]))
    opt = Adam(list(enc.named_parameters()), lr=lr, betas=(0.9, 0.999))
    rng = np.random.default_rng([seed, 12])
    for _ in range(steps):
        idx = rng.integers(len(dataset), size=batch_size)
        x = torch.from_numpy(dataset.images[idx].copy())
        y = torch.from_numpy(dataset.labels[idx].astype(np.float32))
        logits = enc(x)
        loss = F.binary_cross_entropy_with_logits(logits, y)
        opt.step(torch.autograd.grad(loss, opt.params))
    for p in enc.parameters():
        p.requires_grad_(False)
    enc.eval()
    return enc


def extract_features(encoder: FeatureEncoder, images: np.ndarray | torch.Tensor,
                     batch_size: int = 256) -> np.ndarray:
    imgs = torch.as_tensor(np.asarray(images, dtype=np.float32))
    out = []
    with torch.no_grad():
        for i in range(0, imgs.shape[0], batch_size):
            out.append(encoder.features(imgs[i:i + batch_size]).numpy())
    return np.concatenate(out, axis=0).astype(np.float64)


@dataclass
class AccuracyReport:
    per_attribute: np.ndarray      # fraction per attribute (nan where no samples)
    mean: float
    counted: np.ndarray            # samples counted per attribute
    excluded: int                  # abstained (attribute, sample) pairs


def attribute_accuracy(spec: SynthSpec, images: np.ndarray, labels: np.ndarray,
                       attr_mask: np.ndarray | None = None) -> AccuracyReport:
    """Fraction of images whose oracle decision matches ``labels``, per
    attribute.  ``attr_mask`` restricts which (sample, attribute) pairs count
    (e.g. only edited attributes); abstains are excluded and counted."""
    labels = np.asarray(labels)
    n_samples, n = labels.shape
    if attr_mask is None:
        attr_mask = np.ones((n_samples, n), dtype=bool)
    hits = np.zeros(n)
    counted = np.zeros(n)
    excluded = 0
    for i in range(n_samples):
        decision = oracle_classify(spec, images[i])
        for j in range(n):
            if not attr_mask[i, j]:
                continue
            if decision.abstain[j]:
                excluded += 1
                continue
            counted[j] += 1
            if decision.values[j] == labels[i, j]:
                hits[j] += 1
    with np.errstate(invalid="ignore"):
        per_attr = np.where(counted > 0, hits / np.maximum(counted, 1), np.nan)
    mean = float(hits.sum() / counted.sum()) if counted.sum() else float("nan")
    return AccuracyReport(per_attr, mean, counted, excluded)


def diversity_score(bundle: NetworkBundle, encoder: FeatureEncoder,
                    sources: np.ndarray, diffs: np.ndarray,
                    n_samples_per_source: int, seed: int) -> float:
    """Mean pairwise feature-space L1 distance among translations of the same
    source under different noise draws."""
    if n_samples_per_source < 2:
        raise ValueError("need at least two samples per source")
    rng = np.random.default_rng([seed, 13])
    total, pairs = 0.0, 0
    dtype = next(bundle.encoder.parameters()).dtype
    with torch.no_grad():
        for i in range(sources.shape[0]):
            src = torch.as_tensor(sources[i:i + 1], dtype=dtype)
            feats = []
            for _ in range(n_samples_per_source):
                noise = torch.as_tensor(
                    rng.standard_normal((1, bundle.noise_dim)), dtype=dtype)
                fake = bundle.generate(src, lem(bundle, src, noise, diffs[i]))
                feats.append(extract_features(encoder, fake.numpy())[0])
            for a in range(len(feats)):
                for b in range(a + 1, len(feats)):
                    total += float(np.abs(feats[a] - feats[b]).mean())
                    pairs += 1
    return total / pairs if pairs else 0.0


@dataclass
class MetricReport:
    fid_label: float
    fid_ref: float
    acc_label: AccuracyReport
    acc_ref: AccuracyReport
    keep_label: AccuracyReport
    keep_ref: AccuracyReport
    diversity: float
    extra: dict[str, float] = field(default_factory=dict)

    def table_row(self) -> str:
        return (f"{self.fid_label:.3f}|{self.fid_ref:.3f}  "
                f"{100 * self.acc_label.mean:.1f}|{100 * self.acc_ref.mean:.1f}  "
                f"{self.diversity:.4f}")

    def as_flat_dict(self) -> dict[str, float]:
        out = {
            "fid_label": self.fid_label,
            "fid_ref": self.fid_ref,
            "acc_label_mean": self.acc_label.mean,
            "acc_ref_mean": self.acc_ref.mean,
            "keep_label_mean": self.keep_label.mean,
            "keep_ref_mean": self.keep_ref.mean,
            "diversity": self.diversity,
            "excluded_label": float(self.acc_label.excluded),
            "excluded_ref": float(self.acc_ref.excluded),
        }
        for j, v in enumerate(self.acc_label.per_attribute):
            out[f"acc_label_attr{j}"] = float(v)
        for j, v in enumerate(self.acc_ref.per_attribute):
            out[f"acc_ref_attr{j}"] = float(v)
        out.update(self.extra)
        return out

    def serialize(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.as_flat_dict().items())


def evaluate_bundle(bundle: NetworkBundle, spec: SynthSpec, train_ds: SynthDataset,
                    test_ds: SynthDataset, seed: int, n_eval: int | None = None,
                    p_flip: float = 0.5, encoder: FeatureEncoder | None = None,
                    diversity_sources: int = 16, diversity_samples: int = 4,
                    groups: tuple = ()) -> MetricReport:
    """Run both synthesis types over seeded (source, reference, target) pairs
    from the test split and compute the full metric row."""
    n_eval = len(test_ds) if n_eval is None else n_eval
    if n_eval < 1:
        raise ValueError("evaluation protocol needs at least one sample")
    if encoder is None:
        encoder = pretrain_feature_encoder(train_ds, seed)
    rng = np.random.default_rng([seed, 14])
    n = test_ds.labels.shape[1]
    dtype = next(bundle.encoder.parameters()).dtype

    sources, y_s, y_t, diffs = [], [], [], []
    fakes_label, fakes_ref = [], []
    with torch.no_grad():
        for i in range(n_eval):
            si = i % len(test_ds)
            ys = test_ds.labels[si]
            for _ in range(16):
                ri = int(rng.integers(len(test_ds)))
                edited = rng.random(n) < p_flip
                while not edited.any():
                    edited = rng.random(n) < p_flip
                yt = np.where(edited, test_ds.labels[ri], ys).astype(np.int8)
                if not np.array_equal(yt, ys) and all(int(yt[list(g)].sum()) <= 1 for g in groups):
                    break
            diff = (yt - ys).astype(np.int8)
            src = torch.as_tensor(test_ds.images[si:si + 1], dtype=dtype)
            ref = torch.as_tensor(test_ds.images[ri:ri + 1], dtype=dtype)
            noise = torch.as_tensor(rng.standard_normal((1, bundle.noise_dim)), dtype=dtype)
            from .codec import rem
            fake_l = bundle.generate(src, lem(bundle, src, noise, diff))
            fake_r = bundle.generate(src, rem(bundle, src, ref, diff))
            sources.append(test_ds.images[si])
            y_s.append(ys)
            y_t.append(yt)
            diffs.append(diff)
            fakes_label.append(fake_l[0].numpy())
            fakes_ref.append(fake_r[0].numpy())

    y_s, y_t, diffs = np.stack(y_s), np.stack(y_t), np.stack(diffs)
    fakes_label = np.stack(fakes_label).astype(np.float32)
    fakes_ref = np.stack(fakes_ref).astype(np.float32)
    edited_mask = diffs != 0

    real_stats = FeatureStats.from_features(extract_features(encoder, test_ds.images))
    stats_l = FeatureStats.from_features(extract_features(encoder, fakes_label))
    stats_r = FeatureStats.from_features(extract_features(encoder, fakes_ref))

    div_count = min(diversity_sources, n_eval)
    return MetricReport(
        fid_label=frechet_distance(stats_l, real_stats),
        fid_ref=frechet_distance(stats_r, real_stats),
        acc_label=attribute_accuracy(spec, fakes_label, y_t, edited_mask),
        acc_ref=attribute_accuracy(spec, fakes_ref, y_t, edited_mask),
        keep_label=attribute_accuracy(spec, fakes_label, y_s, ~edited_mask),
        keep_ref=attribute_accuracy(spec, fakes_ref, y_s, ~edited_mask),
        diversity=diversity_score(bundle, encoder, np.stack(sources)[:div_count],
                                  diffs[:div_count], diversity_samples, seed),
    )
