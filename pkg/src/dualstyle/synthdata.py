"""Procedural multi-attribute image dataset with an exact attribute oracle.

Attribute semantics by index (the first n are used):
  0: background bright vs dark
  1: central shape square vs circle
  2: stripes on the shape present vs absent
  3: corner marker big vs small

Nuisance style parameters (color tints, position jitter, stripe phase) vary
appearance without changing any attribute decision, so the rule-based oracle
recovers the label of every clean render exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attrs import as_label
from .config import ExperimentConfig
from .errors import ConfigError

MAX_ATTRS = 4

# geometry/appearance constants (units of a 32px canvas, scaled by size/32)
_BG_LUMA = 0.55
_SHAPE_LUMA = 0.35
_STRIPE_DELTA = 0.5
_SHAPE_HALF = 7
_JITTER = 2
_STRIPE_PERIOD = 4
_MARKER_POS = 2
_MARKER_BIG = 6
_MARKER_SMALL = 3

# oracle thresholds
_MASK_THRESHOLD = 0.2
_FILL_SQUARE = 0.88
_STRIPE_STD = 0.12
_MIN_SHAPE_PIXELS = 20


@dataclass(frozen=True)
class SynthSpec:
    n_attrs: int = 3
    image_size: int = 32
    groups: tuple[tuple[int, ...], ...] = ()
    tint_range: float = 0.1
    jitter: int = _JITTER

    def __post_init__(self):
        if not 1 <= self.n_attrs <= MAX_ATTRS:
            raise ConfigError(f"synthetic renderer supports 1..{MAX_ATTRS} attributes, got {self.n_attrs}")
        if self.image_size < 16:
            raise ConfigError("synthetic images need size >= 16")

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "SynthSpec":
        return cls(n_attrs=cfg.n_attrs, image_size=cfg.image_size,
                   groups=tuple(tuple(g) for g in cfg.groups))


@dataclass(frozen=True)
class StyleParams:
    bg_tint: tuple[float, float, float]
    shape_tint: tuple[float, float, float]
    dx: int
    dy: int
    phase: int

    def digest(self) -> str:
        payload = repr((tuple(round(v, 6) for v in self.bg_tint),
                        tuple(round(v, 6) for v in self.shape_tint),
                        self.dx, self.dy, self.phase))
        return hashlib.sha1(payload.encode()).hexdigest()[:8]


@dataclass
class SynthSample:
    image: np.ndarray          # (3, H, W) float32 in [-1, 1]
    label: np.ndarray          # (n,) int8
    style: StyleParams
    id: int


@dataclass
class OracleDecision:
    values: np.ndarray         # (n,) int8, meaningful where not abstained
    abstain: np.ndarray        # (n,) bool

    def agrees(self, label: np.ndarray) -> np.ndarray:
        """Per-attribute agreement; abstained attributes count as disagreement."""
        return (~self.abstain) & (self.values == np.asarray(label))


def sample_style(spec: SynthSpec, rng: np.random.Generator) -> StyleParams:
    return StyleParams(
        bg_tint=tuple(rng.uniform(-spec.tint_range, spec.tint_range, 3)),
        shape_tint=tuple(rng.uniform(-spec.tint_range, spec.tint_range, 3)),
        dx=int(rng.integers(-spec.jitter, spec.jitter + 1)),
        dy=int(rng.integers(-spec.jitter, spec.jitter + 1)),
        phase=int(rng.integers(_STRIPE_PERIOD)),
    )


def _scaled(value: int, size: int) -> int:
    return max(1, int(round(value * size / 32)))


def render(spec: SynthSpec, label: Sequence[int], style: StyleParams) -> np.ndarray:
    """Deterministic render of a label under the given nuisance style."""
    y = as_label(label)
    if y.size != spec.n_attrs:
        raise ConfigError(f"label length {y.size} != spec.n_attrs {spec.n_attrs}")
    size = spec.image_size
    bg_luma = _BG_LUMA if y[0] == 1 else -_BG_LUMA
    img = np.empty((3, size, size), dtype=np.float32)
    for c in range(3):
        img[c] = bg_luma + style.bg_tint[c]

    half = _scaled(_SHAPE_HALF, size)
    cy = size // 2 + style.dy
    cx = size // 2 + style.dx
    yy, xx = np.mgrid[0:size, 0:size]
    square = spec.n_attrs >= 2 and y[1] == 1
    if square:
        mask = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    else:
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= half ** 2
    shape_luma = -np.sign(bg_luma) * _SHAPE_LUMA
    for c in range(3):
        img[c][mask] = shape_luma + style.shape_tint[c]

    if spec.n_attrs >= 3 and y[2] == 1:
        period = _scaled(_STRIPE_PERIOD, size)
        stripe_rows = ((yy - cy + style.phase) % period) < period // 2
        stripe = mask & stripe_rows
        delta = _STRIPE_DELTA if shape_luma < 0 else -_STRIPE_DELTA
        for c in range(3):
            img[c][stripe] += delta

    if spec.n_attrs >= 4:
        pos = _scaled(_MARKER_POS, size)
        sz = _scaled(_MARKER_BIG if y[3] == 1 else _MARKER_SMALL, size)
        for c in range(3):
            img[c][pos:pos + sz, pos:pos + sz] = style.shape_tint[c]

    return np.clip(img, -1.0, 1.0)


def oracle_classify(spec: SynthSpec, image: np.ndarray) -> OracleDecision:
    """Rule-based attribute decisions from the regions the renderer controls."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ConfigError(f"expected (3, H, W) image, got shape {img.shape}")
    size = img.shape[1]
    n = spec.n_attrs
    values = np.zeros(n, dtype=np.int8)
    abstain = np.zeros(n, dtype=bool)
    luma = img.mean(axis=0)

    border = np.zeros((size, size), dtype=bool)
    border[:2, :] = border[-2:, :] = True
    border[:, :2] = border[:, -2:] = True
    bg = float(np.median(luma[border]))
    values[0] = 1 if bg > 0 else 0

    mask = np.abs(luma - bg) > _MASK_THRESHOLD
    if n >= 4:
        pos = _scaled(_MARKER_POS, size)
        big = _scaled(_MARKER_BIG, size)
        window = luma[pos:pos + big + 2, pos:pos + big + 2]
        count = int((np.abs(window - bg) > _MASK_THRESHOLD).sum())
        mask[:pos + big + 2, :pos + big + 2] = False
        big_area = _scaled(_MARKER_BIG, size) ** 2
        small_area = _scaled(_MARKER_SMALL, size) ** 2
        if count >= (big_area + small_area) // 2:
            values[3] = 1
        elif count >= max(2, small_area // 2):
            values[3] = 0
        else:
            abstain[3] = True

    min_pixels = max(_MIN_SHAPE_PIXELS, int(0.01 * size * size))
    if int(mask.sum()) < min_pixels:
        if n >= 2:
            abstain[1] = True
        if n >= 3:
            abstain[2] = True
        return OracleDecision(values, abstain)

    rows = np.where(mask.any(axis=1))[0]
    cols = np.where(mask.any(axis=0))[0]
    box = mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    fill = float(box.mean())
    if n >= 2:
        values[1] = 1 if fill > _FILL_SQUARE else 0

    if n >= 3:
        row_means = []
        for r in range(rows[0], rows[-1] + 1):
            sel = mask[r]
            if int(sel.sum()) >= 3:
                row_means.append(float(luma[r][sel].mean()))
        if len(row_means) < 4:
            abstain[2] = True
        else:
            values[2] = 1 if float(np.std(row_means)) > _STRIPE_STD else 0

    return OracleDecision(values, abstain)


@dataclass
class SynthDataset:
    spec: SynthSpec
    images: np.ndarray         # (N, 3, H, W) float32
    labels: np.ndarray         # (N, n) int8
    styles: list[StyleParams]
    ids: np.ndarray            # (N,) int64

    def __len__(self) -> int:
        return self.images.shape[0]

    def manifest(self) -> str:
        lines = []
        for i in range(len(self)):
            bits = "".join(str(int(b)) for b in self.labels[i])
            lines.append(f"{int(self.ids[i])}\t{bits}\t{self.styles[i].digest()}")
        return "\n".join(lines) + "\n"

    def save_manifest(self, path: str | Path) -> None:
        Path(path).write_text(self.manifest())


def _valid_combos(spec: SynthSpec) -> np.ndarray:
    n = spec.n_attrs
    combos = []
    for bits in range(2 ** n):
        label = np.array([(bits >> i) & 1 for i in range(n)], dtype=np.int8)
        if all(int(label[list(g)].sum()) <= 1 for g in spec.groups):
            combos.append(label)
    return np.stack(combos)


def _generate(spec: SynthSpec, count: int, seed: int, id_offset: int) -> SynthDataset:
    combos = _valid_combos(spec)
    images = np.empty((count, 3, spec.image_size, spec.image_size), dtype=np.float32)
    labels = np.empty((count, spec.n_attrs), dtype=np.int8)
    styles: list[StyleParams] = []
    ids = np.arange(id_offset, id_offset + count, dtype=np.int64)
    for i in range(count):
        rng = np.random.default_rng([seed, 2, id_offset + i])
        label = combos[int(rng.integers(len(combos)))]
        style = sample_style(spec, rng)
        images[i] = render(spec, label, style)
        labels[i] = label
        styles.append(style)
    return SynthDataset(spec, images, labels, styles, ids)


TEST_ID_OFFSET = 1_000_000


def build_dataset(spec: SynthSpec, n_train: int, n_test: int, seed: int) -> tuple[SynthDataset, SynthDataset]:
    """Deterministic train/test split with disjoint ids and near-uniform
    coverage of all valid label combinations."""
    if n_train < 1 or n_test < 1:
        raise ConfigError("dataset sizes must be >= 1")
    train = _generate(spec, n_train, seed, 0)
    test = _generate(spec, n_test, seed, TEST_ID_OFFSET)
    return train, test
