"""Inference helpers for the synthesis modes exposed by the CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .codec import (average_reference_codes, interpolate_codes, lem,
                    mix_reference_codes, rem)
from .nets import NetworkBundle


def _to_batch(bundle: NetworkBundle, image: np.ndarray | torch.Tensor) -> torch.Tensor:
    dtype = next(bundle.encoder.parameters()).dtype
    t = torch.as_tensor(np.asarray(image), dtype=dtype)
    return t[None] if t.ndim == 3 else t


def _to_image(batch: torch.Tensor) -> np.ndarray:
    return batch[0].detach().cpu().numpy().astype(np.float32)


def _noise(bundle: NetworkBundle, noise) -> torch.Tensor:
    dtype = next(bundle.encoder.parameters()).dtype
    return torch.as_tensor(np.asarray(noise), dtype=dtype).reshape(1, -1)


def label_based(bundle: NetworkBundle, source, diff, noise) -> np.ndarray:
    with torch.no_grad():
        src = _to_batch(bundle, source)
        return _to_image(bundle.generate(src, lem(bundle, src, _noise(bundle, noise), diff)))


def reference_based(bundle: NetworkBundle, source, reference, diff) -> np.ndarray:
    with torch.no_grad():
        src = _to_batch(bundle, source)
        ref = _to_batch(bundle, reference)
        return _to_image(bundle.generate(src, rem(bundle, src, ref, diff)))


def reconstruct(bundle: NetworkBundle, source, noise) -> np.ndarray:
    zero = np.zeros(bundle.n_attrs, dtype=np.int8)
    return label_based(bundle, source, zero, noise)


def interp_sweep(bundle: NetworkBundle, source, reference, diff, noise,
                 alphas: Sequence[float]) -> list[np.ndarray]:
    """One image per alpha; endpoints reproduce the pure label- and
    reference-based outputs bitwise."""
    with torch.no_grad():
        src = _to_batch(bundle, source)
        ref = _to_batch(bundle, reference)
        s_rand = lem(bundle, src, _noise(bundle, noise), diff)
        s_ref = rem(bundle, src, ref, diff)
        return [_to_image(bundle.generate(src, interpolate_codes(s_rand, s_ref, float(a))))
                for a in alphas]


def _compose_multiref(bundle: NetworkBundle, source, references, diffs):
    """Reference-branch codes (one per reference, each with its own edit
    direction) plus the single source-branch code under the combined diff."""
    src = _to_batch(bundle, source)
    diffs = [np.asarray(d) for d in diffs]
    combined = np.clip(np.sum(diffs, axis=0), -1, 1).astype(np.int8)
    branch = [bundle.encode(_to_batch(bundle, r), -d) for r, d in zip(references, diffs)]
    s_source = bundle.encode(src, combined)
    return src, s_source, branch


def multiref_average(bundle: NetworkBundle, source, references, diffs) -> np.ndarray:
    with torch.no_grad():
        src, s_source, branch = _compose_multiref(bundle, source, references, diffs)
        return _to_image(bundle.generate(src, s_source + average_reference_codes(branch)))


def multiref_mix(bundle: NetworkBundle, source, references, diffs,
                 bands: Sequence[tuple[int, int]] | None = None) -> np.ndarray:
    with torch.no_grad():
        src, s_source, branch = _compose_multiref(bundle, source, references, diffs)
        if bands is None:
            bands = even_bands(bundle.code_hw, len(branch))
        return _to_image(bundle.generate(src, s_source + mix_reference_codes(branch, bands)))


def even_bands(height: int, count: int) -> list[tuple[int, int]]:
    """Partition [0, height) into ``count`` near-equal row bands."""
    if count < 1 or count > height:
        raise ValueError(f"cannot split {height} rows into {count} bands")
    edges = [round(i * height / count) for i in range(count + 1)]
    return [(edges[i], edges[i + 1]) for i in range(count)]
