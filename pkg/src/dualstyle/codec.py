"""Style-code composition.

The label path sums the source encoding (forward direction) with the mapped
noise (reverse direction); the reference path sums the source encoding with
the reference encoding (reverse direction).  Interpolation, multi-reference
averaging, and row-band mixing operate on codes of identical shape.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .errors import DimensionError
from .nets import NetworkBundle


def _negate(cond) -> np.ndarray:
    return -np.asarray(cond)


def lem(bundle: NetworkBundle, source: torch.Tensor, noise: torch.Tensor, diff) -> torch.Tensor:
    """Label-based code: E(source, diff) + M(noise, -diff)."""
    return bundle.encode(source, diff) + bundle.map_noise(noise, _negate(diff))


def rem(bundle: NetworkBundle, source: torch.Tensor, reference: torch.Tensor, diff) -> torch.Tensor:
    """Reference-based code: E(source, diff) + E(reference, -diff)."""
    return bundle.encode(source, diff) + bundle.encode(reference, _negate(diff))


def interpolate_codes(s_rand: torch.Tensor, s_ref: torch.Tensor, alpha: float) -> torch.Tensor:
    """Convex combination alpha*s_rand + (1-alpha)*s_ref, exact at endpoints."""
    if s_rand.shape != s_ref.shape:
        raise DimensionError(f"code shapes differ: {tuple(s_rand.shape)} vs {tuple(s_ref.shape)}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    if alpha == 1.0:
        return s_rand
    if alpha == 0.0:
        return s_ref
    return alpha * s_rand + (1.0 - alpha) * s_ref


def average_reference_codes(codes: Sequence[torch.Tensor]) -> torch.Tensor:
    """Elementwise mean of reference-branch codes."""
    if len(codes) == 0:
        raise ValueError("need at least one code to average")
    _check_same_shape(codes)
    return torch.stack(tuple(codes), dim=0).mean(dim=0)


def mix_reference_codes(codes: Sequence[torch.Tensor], bands: Sequence[tuple[int, int]]) -> torch.Tensor:
    """Copy row band ``bands[i]`` (half-open, over the code's row axis) from
    ``codes[i]``; the bands must partition [0, H)."""
    if len(codes) == 0:
        raise ValueError("need at least one code to mix")
    if len(codes) != len(bands):
        raise ValueError(f"got {len(codes)} codes but {len(bands)} bands")
    _check_same_shape(codes)
    height = codes[0].shape[-2]
    covered = np.zeros(height, dtype=bool)
    for lo, hi in bands:
        if not 0 <= lo < hi <= height:
            raise ValueError(f"band ({lo}, {hi}) out of range for height {height}")
        if covered[lo:hi].any():
            raise ValueError("bands overlap")
        covered[lo:hi] = True
    if not covered.all():
        raise ValueError("bands do not cover every row")
    out = torch.empty_like(codes[0])
    for code, (lo, hi) in zip(codes, bands):
        out[..., lo:hi, :] = code[..., lo:hi, :]
    return out


def _check_same_shape(codes: Sequence[torch.Tensor]) -> None:
    shape = codes[0].shape
    for c in codes[1:]:
        if c.shape != shape:
            raise DimensionError(f"code shapes differ: {tuple(shape)} vs {tuple(c.shape)}")
