"""Integer algebra over multi-attribute binary labels.

Labels live in {0,1}^n.  A translation direction is the elementwise
difference target - source, in {-1,0,+1}^n.  The keep mask selects the
unedited attributes: entry i is (1 - 2*source_i) where the direction is 0,
and 0 where the attribute is being edited.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError


def as_label(values: Sequence[int] | np.ndarray) -> np.ndarray:
    """Validate and return a binary label vector as an int8 array."""
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError(f"label must be a non-empty 1-D vector, got shape {arr.shape}")
    arr = arr.astype(np.int8)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"label entries must be 0 or 1, got {arr.tolist()}")
    return arr


def as_direction(values: Sequence[int] | np.ndarray) -> np.ndarray:
    """Validate a {-1,0,+1}^n direction (or keep-mask) vector."""
    arr = np.asarray(values).astype(np.int8)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError(f"direction must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.isin(arr, (-1, 0, 1)).all():
        raise ValueError(f"direction entries must be in {{-1,0,1}}, got {arr.tolist()}")
    return arr


def attribute_diff(source: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Elementwise target - source, the source-to-target edit direction."""
    s = as_label(source)
    t = as_label(target)
    if s.size != t.size:
        raise DimensionError(f"label lengths differ: {s.size} vs {t.size}")
    return (t.astype(np.int8) - s.astype(np.int8)).astype(np.int8)


def attribute_keep_mask(source: Sequence[int], diff: Sequence[int]) -> np.ndarray:
    """Mask of unedited attributes: (1 - 2*source) * (1 - |diff|)."""
    s = as_label(source)
    d = as_direction(diff)
    if s.size != d.size:
        raise DimensionError(f"label/diff lengths differ: {s.size} vs {d.size}")
    return ((1 - 2 * s.astype(np.int8)) * (1 - np.abs(d))).astype(np.int8)


def _violates_groups(label: np.ndarray, groups: Sequence[Sequence[int]]) -> bool:
    return any(int(label[list(g)].sum()) > 1 for g in groups)


def _repair_groups(label: np.ndarray, groups: Sequence[Sequence[int]], rng: np.random.Generator) -> np.ndarray:
    out = label.copy()
    for g in groups:
        idx = [i for i in g if out[i] == 1]
        if len(idx) > 1:
            keep = idx[int(rng.integers(len(idx)))]
            for i in idx:
                if i != keep:
                    out[i] = 0
    return out


def sample_target_label(
    source: Sequence[int],
    rng: np.random.Generator,
    groups: Sequence[Sequence[int]] = (),
    p_flip: float = 0.5,
    single_attribute: bool = False,
) -> np.ndarray:
    """Draw a valid target label that differs from the source.

    Each attribute flips independently with probability ``p_flip`` (or exactly
    one uniformly chosen attribute when ``single_attribute``), after which any
    mutually-exclusive group with more than one active member is repaired by
    keeping a single uniformly chosen one.  Retries until the result differs
    from the source in at least one position.
    """
    s = as_label(source)
    n = s.size
    while True:
        if single_attribute:
            flips = np.zeros(n, dtype=bool)
            flips[int(rng.integers(n))] = True
        else:
            flips = rng.random(n) < p_flip
        target = np.where(flips, 1 - s, s).astype(np.int8)
        target = _repair_groups(target, groups, rng)
        if not np.array_equal(target, s) and not _violates_groups(target, groups):
            return target
