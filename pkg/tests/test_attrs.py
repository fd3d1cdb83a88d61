import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualstyle.attrs import (as_direction, as_label, attribute_diff,
                             attribute_keep_mask, sample_target_label)
from dualstyle.errors import DimensionError


def brute_force_diff(source, target):
    out = []
    for s, t in zip(source, target):
        if s == t:
            out.append(0)
        elif t == 1:
            out.append(1)
        else:
            out.append(-1)
    return np.array(out, dtype=np.int8)


def brute_force_keep(source, diff):
    out = []
    for s, d in zip(source, diff):
        if d != 0:
            out.append(0)
        elif s == 0:
            out.append(1)
        else:
            out.append(-1)
    return np.array(out, dtype=np.int8)


def all_labels(n):
    return [np.array(bits, dtype=np.int8) for bits in itertools.product((0, 1), repeat=n)]


def test_worked_example():
    y_s = [1, 0, 1, 0]
    y_t = [1, 1, 0, 0]
    diff = attribute_diff(y_s, y_t)
    assert diff.tolist() == [0, 1, -1, 0]
    assert attribute_keep_mask(y_s, diff).tolist() == [-1, 0, 0, 1]


def test_identical_labels_zero_diff():
    assert attribute_diff([0, 1], [0, 1]).tolist() == [0, 0]


def test_all_edited_zero_mask():
    assert attribute_keep_mask([1, 0, 1], [-1, 1, -1]).tolist() == [0, 0, 0]


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_exhaustive_against_oracle(n):
    for y_s in all_labels(n):
        for y_t in all_labels(n):
            diff = attribute_diff(y_s, y_t)
            assert np.array_equal(diff, brute_force_diff(y_s, y_t)), (y_s, y_t)
            assert np.array_equal(diff, y_t.astype(np.int8) - y_s.astype(np.int8))
            keep = attribute_keep_mask(y_s, diff)
            assert np.array_equal(keep, brute_force_keep(y_s, diff)), (y_s, y_t)


labels = st.lists(st.integers(0, 1), min_size=1, max_size=6)


@given(st.data(), labels)
def test_diff_properties(data, y_s):
    y_t = data.draw(st.lists(st.integers(0, 1), min_size=len(y_s), max_size=len(y_s)))
    diff = attribute_diff(y_s, y_t)
    assert set(diff.tolist()) <= {-1, 0, 1}
    assert np.array_equal(np.asarray(y_s) + diff, np.asarray(y_t))


@given(st.data(), labels)
def test_keep_mask_properties(data, y_s):
    y_t = data.draw(st.lists(st.integers(0, 1), min_size=len(y_s), max_size=len(y_s)))
    diff = attribute_diff(y_s, y_t)
    keep = attribute_keep_mask(y_s, diff)
    # nonzero exactly on unedited attributes, sign opposite the source bit
    assert np.array_equal(np.abs(keep), 1 - np.abs(diff))
    for s, d, k in zip(y_s, diff, keep):
        if d == 0:
            assert k == (1 if s == 0 else -1)
        else:
            assert k == 0


def test_validators_reject_bad_input():
    with pytest.raises(ValueError):
        as_label([0, 2])
    with pytest.raises(ValueError):
        as_direction([0, -2])
    with pytest.raises(DimensionError):
        as_label([[0, 1]])
    with pytest.raises(DimensionError):
        attribute_diff([0, 1], [0, 1, 1])
    with pytest.raises(DimensionError):
        attribute_keep_mask([0, 1], [0])


def test_sample_target_single_bit():
    rng = np.random.default_rng(1)
    assert sample_target_label([0], rng).tolist() == [1]


def test_sample_target_respects_groups():
    rng = np.random.default_rng(2)
    group = (0, 1, 2)
    for _ in range(10_000):
        src = np.zeros(4, dtype=np.int8)
        src[int(rng.integers(3))] = 1
        target = sample_target_label(src, rng, groups=[group])
        assert int(target[list(group)].sum()) <= 1
        assert not np.array_equal(target, src)


def test_sample_target_single_attribute_mode():
    rng = np.random.default_rng(3)
    for _ in range(200):
        src = rng.integers(0, 2, size=4).astype(np.int8)
        target = sample_target_label(src, rng, single_attribute=True)
        assert int(np.sum(target != src)) == 1
