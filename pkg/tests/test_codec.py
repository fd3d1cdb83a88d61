import numpy as np
import pytest
import torch

from dualstyle.codec import (average_reference_codes, interpolate_codes, lem,
                             mix_reference_codes, rem)
from dualstyle.errors import DimensionError

from conftest import random_images


def test_lem_matches_separate_branches(tiny_bundle, rng):
    src = random_images(rng, 2, 8)
    noise = torch.as_tensor(rng.standard_normal((2, 4)), dtype=torch.float32)
    diff = np.array([1, -1], dtype=np.int8)
    code = lem(tiny_bundle, src, noise, diff)
    expected = tiny_bundle.encode(src, diff) + tiny_bundle.map_noise(noise, -diff)
    assert torch.equal(code, expected)
    assert code.shape == (2, 4, 2, 2)


def test_lem_zero_mapper_reduces_to_encoder(tiny_bundle, rng):
    src = random_images(rng, 1, 8)
    noise = torch.zeros(1, 4)
    diff = np.zeros(2, dtype=np.int8)
    with torch.no_grad():
        for p in tiny_bundle.mapper.out.parameters():
            p.zero_()
    code = lem(tiny_bundle, src, noise, diff)
    assert torch.equal(code, tiny_bundle.encode(src, diff))


def test_rem_matches_separate_branches(tiny_bundle, rng):
    src = random_images(rng, 2, 8)
    ref = random_images(rng, 2, 8)
    diff = np.array([0, 1], dtype=np.int8)
    code = rem(tiny_bundle, src, ref, diff)
    expected = tiny_bundle.encode(src, diff) + tiny_bundle.encode(ref, -diff)
    assert torch.equal(code, expected)


def test_rem_self_reference_zero_diff(tiny_bundle, rng):
    src = random_images(rng, 1, 8)
    zero = np.zeros(2, dtype=np.int8)
    code = rem(tiny_bundle, src, src, zero)
    assert torch.allclose(code, 2 * tiny_bundle.encode(src, zero))


def test_interpolation_endpoints_bitwise(rng):
    a = torch.as_tensor(rng.standard_normal((1, 4, 2, 2)), dtype=torch.float32)
    b = torch.as_tensor(rng.standard_normal((1, 4, 2, 2)), dtype=torch.float32)
    assert interpolate_codes(a, b, 1.0) is a
    assert interpolate_codes(a, b, 0.0) is b
    mid = interpolate_codes(a, b, 0.5)
    assert torch.allclose(mid, (a + b) / 2)
    assert torch.equal(interpolate_codes(a, a, 0.5), a)


def test_interpolation_rejects_bad_alpha(rng):
    a = torch.zeros(1, 2, 2, 2)
    with pytest.raises(ValueError):
        interpolate_codes(a, a, 1.5)
    with pytest.raises(ValueError):
        interpolate_codes(a, a, -0.1)
    with pytest.raises(DimensionError):
        interpolate_codes(a, torch.zeros(1, 3, 2, 2), 0.5)


def test_average_codes(rng):
    codes = [torch.as_tensor(rng.standard_normal((1, 2, 4, 4)), dtype=torch.float32)
             for _ in range(3)]
    assert torch.equal(average_reference_codes(codes[:1]), codes[0])
    assert torch.equal(average_reference_codes([codes[0], codes[0]]), codes[0])
    avg = average_reference_codes(codes)
    assert torch.allclose(avg, (codes[0] + codes[1] + codes[2]) / 3)


def test_mix_codes(rng):
    a = torch.as_tensor(rng.standard_normal((1, 2, 4, 4)), dtype=torch.float32)
    b = torch.as_tensor(rng.standard_normal((1, 2, 4, 4)), dtype=torch.float32)
    assert torch.equal(mix_reference_codes([a], [(0, 4)]), a)
    mixed = mix_reference_codes([a, b], [(0, 2), (2, 4)])
    assert torch.equal(mixed[..., :2, :], a[..., :2, :])
    assert torch.equal(mixed[..., 2:, :], b[..., 2:, :])
    # band copying is order-free
    swapped = mix_reference_codes([b, a], [(2, 4), (0, 2)])
    assert torch.equal(mixed, swapped)


def test_mix_codes_validates_partition(rng):
    a = torch.zeros(1, 2, 4, 4)
    with pytest.raises(ValueError):
        mix_reference_codes([a, a], [(0, 2), (1, 4)])   # overlap
    with pytest.raises(ValueError):
        mix_reference_codes([a, a], [(0, 1), (2, 4)])   # gap
    with pytest.raises(ValueError):
        mix_reference_codes([a], [(0, 5)])              # out of range
