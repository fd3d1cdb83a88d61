import numpy as np
import pytest

from dualstyle.errors import ConfigError
from dualstyle.synthdata import (SynthSpec, build_dataset, oracle_classify,
                                 render, sample_style)

SPEC3 = SynthSpec(n_attrs=3)
SPEC4 = SynthSpec(n_attrs=4)


def test_render_deterministic():
    rng = np.random.default_rng(0)
    style = sample_style(SPEC3, rng)
    a = render(SPEC3, [1, 0, 0], style)
    b = render(SPEC3, [1, 0, 0], style)
    assert np.array_equal(a, b)


def test_background_attribute_flips_luma_sign():
    rng = np.random.default_rng(1)
    for _ in range(100):
        style = sample_style(SPEC3, rng)
        bright = render(SPEC3, [1, 0, 0], style)
        dark = render(SPEC3, [0, 0, 0], style)
        assert bright[:, 0, 0].mean() > 0.2
        assert dark[:, 0, 0].mean() < -0.2


@pytest.mark.parametrize("spec", [SynthSpec(n_attrs=1), SynthSpec(n_attrs=2), SPEC3, SPEC4])
def test_oracle_exact_on_clean_renders(spec):
    """Zero oracle errors over 10^4 random (label, style) draws."""
    rng = np.random.default_rng(10)
    n_draws = 10_000 // 4
    errors = 0
    for _ in range(n_draws):
        label = rng.integers(0, 2, size=spec.n_attrs).astype(np.int8)
        style = sample_style(spec, rng)
        decision = oracle_classify(spec, render(spec, label, style))
        if not decision.agrees(label).all():
            errors += 1
    assert errors == 0


def test_oracle_robust_to_small_noise():
    rng = np.random.default_rng(11)
    agree = total = 0
    for _ in range(1000):
        label = rng.integers(0, 2, size=3).astype(np.int8)
        img = render(SPEC3, label, sample_style(SPEC3, rng))
        noisy = img + rng.normal(0, 0.02, size=img.shape).astype(np.float32)
        decision = oracle_classify(SPEC3, noisy)
        agree += int(decision.agrees(label).sum())
        total += 3
    assert agree / total >= 0.99


def test_oracle_abstains_on_uniform_gray():
    decision = oracle_classify(SPEC3, np.zeros((3, 32, 32), dtype=np.float32))
    assert decision.abstain[1]


def test_label_balance():
    spec = SPEC3
    train, _ = build_dataset(spec, 4096, 16, seed=0)
    combos, counts = np.unique(train.labels, axis=0, return_counts=True)
    assert len(combos) == 8
    uniform = 4096 / 8
    assert (np.abs(counts - uniform) <= 0.2 * uniform).all()


def test_dataset_deterministic_and_disjoint():
    a_train, a_test = build_dataset(SPEC3, 32, 16, seed=5)
    b_train, b_test = build_dataset(SPEC3, 32, 16, seed=5)
    assert np.array_equal(a_train.images, b_train.images)
    assert np.array_equal(a_test.images, b_test.images)
    assert not set(a_train.ids.tolist()) & set(a_test.ids.tolist())


def test_groups_respected():
    spec = SynthSpec(n_attrs=3, groups=((1, 2),))
    train, _ = build_dataset(spec, 256, 8, seed=0)
    assert (train.labels[:, 1] + train.labels[:, 2] <= 1).all()


def test_manifest_format():
    train, _ = build_dataset(SPEC3, 4, 2, seed=0)
    lines = train.manifest().strip().split("\n")
    assert len(lines) == 4
    for i, line in enumerate(lines):
        sid, bits, digest = line.split("\t")
        assert int(sid) == int(train.ids[i])
        assert len(bits) == 3 and set(bits) <= {"0", "1"}
        assert len(digest) == 8


def test_bad_spec_rejected():
    with pytest.raises(ConfigError):
        SynthSpec(n_attrs=5)
    with pytest.raises(ConfigError):
        SynthSpec(n_attrs=2, image_size=8)
    with pytest.raises(ConfigError):
        render(SPEC3, [1, 0], sample_style(SPEC3, np.random.default_rng(0)))
