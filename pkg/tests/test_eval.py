import numpy as np
import pytest
import torch

from dualstyle.metrics import (FeatureStats, attribute_accuracy, diversity_score,
                               evaluate_bundle, extract_features, frechet_distance,
                               pretrain_feature_encoder)
from dualstyle.nets import build_bundle
from dualstyle.synthdata import SynthSpec, build_dataset

from conftest import tiny_config

SPEC = SynthSpec(n_attrs=2, image_size=16)


def stats_1d(mu, var):
    return FeatureStats(mu=np.array([mu], dtype=np.float64),
                        sigma=np.array([[var]], dtype=np.float64), count=100)


def test_frechet_identical_is_zero(rng):
    feats = rng.standard_normal((200, 8))
    a = FeatureStats.from_features(feats)
    assert frechet_distance(a, a) < 1e-6


def test_frechet_1d_closed_form():
    a = stats_1d(0.0, 1.0)
    b = stats_1d(1.0, 4.0)
    # 1 + (1 + 4 - 2*sqrt(4)) = 2
    assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-6)


def test_frechet_symmetry(rng):
    a = FeatureStats.from_features(rng.standard_normal((150, 6)))
    b = FeatureStats.from_features(rng.standard_normal((150, 6)) * 1.5 + 0.3)
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-6)
    assert frechet_distance(a, b) >= 0


def test_frechet_warns_on_small_sample(rng):
    a = FeatureStats.from_features(rng.standard_normal((5, 8)))
    with pytest.warns(UserWarning):
        frechet_distance(a, a)


@pytest.fixture(scope="module")
def pretrained():
    train, test = build_dataset(SPEC, 512, 128, seed=0)
    enc = pretrain_feature_encoder(train, seed=0, steps=300)
    return train, test, enc


def test_feature_extraction_deterministic(pretrained):
    _, test, enc = pretrained
    a = extract_features(enc, test.images[:16])
    b = extract_features(enc, test.images[:16])
    assert np.array_equal(a, b)
    assert a.shape == (16, 64)


def test_feature_encoder_oracle_agreement(pretrained):
    _, test, enc = pretrained
    with torch.no_grad():
        probs = torch.sigmoid(enc(torch.from_numpy(test.images))).numpy()
    pred = (probs > 0.5).astype(np.int8)
    agreement = (pred == test.labels).mean()
    assert agreement >= 0.95


def test_features_linearly_separable(pretrained):
    """Populations split by one attribute separate with a least-squares probe."""
    _, test, enc = pretrained
    feats = extract_features(enc, test.images)
    y = test.labels[:, 0].astype(np.float64) * 2 - 1
    x = np.hstack([feats, np.ones((len(feats), 1))])
    w, *_ = np.linalg.lstsq(x, y, rcond=None)
    acc = ((x @ w > 0) == (y > 0)).mean()
    assert acc >= 0.95


def test_accuracy_closed_cases(pretrained):
    _, test, _ = pretrained
    images, labels = test.images[:64], test.labels[:64]
    perfect = attribute_accuracy(SPEC, images, labels)
    assert perfect.mean == pytest.approx(1.0)
    assert np.allclose(perfect.per_attribute, 1.0)
    inverted = attribute_accuracy(SPEC, images, 1 - labels)
    assert inverted.mean == pytest.approx(0.0)


def test_accuracy_half_mixed_exact(pretrained):
    _, test, _ = pretrained
    images = test.images[:64]
    labels = test.labels[:64].copy()
    labels[:32] = 1 - labels[:32]
    report = attribute_accuracy(SPEC, images, labels)
    assert report.mean == pytest.approx(0.5)
    assert report.excluded == 0


def test_accuracy_attr_mask(pretrained):
    _, test, _ = pretrained
    images, labels = test.images[:16], test.labels[:16]
    mask = np.zeros_like(labels, dtype=bool)
    mask[:, 1] = True
    report = attribute_accuracy(SPEC, images, 1 - labels, attr_mask=mask)
    assert np.isnan(report.per_attribute[0])
    assert report.per_attribute[1] == pytest.approx(0.0)


def test_diversity_zero_for_noise_blind_model(pretrained):
    train, test, enc = pretrained
    cfg = tiny_config(image_size=16, code_downsample=4, attr_names=["bg", "sq"])
    bundle = build_bundle(cfg)
    with torch.no_grad():  # sever the mapper's influence: G ignores R entirely
        for p in bundle.mapper.parameters():
            p.zero_()
    diffs = np.zeros((4, 2), dtype=np.int8)
    score = diversity_score(bundle, enc, test.images[:4], diffs, 3, seed=0)
    assert score == pytest.approx(0.0, abs=1e-7)


def test_diversity_real_images_exceed_model(pretrained):
    train, test, enc = pretrained
    cfg = tiny_config(image_size=16, code_downsample=4, attr_names=["bg", "sq"])
    bundle = build_bundle(cfg)
    diffs = np.zeros((4, 2), dtype=np.int8)
    model_score = diversity_score(bundle, enc, test.images[:4], diffs, 3, seed=0)
    # upper reference: independent dataset images are far more diverse
    feats = extract_features(enc, test.images[:12])
    total, pairs = 0.0, 0
    for a in range(12):
        for b in range(a + 1, 12):
            total += float(np.abs(feats[a] - feats[b]).mean())
            pairs += 1
    assert total / pairs > model_score


@pytest.mark.filterwarnings("ignore:feature stats from fewer")
def test_evaluate_bundle_deterministic_and_total(pretrained):
    train, test, enc = pretrained
    cfg = tiny_config(image_size=16, code_downsample=4, attr_names=["bg", "sq"])
    bundle = build_bundle(cfg)
    kwargs = dict(seed=0, n_eval=24, encoder=enc,
                  diversity_sources=4, diversity_samples=2)
    a = evaluate_bundle(bundle, SPEC, train, test, **kwargs)
    b = evaluate_bundle(bundle, SPEC, train, test, **kwargs)
    assert a.serialize() == b.serialize()
    row = a.table_row()
    assert row.count("|") == 2
    with pytest.raises(ValueError):
        evaluate_bundle(bundle, SPEC, train, test, seed=0, n_eval=0, encoder=enc)


def test_fid_real_vs_itself_small(pretrained):
    _, test, enc = pretrained
    a = FeatureStats.from_features(extract_features(enc, test.images))
    b = FeatureStats.from_features(extract_features(enc, test.images))
    assert frechet_distance(a, b) < 0.5
