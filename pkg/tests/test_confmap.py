"""Confidence maps, KL stability, and dataset filtering."""
import math

import numpy as np
import pytest

from ppboost import npyio
from ppboost.confmap import (
    ConfMapConfig,
    FilterConfig,
    cosine_logits,
    kl_divergence,
    normalize_distribution,
    score_and_filter,
    sigmoid_maps,
    softmax_map,
)
from ppboost.rng import rng_from
from ppboost.types import (
    ConfigError,
    GridMap,
    GridShape,
    NumericDomainError,
    PromptEmbedding,
    SampleRecord,
    ValidationError,
)


def test_cosine_self_orthogonal_and_hand_value():
    t = PromptEmbedding("p", np.array([1.0, 1.0]))
    feats = np.zeros((1, 3, 2))
    feats[0, 0] = [2.0, 2.0]        # parallel to t
    feats[0, 1] = [1.0, -1.0]       # orthogonal
    feats[0, 2] = [1.0, 0.0]        # cos = 1/sqrt(2)
    out = cosine_logits(GridMap(feats), t).plane()
    assert out[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert out[0, 1] == pytest.approx(0.0, abs=1e-12)
    assert out[0, 2] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-9)


def test_cosine_zero_norm_errors():
    t = PromptEmbedding("p", np.array([1.0, 0.0]))
    feats = np.ones((2, 2, 2))
    feats[1, 0] = 0.0
    with pytest.raises(NumericDomainError, match=r"row=1, col=0"):
        cosine_logits(GridMap(feats), t)
    with pytest.raises(NumericDomainError, match="zero norm"):
        cosine_logits(GridMap(np.ones((1, 1, 2))), PromptEmbedding("q", np.zeros(2)))


def test_softmax_uniform_and_hand_values():
    uni = softmax_map(GridMap(np.full((3, 4), 2.5)), tau=0.7).plane()
    assert np.allclose(uni, 1.0 / 12)
    two = softmax_map(GridMap(np.array([[0.0, math.log(2.0)]])), tau=1.0).plane()
    assert two.ravel() == pytest.approx([1 / 3, 2 / 3], abs=1e-12)


def test_softmax_sharp_temperature_matches_high_precision():
    # oracle: mpmath evaluation of exp(s/tau)/sum at 50 digits
    from mpmath import mp, mpf, exp as mexp

    mp.dps = 50
    e0, e1 = mexp(mpf(0) / mpf("0.1")), mexp(mpf(1) / mpf("0.1"))
    expected = [float(e0 / (e0 + e1)), float(e1 / (e0 + e1))]
    got = softmax_map(GridMap(np.array([[0.0, 1.0]])), tau=0.1).plane().ravel()
    assert got == pytest.approx(expected, rel=1e-12)
    assert got[0] == pytest.approx(4.5397868702434395e-05, rel=1e-9)


def test_softmax_properties_shift_invariance_and_sharpening():
    rng = rng_from(7)
    for _ in range(25):
        logits = rng.normal(0, 3, (5, 6))
        base = softmax_map(GridMap(logits), tau=1.3).plane()
        assert base.sum() == pytest.approx(1.0, abs=1e-6)
        shifted = softmax_map(GridMap(logits + 17.5), tau=1.3).plane()
        assert np.allclose(base, shifted, atol=1e-12)
        sharper = softmax_map(GridMap(logits), tau=0.4).plane()
        assert sharper.max() >= base.max() - 1e-12
    with pytest.raises(ConfigError):
        softmax_map(GridMap(np.zeros((2, 2))), tau=0.0)


def test_sigmoid_maps_values_and_contrast():
    cfg = ConfMapConfig(tau_low=0.1, tau_high=1.0)
    low, high = sigmoid_maps(GridMap(np.zeros((2, 2))), cfg)
    assert np.allclose(low.values, 0.5) and np.allclose(high.values, 0.5)
    low1, _ = sigmoid_maps(GridMap(np.ones((1, 1))), cfg)
    assert low1.values[0, 0] == pytest.approx(0.9999546021312976, rel=1e-12)
    rng = rng_from(8)
    for _ in range(30):
        logits = GridMap(rng.normal(0, 2, (4, 4)))
        lo, hi = sigmoid_maps(logits, cfg)
        contrast_low = lo.values.max() - lo.values.min()
        contrast_high = hi.values.max() - hi.values.min()
        assert contrast_low >= contrast_high - 1e-12


def test_sigmoid_monotone_in_logits():
    cfg = ConfMapConfig()
    rng = rng_from(9)
    a = rng.normal(0, 1, (3, 3))
    b = a + rng.random((3, 3))  # b >= a cellwise
    la, _ = sigmoid_maps(GridMap(a), cfg)
    lb, _ = sigmoid_maps(GridMap(b), cfg)
    assert np.all(lb.values >= la.values)


def test_normalize_distribution():
    out = normalize_distribution(GridMap(np.array([[1.0, 1.0, 2.0]])), 1e-12).plane()
    assert out.ravel() == pytest.approx([0.25, 0.25, 0.5])
    uni = normalize_distribution(GridMap(np.full((2, 3), 7.0)), 1e-12).plane()
    assert np.allclose(uni, 1.0 / 6)
    floored = normalize_distribution(GridMap(np.array([[0.0, 1.0]])), 1e-12).plane()
    assert floored[0, 0] > 0.0
    assert floored[0, 0] == pytest.approx(1e-12, rel=1e-6)


def test_kl_examples_and_asymmetry():
    p = GridMap(np.array([[0.5, 0.5]]))
    q = GridMap(np.array([[0.25, 0.75]]))
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)
    expected_pq = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
    expected_qp = 0.25 * math.log(0.25 / 0.5) + 0.75 * math.log(0.75 / 0.5)
    assert kl_divergence(p, q) == pytest.approx(expected_pq, rel=1e-12)
    assert kl_divergence(q, p) == pytest.approx(expected_qp, rel=1e-12)
    assert kl_divergence(p, q) == pytest.approx(0.14384, abs=5e-6)
    assert kl_divergence(q, p) == pytest.approx(0.13081, abs=5e-6)
    assert kl_divergence(p, q) != kl_divergence(q, p)
    with pytest.raises(ValidationError):
        kl_divergence(p, GridMap(np.array([[1.0]])))


def test_kl_nonnegative_property():
    rng = rng_from(10)
    for _ in range(50):
        a = normalize_distribution(GridMap(rng.random((4, 5))), 1e-12)
        b = normalize_distribution(GridMap(rng.random((4, 5))), 1e-12)
        assert kl_divergence(a, b) >= -1e-9
        assert kl_divergence(a, a) == pytest.approx(0.0, abs=1e-12)


def _dataset(tmp_path, kls_like):
    """Samples whose stability KL ordering follows the requested magnitudes:
    constant grids have KL exactly 0; noisier grids score higher."""
    records = []
    rng = rng_from(11)
    for i, level in enumerate(kls_like):
        arr = (level * rng.normal(0, 1, (4, 4))).astype(np.float32)
        rel = f"s{i}.npy"
        npyio.write_grid(tmp_path / rel, GridMap(arr))
        records.append(
            SampleRecord(
                sample_id=f"s{i:02d}",
                image_h=8,
                image_w=8,
                grid=GridShape(4, 4, 1),
                logits_path=rel,
                prompt_id="prompt_00",
                split="train",
            )
        )
    return records


def test_score_and_filter_percentile_and_ties(tmp_path):
    records = _dataset(tmp_path, [0.1 * (i + 1) for i in range(10)])
    cfg = ConfMapConfig()
    scores = score_and_filter(records, cfg, FilterConfig("percentile", 0.3), root=tmp_path)
    kept = [s.sample_id for s in scores if s.kept]
    ordered = sorted(scores, key=lambda s: (s.kl, s.sample_id))
    assert kept == sorted(s.sample_id for s in ordered[:3])
    assert len(kept) == math.ceil(0.3 * 10)


def test_score_and_filter_absolute_zero_kl(tmp_path):
    records = _dataset(tmp_path, [0.0, 0.0, 0.5])
    scores = score_and_filter(
        records, ConfMapConfig(), FilterConfig("absolute", tau_kl=0.0), root=tmp_path
    )
    # constant-logit samples have identical low/high distributions: KL == 0
    assert [s.kept for s in scores] == [True, True, False]
    assert scores[0].kl == pytest.approx(0.0, abs=1e-12)


def test_filter_monotone_in_keep_fraction(tmp_path):
    records = _dataset(tmp_path, list(np.linspace(0, 1, 12)))
    cfg = ConfMapConfig()
    prev: set = set()
    for frac in (0.1, 0.25, 0.5, 0.75, 1.0):
        scores = score_and_filter(records, cfg, FilterConfig("percentile", frac), root=tmp_path)
        kept = {s.sample_id for s in scores if s.kept}
        assert prev <= kept
        prev = kept


def test_score_and_filter_empty_errors():
    with pytest.raises(ValidationError):
        score_and_filter([], ConfMapConfig(), FilterConfig())


def test_filter_config_validation():
    with pytest.raises(ConfigError):
        FilterConfig("percentile", keep_fraction=0.0)
    with pytest.raises(ConfigError):
        FilterConfig("absolute")
    with pytest.raises(ConfigError):
        ConfMapConfig(tau_low=1.0, tau_high=0.5)
