import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfftgan import numcore as nc
from cfftgan.losses import (
    FeaturePyramid,
    LossWeights,
    NonFiniteLossError,
    PseudoBatch,
    SurrogateExtractor,
    cx_similarity,
    d_hinge_loss,
    g_hinge_loss,
    generator_objective,
    l1_mean,
    l_align,
    l_cx,
    l_match,
    l_perc,
    total_loss,
)
from cfftgan.numcore import Tape, Tensor, backward
from cfftgan.translation import ArchConfig, TranslationModel, encode

EXTRACTOR = SurrogateExtractor()


@pytest.fixture(scope="module")
def micro():
    return TranslationModel(ArchConfig.micro(), seed=0)


def _img(rng, n=None):
    shape = (3, 32, 32) if n is None else (n, 3, 32, 32)
    return rng.uniform(-1, 1, size=shape).astype(np.float32)


def _batch(rng, n=2):
    x_B = _img(rng, n)
    return PseudoBatch(_img(rng, n), x_B[:, :, :, ::-1].copy(), x_B)


def test_extractor_stage_sizes(rng):
    pyr = EXTRACTOR(_img(rng))
    assert [pyr[i].shape for i in range(5)] == [(8, 16, 16), (16, 8, 8), (32, 4, 4), (32, 2, 2), (32, 1, 1)]
    assert pyr.low_level_ids == (0, 1) and pyr.high_level_ids == (2, 3, 4) and pyr.perceptual_id == 4


def test_extractor_is_deterministic_and_frozen(rng):
    other = SurrogateExtractor(1234)
    for a, b in zip(EXTRACTOR.weights, other.weights):
        np.testing.assert_array_equal(a.data, b.data)
        assert not a.requires_grad
    x = Tensor(_img(rng), requires_grad=True)
    with Tape():
        g = backward(nc.sum_(EXTRACTOR(x)[4]))
    assert x in g
    assert not any(w in g for w in EXTRACTOR.weights)


def test_l1_constant_case():
    assert float(l1_mean(np.ones((16, 8, 8)), np.zeros((16, 8, 8))).data) == 1.0
    assert float(l1_mean(np.ones((4,)), np.ones((4,))).data) == 0.0


def test_l1_matches_brute_force(rng):
    for _ in range(3):
        a, b = rng.normal(size=(2, 16, 8, 8))
        ref = sum(abs(float(x) - float(y)) for x, y in zip(a.ravel(), b.ravel())) / a.size
        assert abs(float(l1_mean(a, b).data) - ref) < 1e-5


def test_l_align_is_mean_encoder_gap(micro, rng):
    x_A, x_B = _img(rng), _img(rng)
    ref = np.abs(encode(micro, x_A, "A").data - encode(micro, x_B, "B").data).mean()
    assert float(l_align(x_A, x_B, micro).data) == pytest.approx(ref, rel=1e-6)


def test_l_match_zero_and_definition(rng):
    a, b = EXTRACTOR(_img(rng)), EXTRACTOR(_img(rng))
    assert float(l_match(a, a).data) == 0.0
    per_stage = [np.abs(a[i].data - b[i].data).mean() for i in range(5)]
    assert float(l_match(a, b).data) == pytest.approx(np.mean(per_stage), rel=1e-5)


def test_l_match_from_raw_pyramids(rng):
    x, y = _img(rng), _img(rng)

    def pyramid(img):
        feats, h = [], img.astype(np.float64)[None]
        for w in EXTRACTOR.weights:
            from scipy.signal import correlate

            W = w.data.astype(np.float64)
            pad = np.pad(h, ((0, 0), (0, 0), (1, 1), (1, 1)))
            out = np.stack([sum(correlate(pad[0, c], W[o, c], mode="valid") for c in range(W.shape[1])) for o in range(W.shape[0])])
            out = np.maximum(out, 0)
            C, H, Wd = out.shape
            h = out.reshape(C, H // 2, 2, Wd // 2, 2).mean(axis=(2, 4))[None]
            feats.append(h[0])
        return feats

    fx, fy = pyramid(x), pyramid(y)
    ref = np.mean([np.abs(a - b).mean() for a, b in zip(fx, fy)])
    assert float(l_match(EXTRACTOR(x), EXTRACTOR(y)).data) == pytest.approx(ref, rel=1e-4)
    perc_ref = np.sqrt(np.mean((fx[4] - fy[4]) ** 2))
    assert float(l_perc(EXTRACTOR(x), EXTRACTOR(y)).data) == pytest.approx(perc_ref, rel=1e-4)


def _pyr(deep):
    levels = [(f"stage{i}", Tensor(np.zeros((2, 2, 2), dtype=np.float32))) for i in range(4)]
    return FeaturePyramid(levels + [("stage4", Tensor(np.asarray(deep, dtype=np.float32)))])


def test_l_perc_zero_and_homogeneous(rng):
    d = rng.normal(size=(4, 1, 1))
    base = float(l_perc(_pyr(d), _pyr(np.zeros_like(d))).data)
    assert float(l_perc(_pyr(d), _pyr(d)).data) == 0.0
    assert float(l_perc(_pyr(3 * d), _pyr(np.zeros_like(d))).data) == pytest.approx(3 * base, rel=1e-6)


def test_single_pixel_perturbation_is_detected(rng):
    x = _img(rng)
    y = x.copy()
    y[1, 17, 9] += 0.5
    a, b = EXTRACTOR(x), EXTRACTOR(y)
    assert float(l_match(a, b).data) > 0
    assert float(l_perc(a, b).data) > 0
    assert float(l_match(a, a).data) == 0 and float(l_perc(a, a).data) == 0


def test_cx_single_pair_is_one(rng):
    assert float(cx_similarity(rng.normal(size=(1, 5)), rng.normal(size=(1, 5))).data) == pytest.approx(1.0, abs=1e-6)


def test_cx_scale_invariant(rng):
    X, Y = rng.normal(size=(6, 4)), rng.normal(size=(5, 4))
    a = float(cx_similarity(X, Y).data)
    b = float(cx_similarity(3.0 * X, 3.0 * Y).data)
    assert a == pytest.approx(b, rel=1e-5)


def test_cx_in_unit_interval(rng):
    v = float(cx_similarity(rng.normal(size=(9, 4)), rng.normal(size=(7, 4))).data)
    assert 0 < v <= 1


def test_cx_self_beats_unrelated_over_seeds():
    wins = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        X = r.normal(size=(16, 8))
        Y = r.normal(size=(16, 8))
        wins += float(cx_similarity(X, X).data) > float(cx_similarity(X, Y).data)
    assert wins == 20


def test_cx_zero_vectors_are_finite():
    v = cx_similarity(np.zeros((3, 4)), np.zeros((2, 4)))
    assert np.isfinite(v.data)


def test_l_cx_minimum_at_exemplar(rng):
    y = _img(rng)
    self_loss = float(l_cx(EXTRACTOR(y), EXTRACTOR(y)).data)
    other = float(l_cx(EXTRACTOR(_img(rng)), EXTRACTOR(y)).data)
    assert 0 <= self_loss < other


def test_l_cx_is_mean_of_two_stage_losses(rng):
    a, b = EXTRACTOR(_img(rng)), EXTRACTOR(_img(rng))

    def stage(i):
        X = a[i].data.reshape(a[i].shape[0], -1).T
        Y = b[i].data.reshape(b[i].shape[0], -1).T
        return -math.log(float(cx_similarity(X, Y).data))

    assert float(l_cx(a, b).data) == pytest.approx((stage(0) + stage(1)) / 2, rel=1e-5)


def test_hinge_margin_cases():
    assert float(d_hinge_loss(np.ones((1, 4, 4)), -np.ones((1, 4, 4))).data) == 0.0
    assert float(d_hinge_loss(np.zeros((1, 4, 4)), np.zeros((1, 4, 4))).data) == 2.0


@given(st.floats(-3, 3), st.floats(0.01, 3))
def test_generator_hinge_decreases_with_fake_score(s, delta):
    lo = float(g_hinge_loss(np.full((1, 4, 4), s)).data)
    hi = float(g_hinge_loss(np.full((1, 4, 4), s + delta)).data)
    assert hi < lo


def test_paper_weights():
    w = LossWeights()
    assert (w.align, w.match, w.perc, w.cx, w.adv) == (10, 10, 0.001, 10, 10)
    with pytest.raises(ValueError):
        LossWeights(cx=-1)


def test_only_align_weight(micro, rng):
    b = _batch(rng)
    w = LossWeights(match=0, perc=0, cx=0, adv=0)
    g_total, _ = total_loss(b, micro, w, EXTRACTOR)
    ref = 10 * float(l_align(b.x_A, b.x_B, micro).data)
    assert float(g_total.data) == pytest.approx(ref, rel=1e-6)


def test_total_loss_terms_signs_and_finiteness(micro, rng):
    b = _batch(rng)
    g_total, d_total = total_loss(b, micro, LossWeights(), EXTRACTOR)
    _, terms, _ = generator_objective(b, micro, LossWeights(), EXTRACTOR)
    assert np.isfinite(g_total.data) and np.isfinite(d_total.data)
    for k in ("align", "match", "perc", "cx"):
        assert float(terms[k].data) >= 0, k
    assert float(d_total.data) >= 0


def test_adv_d_gradient_only_on_discriminator(micro, rng):
    from cfftgan.losses import l_adv_d
    from cfftgan.translation import translate

    b = _batch(rng)
    with Tape():
        fake = translate(micro, b.x_A, b.x_tilde_B)
        g = backward(l_adv_d(b.x_B, fake, micro))
    for n, t in micro.params.items():
        if not n.startswith("disc."):
            grad = g.get(t)
            assert grad is None or not np.any(grad.data), n


def test_non_finite_term_is_named(micro, rng):
    b = _batch(rng)
    bad = PseudoBatch(b.x_A, b.x_tilde_B, np.full_like(b.x_B, np.nan))
    with pytest.raises(NonFiniteLossError, match="match"):
        total_loss(bad, micro, LossWeights(), EXTRACTOR)

