"""Tests for the six baseline operators: exact hand-computed cases, bit
formulas, unbiasedness, variance bounds, and codebook membership."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcomp.core import ParameterError, RngStream, decode
from gradcomp.compressors import (
    CompressorSpec,
    build_operator,
    log2_binom,
    natural_dithering,
    random_sparsification,
    scale_to_contractive,
    scaled_sign,
    standard_dithering,
    ternary_quantize,
    theoretical_alpha,
    theoretical_bits,
    theoretical_omega,
    topk,
)

RNG = RngStream(2024)


def gaussian(d, idx=0):
    return RNG.child(900).child(idx).generator().standard_normal(d)


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            CompressorSpec(kind="middle_out")

    def test_randk_requires_k(self):
        with pytest.raises(ParameterError):
            CompressorSpec(kind="randk")

    def test_dither_requires_s(self):
        with pytest.raises(ParameterError):
            CompressorSpec(kind="std_dither", s=0)

    def test_kashin_requires_quantizer_inner(self):
        with pytest.raises(ParameterError):
            CompressorSpec(kind="kashin", lam=2.0, inner="randk")

    def test_kashin_requires_lam_above_one(self):
        with pytest.raises(ParameterError):
            CompressorSpec(kind="kashin", lam=1.0, inner="ternary")

    def test_scaling_biased_kind_rejected(self):
        with pytest.raises(ParameterError):
            CompressorSpec(kind="topk", k=1, scaled=True)

    def test_tags_roundtrip_identity(self):
        assert CompressorSpec("randk", k=3).tag == "randk-k3"
        assert CompressorSpec("ternary", scaled=True).tag == "scaled-ternary"


class TestTheoreticalFormulas:
    def test_ternary_bits_d1000(self):
        # 31 + 1000*log2(3) = 1615.96...
        assert theoretical_bits(CompressorSpec("ternary"), 1000) == pytest.approx(
            31 + 1000 * math.log2(3), abs=1e-9)
        assert theoretical_bits(CompressorSpec("ternary"), 1000) == pytest.approx(
            1615.96, abs=0.01)

    def test_scaled_sign_bits_d64(self):
        assert theoretical_bits(CompressorSpec("scaled_sign"), 64) == 95.0

    def test_randk_full_support_bits(self):
        # C(4,4) = 1 so the index part vanishes
        assert theoretical_bits(CompressorSpec("randk", k=4), 4) == pytest.approx(128.0)

    def test_log2_binom_matches_exact(self):
        assert log2_binom(10, 3) == pytest.approx(math.log2(120), abs=1e-9)

    def test_randk_omega(self):
        assert theoretical_omega(CompressorSpec("randk", k=100), 1000) == pytest.approx(9.0)
        assert theoretical_omega(CompressorSpec("randk", k=7), 7) == 0.0

    def test_ternary_omega(self):
        assert theoretical_omega(CompressorSpec("ternary"), 10_000) == pytest.approx(99.0)
        assert theoretical_omega(CompressorSpec("ternary"), 1) == 0.0

    def test_std_dither_omega_min_of_two_branches(self):
        assert theoretical_omega(CompressorSpec("std_dither", s=1), 100) == pytest.approx(10.0)
        # large s: the quadratic branch wins
        assert theoretical_omega(CompressorSpec("std_dither", s=50), 100) == pytest.approx(
            100 / 2500)

    def test_nat_dither_omega(self):
        w = theoretical_omega(CompressorSpec("nat_dither", s=4), 1000)
        assert w == pytest.approx(min(math.sqrt(1000) / 8, 1000 / 64))

    def test_topk_alpha(self):
        assert theoretical_alpha(CompressorSpec("topk", k=1), 3) == pytest.approx(2 / 3)

    def test_scaled_sign_alpha(self):
        assert theoretical_alpha(CompressorSpec("scaled_sign"), 1) == 0.0

    def test_scaled_spec_alpha_via_lemma(self):
        # ternary at d=4 has omega=1, so the scaled version has alpha=1/2
        spec = scale_to_contractive(CompressorSpec("ternary"))
        assert theoretical_alpha(spec, 4) == pytest.approx(0.5)

    def test_omega_refused_for_biased(self):
        with pytest.raises(ParameterError):
            theoretical_omega(CompressorSpec("topk", k=1), 4)


class TestRandomSparsification:
    def test_k_equals_d_is_identity(self):
        x = gaussian(8)
        np.testing.assert_allclose(decode(random_sparsification(x, 8, RNG.child(1))), x)

    def test_two_point_enumeration(self):
        # d=2, k=1, x=(1,0): outcomes (2,0) or (0,0), each with prob 1/2
        x = np.array([1.0, 0.0])
        outcomes = set()
        for t in range(200):
            out = tuple(decode(random_sparsification(x, 1, RNG.child(2).child(t))))
            outcomes.add(out)
        assert outcomes == {(2.0, 0.0), (0.0, 0.0)}

    def test_unbiased_mean_matches_x(self):
        x = np.array([1.0, 0.0])
        dec = build_operator(CompressorSpec("randk", k=1), 2, RNG).decode_batch(
            x, 40_000, RNG.child(3))
        assert dec.mean(axis=0)[0] == pytest.approx(1.0, abs=0.03)

    def test_variance_matches_closed_form(self):
        # omega(x) is exactly d/k-1 for every x
        d, k, trials = 60, 12, 30_000
        x = gaussian(d, 1)
        op = build_operator(CompressorSpec("randk", k=k), d, RNG)
        dec = op.decode_batch(x, trials, RNG.child(4))
        ratios = ((dec - x) ** 2).sum(axis=1) / (x @ x)
        se = ratios.std() / math.sqrt(trials)
        assert abs(ratios.mean() - (d / k - 1)) < 3 * se

    def test_out_of_range_k(self):
        with pytest.raises(ParameterError):
            random_sparsification(gaussian(4), 5, RNG)


class TestTopk:
    def test_hand_example(self):
        msg = topk(np.array([3.0, -1.0, 2.0]), 1)
        out = decode(msg)
        np.testing.assert_array_equal(out, [3.0, 0.0, 0.0])
        ratio = ((out - [3, -1, 2]) ** 2).sum() / 14.0
        assert ratio == pytest.approx(5 / 14)
        assert ratio <= 1 - 1 / 3

    def test_k_equals_d_identity(self):
        x = gaussian(5)
        np.testing.assert_array_equal(decode(topk(x, 5)), x)

    def test_equal_magnitudes_hit_bound(self):
        x = np.array([1.0, -1.0, 1.0, -1.0])
        out = decode(topk(x, 2))
        assert ((out - x) ** 2).sum() / (x @ x) == pytest.approx(0.5)

    def test_tie_break_lowest_index(self):
        out = decode(topk(np.array([2.0, -2.0, 1.0]), 1))
        np.testing.assert_array_equal(out, [2.0, 0.0, 0.0])

    def test_deterministic(self):
        x = gaussian(30)
        assert decode(topk(x, 7)).tobytes() == decode(topk(x, 7)).tobytes()


class TestStandardDithering:
    def test_on_grid_is_exact(self):
        # each |x_i|/||x|| is exactly 1/2, a level of the s=2 grid {0, 1/2, 1}
        x = np.array([1.0, 1.0, 1.0, 1.0]) / 2.0
        for t in range(20):
            np.testing.assert_allclose(
                decode(standard_dithering(x, 2, RNG.child(5).child(t))), x, atol=1e-12)

    def test_d1_exact(self):
        x = np.array([-2.5])
        np.testing.assert_allclose(decode(standard_dithering(x, 3, RNG.child(6))), x)

    def test_variance_bound_d100_s1(self):
        d, trials = 100, 20_000
        x = gaussian(d, 2)
        op = build_operator(CompressorSpec("std_dither", s=1), d, RNG)
        dec = op.decode_batch(x, trials, RNG.child(7))
        ratios = ((dec - x) ** 2).sum(axis=1) / (x @ x)
        se = ratios.std() / math.sqrt(trials)
        assert ratios.mean() <= 10.0 + 3 * se

    def test_grid_membership(self):
        x = gaussian(40, 3)
        norm = np.linalg.norm(x)
        out = decode(standard_dithering(x, 4, RNG.child(8)))
        levels = np.abs(out) / norm
        np.testing.assert_allclose(levels * 4, np.round(levels * 4), atol=1e-9)


class TestNaturalDithering:
    def test_power_of_two_level_exact(self):
        # ratios 1 and 0 are both levels of the dyadic grid
        x = np.array([5.0, 0.0])
        np.testing.assert_allclose(decode(natural_dithering(x, 3, RNG.child(9))), x)

    def test_d1_exact(self):
        np.testing.assert_allclose(
            decode(natural_dithering(np.array([7.0]), 2, RNG.child(10))), [7.0])

    def test_half_level_exact(self):
        # construct ratios exactly 1/2 (= 2^-1, an in-grid level for s>=2)
        x = np.array([1.0, 1.0, 1.0, 1.0]) * 3.0
        t = np.abs(x) / np.linalg.norm(x)
        assert t[0] == pytest.approx(0.5)
        np.testing.assert_allclose(decode(natural_dithering(x, 4, RNG.child(11))), x,
                                   atol=1e-12)

    def test_variance_bound_d1000_s4(self):
        d, trials = 1000, 3000
        x = gaussian(d, 4)
        op = build_operator(CompressorSpec("nat_dither", s=4), d, RNG)
        dec = op.decode_batch(x, trials, RNG.child(12))
        ratios = ((dec - x) ** 2).sum(axis=1) / (x @ x)
        se = ratios.std() / math.sqrt(trials)
        bound = min(math.sqrt(d) / 8, d / 64)
        assert ratios.mean() <= bound + 3 * se

    def test_levels_are_dyadic_or_zero(self):
        x = gaussian(50, 5)
        norm = np.linalg.norm(x)
        s = 5
        out = decode(natural_dithering(x, s, RNG.child(13)))
        levels = np.abs(out[out != 0]) / norm
        exponents = np.log2(levels)
        np.testing.assert_allclose(exponents, np.round(exponents), atol=1e-9)
        assert exponents.min() >= 1 - s - 1e-9


class TestTernary:
    def test_d1_exact(self):
        np.testing.assert_allclose(
            decode(ternary_quantize(np.array([-3.0]), RNG.child(14))), [-3.0])

    def test_zero_in_zero_out(self):
        np.testing.assert_array_equal(
            decode(ternary_quantize(np.zeros(4), RNG.child(15))), np.zeros(4))

    def test_variance_bound_d10000(self):
        d, trials = 10_000, 300
        x = gaussian(d, 6)
        op = build_operator(CompressorSpec("ternary"), d, RNG)
        dec = op.decode_batch(x, trials, RNG.child(16))
        ratios = ((dec - x) ** 2).sum(axis=1) / (x @ x)
        se = ratios.std() / math.sqrt(trials)
        assert ratios.mean() <= math.sqrt(d) - 1 + 3 * se


class TestScaledSign:
    def test_hand_example(self):
        out = decode(scaled_sign(np.array([1.0, 0.0])))
        np.testing.assert_allclose(out, [0.5, 0.5])
        assert ((out - [1, 0]) ** 2).sum() / 1.0 == pytest.approx(0.5)
        assert 0.5 <= 1 - 1 / 2 + 1e-12

    def test_d1_identity(self):
        np.testing.assert_allclose(decode(scaled_sign(np.array([-4.0]))), [-4.0])

    def test_all_ones_exact(self):
        x = np.ones(17)
        np.testing.assert_allclose(decode(scaled_sign(x)), x)

    def test_contraction_bound_gaussian(self):
        for i in range(20):
            x = gaussian(64, 10 + i)
            out = decode(scaled_sign(x))
            assert ((out - x) ** 2).sum() <= (1 - 1 / 64) * (x @ x) + 1e-9


class TestScaledOperators:
    def test_factor_is_half_for_ternary_d4(self):
        op = build_operator(CompressorSpec("ternary", scaled=True), 4, RNG)
        assert op.factor == pytest.approx(0.5)

    def test_double_scaling_rejected(self):
        spec = scale_to_contractive(CompressorSpec("randk", k=1))
        with pytest.raises(ParameterError):
            scale_to_contractive(spec)

    def test_scaled_randk_contraction(self):
        # randk d=10 k=5 has omega=1; scaled contraction <= 1/2 + noise
        d, trials = 10, 30_000
        op = build_operator(CompressorSpec("randk", k=5, scaled=True), d, RNG)
        x = gaussian(d, 30)
        dec = op.decode_batch(x, trials, RNG.child(17))
        ratios = ((dec - x) ** 2).sum(axis=1) / (x @ x)
        se = ratios.std() / math.sqrt(trials)
        assert ratios.mean() <= 0.5 + 3 * se

    def test_scaled_compress_decode_consistent(self):
        op = build_operator(CompressorSpec("ternary", scaled=True), 6, RNG)
        x = gaussian(6, 31)
        msg = op.compress(x, RNG.child(18))
        base = build_operator(CompressorSpec("ternary"), 6, RNG).compress(
            x, RNG.child(18))
        np.testing.assert_allclose(decode(msg), op.factor * decode(base))


class TestBatchedDecodeAgreesWithCompress:
    """decode_batch is a vectorized fast path; its per-trial distribution must
    match compress+decode.  Checked via means/variances on a fixed vector."""

    @pytest.mark.parametrize("spec", [
        CompressorSpec("randk", k=3),
        CompressorSpec("std_dither", s=2),
        CompressorSpec("nat_dither", s=3),
        CompressorSpec("ternary"),
    ])
    def test_moments_match(self, spec):
        d, trials = 12, 12_000
        x = gaussian(d, 50)
        op = build_operator(spec, d, RNG)
        fast = op.decode_batch(x, trials, RNG.child(19))
        slow = np.stack([decode(op.compress(x, RNG.child(20).child(t)))
                         for t in range(trials)])
        for sample in (fast, slow):
            assert sample.shape == (trials, d)
        # means agree within 5 joint standard errors per coordinate
        se = np.sqrt(fast.var(axis=0) / trials + slow.var(axis=0) / trials) + 1e-12
        assert np.all(np.abs(fast.mean(axis=0) - slow.mean(axis=0)) < 5 * se + 1e-9)

    def test_deterministic_kinds_tile(self):
        x = gaussian(9, 51)
        for spec in (CompressorSpec("topk", k=2), CompressorSpec("scaled_sign")):
            op = build_operator(spec, 9, RNG)
            batch = op.decode_batch(x, 4, RNG.child(21))
            single = decode(op.compress(x, RNG.child(22)))
            for row in batch:
                np.testing.assert_array_equal(row, single)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_ternary_output_in_codebook(d, seed):
    x = RngStream(seed).generator().standard_normal(d)
    out = decode(ternary_quantize(x, RngStream(seed + 1)))
    norm = np.linalg.norm(x)
    for v in out:
        assert min(abs(v), abs(abs(v) - norm)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 10_000))
def test_dithering_never_exceeds_norm(d, s, seed):
    x = RngStream(seed).generator().standard_normal(d)
    norm = np.linalg.norm(x)
    out = decode(standard_dithering(x, s, RngStream(seed + 7)))
    assert np.all(np.abs(out) <= norm + 1e-9)
    out = decode(natural_dithering(x, s, RngStream(seed + 8)))
    assert np.all(np.abs(out) <= norm + 1e-9)
