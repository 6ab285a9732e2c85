import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from sehilo.fsq import QuantizerConfig
from sehilo.theory import (
    UniformQuantizerSpec,
    fsq_specs,
    mc_correct_rate,
    p_correct_multi,
    p_correct_single,
    p_correct_step,
    predicted_rate,
    robustness_report,
    sample_codewords,
)

# erf(x) at 40 digits (mpmath), rounded to 20
ERF_TABLE = [
    (0.0, 0.0),
    (0.01, 0.011283415555849616916),
    (0.05, 0.056371977797016623831),
    (0.1, 0.1124629160182848922),
    (0.2, 0.22270258921047845414),
    (0.3, 0.32862675945912742764),
    (0.5, 0.52049987781304653768),
    (0.70710678118654752440, 0.68268949213708589717),
    (0.75, 0.7111556336535151316),
    (1.0, 0.84270079294971486934),
    (1.25, 0.92290012825645823014),
    (1.5, 0.96610514647531072707),
    (1.76776695296636881100, 0.98758066934844772967),
    (2.0, 0.99532226501895273416),
    (2.5, 0.99959304798255504106),
    (3.0, 0.99997790950300141456),
    (3.5, 0.99999925690162765859),
    (4.0, 0.99999998458274209972),
    (5.0, 0.99999999999846254021),
    (6.0, 0.99999999999999997848),
]


@pytest.mark.parametrize("x,expected", ERF_TABLE)
def test_erf_reference_values(x, expected):
    # p_correct_step(delta, sigma) = erf(delta / (2 sqrt2 sigma)); pick sigma so the argument is x
    if x == 0:
        assert p_correct_step(0.0, 1.0) == 0.0
        return
    sigma = 1.0 / (2 * math.sqrt(2) * x)
    assert p_correct_step(1.0, sigma) == pytest.approx(expected, abs=1e-12)


@given(st.floats(1e-3, 20), st.floats(1e-3, 20))
def test_matches_mpmath(delta, sigma):
    with mpmath.workdps(40):
        want = mpmath.erf(mpmath.mpf(delta) / (2 * mpmath.sqrt(2) * mpmath.mpf(sigma)))
    assert p_correct_step(delta, sigma) == pytest.approx(float(want), abs=1e-14)


def _cdf_oracle(delta, sigma):
    """P(|eta| <= delta/2) for eta ~ N(0, sigma^2), via the normal CDF."""
    return 2 * norm.cdf(delta / (2 * sigma)) - 1


class TestSingle:
    def test_unit_step(self):
        spec = UniformQuantizerSpec(0.0, 4.0, 5)
        assert spec.step == 1.0
        assert p_correct_single(spec, 0.5) == pytest.approx(0.682689492137086, abs=1e-12)
        assert p_correct_single(spec, 0.5) == pytest.approx(_cdf_oracle(1, 0.5), abs=1e-12)

    def test_small_sigma_limit(self):
        assert p_correct_single(UniformQuantizerSpec(0, 1, 2), 1e-6) == 1.0

    def test_span_example(self):
        spec = UniformQuantizerSpec(-1.0, 1.0, 5)
        assert spec.step == 0.5
        assert p_correct_single(spec, 0.1) == pytest.approx(0.987580669348448, abs=1e-12)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            p_correct_single(UniformQuantizerSpec(0, 1, 2), 0.0)
        with pytest.raises(ValueError):
            p_correct_single(UniformQuantizerSpec(0, 1, 2), -1.0)

    def test_points(self):
        np.testing.assert_allclose(UniformQuantizerSpec(-1, 1, 5).points, [-1, -0.5, 0, 0.5, 1])

    @given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.1, 100))
    def test_depends_only_on_ratio(self, delta, sigma, k):
        assert p_correct_step(delta, sigma) == pytest.approx(p_correct_step(k * delta, k * sigma),
                                                             abs=1e-12)

    @given(st.floats(0.01, 10), st.floats(0.01, 10))
    def test_matches_cdf_oracle(self, delta, sigma):
        assert p_correct_step(delta, sigma) == pytest.approx(_cdf_oracle(delta, sigma), abs=1e-12)


class TestMulti:
    def test_one_dim_reduces(self):
        spec = UniformQuantizerSpec(-1, 1, 5)
        assert p_correct_multi([spec], 0.3) == p_correct_single(spec, 0.3)
        assert p_correct_multi(spec, 0.3, 1) == p_correct_single(spec, 0.3)

    def test_fifth_power(self):
        spec = UniformQuantizerSpec(-1, 1, 5)
        assert p_correct_multi([spec] * 5, 0.1) == pytest.approx(0.939426707587140, abs=1e-12)
        assert p_correct_multi(spec, 0.1, 5) == pytest.approx(0.939426707587140, abs=1e-12)

    def test_huge_sigma_goes_to_zero(self):
        spec = UniformQuantizerSpec(-1, 1, 5)
        assert p_correct_multi([spec, spec], 1e9) < 1e-9

    def test_empty(self):
        with pytest.raises(ValueError):
            p_correct_multi([], 1.0)

    def test_fsq_specs_step_is_alpha(self):
        q = QuantizerConfig((5, 4, 8), 1.7)
        assert [s.step for s in fsq_specs(q)] == pytest.approx([1.7] * 3)
        assert predicted_rate(q, 0.6) == pytest.approx(p_correct_step(1.7, 0.6) ** 3)
        assert predicted_rate(q, 0) == 1.0


class TestMonteCarlo:
    def test_noiseless(self):
        r = mc_correct_rate(QuantizerConfig((5, 5)), 0.0, 5000, seed=3)
        assert r.rate == 1.0 and r.stderr == 0.0

    def test_deterministic_and_worker_independent(self):
        q = QuantizerConfig((5, 5, 5))
        a = mc_correct_rate(q, 0.8, 50_000, seed=11, chunk_size=4096)
        b = mc_correct_rate(q, 0.8, 50_000, seed=11, chunk_size=4096, n_workers=4)
        assert a == b
        c = mc_correct_rate(q, 0.8, 50_000, seed=12, chunk_size=4096)
        assert c.n_correct != a.n_correct

    def test_interior_matches_theory(self):
        q = QuantizerConfig((5,), 2.0)
        r = mc_correct_rate(q, 1.0, 200_000, seed=5, codewords="interior")
        assert abs(r.rate - 0.682689492137086) <= 4 * r.stderr

    def test_edge_dominates(self):
        q = QuantizerConfig((5,), 2.0)
        r = mc_correct_rate(q, 1.0, 200_000, seed=5, codewords="edge")
        assert r.rate >= 0.682689492137086 - 4 * r.stderr
        # one-sided region: P(eta > -1) = Phi(1)
        assert abs(r.rate - norm.cdf(1.0)) <= 4 * r.stderr

    def test_sampling_sets(self, rng):
        q = QuantizerConfig((5, 4))
        inner = sample_codewords(q, 1000, rng, "interior")
        assert inner.min() >= 1 and np.all(inner < q.m - 1)
        edge = sample_codewords(q, 1000, rng, "edge")
        assert np.all((edge == 0) | (edge == q.m - 1))
        with pytest.raises(ValueError):
            sample_codewords(QuantizerConfig((2,)), 10, rng, "interior")
        with pytest.raises(ValueError):
            sample_codewords(q, 10, rng, "bogus")

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            mc_correct_rate(QuantizerConfig((5,)), 1.0, 0)
        with pytest.raises(ValueError):
            mc_correct_rate(QuantizerConfig((5,)), -1.0, 10)


class TestReport:
    def test_rows_and_laws(self):
        q5 = QuantizerConfig((5, 5, 5, 5, 5), 2.0)
        q1 = QuantizerConfig((5,), 2.0)
        grid = [0.25, 0.5, 1.0, 2.0]
        r5 = robustness_report(q5, grid, n_trials=20_000, seed=1)
        r1 = robustness_report(q1, grid, n_trials=20_000, seed=1)
        for a, b in zip(r5, r1):
            assert a.p_multi == pytest.approx(b.p_multi ** 5, rel=1e-12)
            assert abs(a.mc_rate - a.p_multi) <= 4 * a.mc_stderr + 1e-12
        assert all(x.p_multi > y.p_multi for x, y in zip(r5, r5[1:]))
        assert all(x.p_single > y.p_single for x, y in zip(r5, r5[1:]))

    def test_doubling_alpha_raises_every_entry(self):
        grid = [0.3, 0.7, 1.5]
        lo = robustness_report(QuantizerConfig((5, 5), 1.0), grid, n_trials=1000)
        hi = robustness_report(QuantizerConfig((5, 5), 2.0), grid, n_trials=1000)
        for a, b in zip(lo, hi):
            assert b.p_single > a.p_single and b.p_multi > a.p_multi

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            robustness_report(QuantizerConfig((5,)), [])
