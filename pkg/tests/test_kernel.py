import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from odolab.kernel import (
    DivergentSum,
    SingularPoint,
    bernoulli4,
    kernel_d1_closed_form,
    kernel_lowdim,
    kernel_mollified,
    kernel_mollified_direct,
    kernel_periodized,
    lowdim_tail_bound,
    periodized_singularity,
    richardson_kappa,
    singularity_coefficient,
    theta_series,
)

GRID = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]


def brute_sum(d, theta, M, kappa=0.0):
    """Plain Python cube sum, independent of the compiled kernel."""
    total = 0.0
    for nu in np.ndindex(*([2 * M + 1] * d)):
        v = np.array(nu) - M
        r2 = float(v @ v)
        if r2 == 0:
            continue
        total += math.cos(2 * math.pi * float(v @ theta)) * math.exp(-kappa**2 * r2) / r2**2
    return total


class TestLowDim:
    def test_d1_origin(self):
        kv = kernel_lowdim(1, 0.0, 10**4)
        assert abs(kv.value - math.pi**4 / 45) <= 1e-8

    @pytest.mark.parametrize("theta", GRID)
    def test_d1_closed_form(self, theta):
        assert abs(kernel_lowdim(1, theta, 10**4).value - kernel_d1_closed_form(theta)) <= 1e-8
        assert kernel_d1_closed_form(theta) == pytest.approx(-(2 * math.pi**4 / 3) * bernoulli4(theta))

    def test_half_negative(self):
        assert kernel_lowdim(1, 0.5).value < 0

    @pytest.mark.parametrize("d,theta", [(1, [0.37]), (2, [0.1, 0.25]), (3, [0.05, 0.2, 0.4])])
    def test_against_brute_force(self, d, theta):
        M = 6
        assert kernel_lowdim(d, theta, M).value == pytest.approx(brute_sum(d, np.array(theta), M), rel=1e-12)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_tail_bound_honest(self, d):
        th = [0.13] * d
        M = 20
        a = kernel_lowdim(d, th, M)
        b = kernel_lowdim(d, th, 2 * M)
        assert abs(b.value - a.value) <= a.error_bound
        assert a.error_bound == lowdim_tail_bound(d, M)

    @given(st.integers(1, 3), st.floats(-2, 2, allow_nan=False), st.integers(0, 2))
    def test_symmetries(self, d, t, axis):
        th = np.full(d, 0.11)
        th[axis % d] = t
        flipped = th.copy()
        flipped[axis % d] = -t
        M = 8
        a = kernel_lowdim(d, th, M).value
        assert kernel_lowdim(d, -th, M).value == pytest.approx(a, rel=1e-12, abs=1e-12)
        assert kernel_lowdim(d, flipped, M).value == pytest.approx(a, rel=1e-12, abs=1e-12)
        assert kernel_lowdim(d, th + 1, M).value == pytest.approx(a, rel=1e-9, abs=1e-9)

    def test_divergent(self):
        with pytest.raises(DivergentSum):
            kernel_lowdim(4, [0.1] * 4)
        with pytest.raises(DivergentSum):
            lowdim_tail_bound(5, 10)

    def test_bad_cutoff(self):
        with pytest.raises(ValueError):
            kernel_lowdim(1, 0.1, 0)


class TestThetaSeries:
    @pytest.mark.parametrize("x", [0.0, 0.17, 0.5])
    def test_jacobi_matches_direct(self, x):
        s = np.array([0.05, 0.5, 2.0, 3.0, 4.0, 10.0])
        assert np.allclose(theta_series(s, x), theta_series(s, x, cutoff=200), rtol=1e-13, atol=1e-13)


class TestMollified:
    @pytest.mark.parametrize("d,theta,kappa", [(2, [0.1, 0.3], 0.2), (3, [0.0, 0.1, 0.2], 0.3), (5, [0.1, 0, 0, 0, 0.2], 0.5)])
    def test_cube_sum_matches_direct(self, d, theta, kappa):
        M = 4 if d == 5 else 12
        v = kernel_mollified(d, theta, kappa, cutoff=M).value
        assert v == pytest.approx(kernel_mollified_direct(d, theta, kappa, M), rel=1e-10)

    def test_direct_matches_brute(self):
        th = np.array([0.1, 0.3])
        assert kernel_mollified_direct(2, th, 0.2, 5) == pytest.approx(brute_sum(2, th, 5, 0.2), rel=1e-12)

    def test_large_kappa_vanishes(self):
        assert abs(kernel_mollified(3, [0.2, 0, 0], 5.0).value) < 1e-9

    def test_monotone_at_origin(self):
        vals = [kernel_mollified(5, [0] * 5, k).value for k in (0.4, 0.2, 0.1, 0.05)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_requires_positive_kappa(self):
        with pytest.raises(ValueError):
            kernel_mollified(5, [0.1] * 5, 0.0)

    @pytest.mark.parametrize("theta", [0.1, 0.2, 0.45])
    def test_richardson_to_closed_form(self, theta):
        kv = richardson_kappa(1, theta, 0.1)
        exact = kernel_d1_closed_form(theta)
        assert abs(kv.value - exact) <= kv.error_bound + 1e-8

    def test_d4_runs(self):
        kv = kernel_mollified(4, [0.1, 0, 0, 0], 0.1)
        assert np.isfinite(kv.value)


class TestPeriodized:
    @pytest.mark.parametrize("d,theta", [(1, [0.2]), (2, [0.1, 0.3]), (3, [0.25, 0.1, 0.0])])
    def test_matches_lowdim(self, d, theta):
        kv = kernel_lowdim(d, theta, 200)
        assert kernel_periodized(d, theta) == pytest.approx(kv.value, abs=kv.error_bound + 1e-9)

    def test_singular_point(self):
        with pytest.raises(SingularPoint):
            kernel_periodized(5, [0.0] * 5)
        with pytest.raises(SingularPoint):
            periodized_singularity(5, [1.0, 0, 0, 0, 0])

    def test_coefficient(self):
        assert singularity_coefficient(5) == pytest.approx(math.pi**2, rel=1e-15)
        assert singularity_coefficient(6) == pytest.approx(math.pi, rel=1e-15)
        with pytest.raises(ValueError):
            singularity_coefficient(4)

    def test_d5_difference_bounded(self):
        diffs = []
        for t in (1e-1, 1e-2, 1e-3):
            th = [t, 0, 0, 0, 0]
            diffs.append(kernel_periodized(5, th) - periodized_singularity(5, th))
        assert max(np.abs(diffs)) / min(np.abs(diffs)) <= 10
        assert max(diffs) - min(diffs) < 0.01 * abs(np.mean(diffs))

    def test_d5_leading_behaviour(self):
        # |theta| K(theta) -> pi^2 as theta -> 0
        t = 1e-3
        assert t * kernel_periodized(5, [t, 0, 0, 0, 0]) == pytest.approx(math.pi**2, rel=0.01)

    def test_d5_reflection(self):
        a = kernel_periodized(5, [0.1, 0.2, 0, 0, 0.3])
        assert kernel_periodized(5, [0.1, -0.2, 0, 0, 0.3]) == pytest.approx(a, rel=1e-12)
        assert kernel_periodized(5, [0.3, 0.2, 0, 0, 0.1]) == pytest.approx(a, rel=1e-12)
