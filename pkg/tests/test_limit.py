import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from odolab.field import covariance_matrix, sample_chi
from odolab.limit import (
    EpsilonTooSmall,
    MomentReport,
    TestFunction,
    cell_average_T,
    empirical_moment,
    exact_pairing_variance,
    pair_field,
    pairing_samples,
    remainder_K,
    remainder_variance,
    sobolev_norm_field,
    sobolev_norm_minus1,
    sobolev_threshold,
)
from odolab.sandpile import WeightDistribution
from odolab.torus import TorusLattice

SQRT2_COS = TestFunction.cosine([1], math.sqrt(2))


@st.composite
def trig_polys(draw, d=1, max_freq=4):
    coeffs = {}
    for _ in range(draw(st.integers(1, 3))):
        nu = tuple(draw(st.integers(-max_freq, max_freq)) for _ in range(d))
        if any(nu) and tuple(-v for v in nu) not in coeffs:
            re = draw(st.floats(-2, 2, allow_nan=False))
            im = draw(st.floats(-2, 2, allow_nan=False))
            coeffs[nu] = complex(re, im)
    if not coeffs or all(abs(c) < 1e-3 for c in coeffs.values()):
        coeffs = {(1,) * d: 1.0}
    return TestFunction(d, coeffs)


class TestTestFunction:
    def test_rejects(self):
        with pytest.raises(ValueError):
            TestFunction(1, {(0,): 1.0})
        with pytest.raises(ValueError):
            TestFunction(1, {})
        with pytest.raises(ValueError):
            TestFunction(1, {(1,): 1.0, (-1,): 2.0})
        with pytest.raises(ValueError):
            TestFunction(2, {(1,): 1.0})

    def test_parse(self):
        u = TestFunction.parse("1;1:1,-1;-1:1", 2)
        assert u(np.array([[0.0, 0.0]]))[0] == pytest.approx(2.0)
        assert u(np.array([[0.25, 0.0]]))[0] == pytest.approx(0.0, abs=1e-15)
        with pytest.raises(ValueError):
            TestFunction.parse("1", 1)

    @given(trig_polys(d=2))
    def test_text_roundtrip(self, u):
        v = TestFunction.parse(u.to_text(), 2)
        assert np.array_equal(u.freqs, v.freqs) and np.array_equal(u.coefs, v.coefs)

    @given(trig_polys())
    def test_real_and_zero_mean(self, u):
        x = np.linspace(0, 1, 64, endpoint=False)[:, None]
        vals = u(x)
        assert np.isrealobj(vals)
        assert abs(vals.mean()) < 1e-12 * (1 + np.abs(vals).max())

    def test_norm_examples(self):
        assert sobolev_norm_minus1(SQRT2_COS) == pytest.approx(1.0, abs=1e-15)
        assert sobolev_norm_minus1(TestFunction.cosine([1, 1], 2.0)) == pytest.approx(0.5, abs=1e-15)

    @given(trig_polys(), st.floats(-5, 5, allow_nan=False).filter(lambda c: abs(c) > 1e-3))
    def test_norm_homogeneous(self, u, c):
        assert sobolev_norm_minus1(u.scaled(c)) == pytest.approx(c * c * sobolev_norm_minus1(u), rel=1e-12)


class TestCellAverages:
    def test_example(self):
        T = cell_average_T(TestFunction.cosine([1]), TorusLattice(1, 4), [0])
        assert T == pytest.approx(math.sin(math.pi / 4) / math.pi, abs=1e-12)
        assert T == pytest.approx(0.2250790790, abs=1e-10)

    @given(trig_polys(d=2), st.integers(2, 12))
    def test_sums_to_zero(self, u, n):
        assert abs(cell_average_T(u, TorusLattice(2, n)).sum()) < 1e-12

    def test_quadrature_oracle(self):
        u = TestFunction.parse("1:0.4,2:-0.3j,5:0.2", 1)
        n = 6
        T = cell_average_T(u, TorusLattice(1, n))
        for x in range(n):
            q, _ = integrate.quad(lambda t: u(np.array([[t]]))[0], (x - 0.5) / n, (x + 0.5) / n, epsabs=1e-14)
            assert T[x] == pytest.approx(q, abs=1e-12)

    def test_grid_matches_pointwise(self):
        u = TestFunction.parse("1;2:0.5,2;-1:0.25j", 2)
        lat = TorusLattice(2, 5)
        T = cell_average_T(u, lat)
        K = remainder_K(u, lat)
        for z in [(0, 0), (1, 3), (4, 2)]:
            assert T[z] == pytest.approx(cell_average_T(u, lat, z), abs=1e-14)
            assert K[z] == pytest.approx(remainder_K(u, lat, z), abs=1e-13)

    def test_remainder_closed_form(self):
        u = TestFunction.cosine([1])
        for n in (4, 8, 33):
            K0 = remainder_K(u, TorusLattice(1, n), [0])
            assert K0 == pytest.approx(n * math.sin(math.pi / n) / math.pi - 1, abs=1e-13)
            assert K0 < 0

    def test_remainder_bound_lemma(self):
        # sup |K_n| <= C / n; for centred cells the decay is in fact n^-2
        ns = [8, 16, 32, 64, 128, 256]
        sups = [np.abs(remainder_K(SQRT2_COS, TorusLattice(1, n))).max() for n in ns]
        scaled = [n * s for n, s in zip(ns, sups)]
        assert all(b <= a for a, b in zip(scaled, scaled[1:]))
        slope = np.polyfit(np.log(ns), np.log(sups), 1)[0]
        assert slope == pytest.approx(-2.0, abs=0.05)


class TestPairing:
    def test_constant_field(self):
        lat = TorusLattice(2, 8)
        assert abs(pair_field(np.full(lat.shape, 3.7), TestFunction.cosine([1, 2]), lat)) < 1e-13

    def test_chi_quadrature_oracle(self):
        lat = TorusLattice(1, 8)
        chi = sample_chi(lat, 11).values
        u = TestFunction.parse("1:0.5,3:0.25j", 1)
        total = 0.0
        for x in range(8):
            q, _ = integrate.quad(lambda t: u(np.array([[t]]))[0], (x - 0.5) / 8, (x + 0.5) / 8, epsabs=1e-14)
            total += chi[x] * q
        expected = 4 * math.pi**2 * 8 ** (-1.5) * total
        assert pair_field(chi, u, lat) == pytest.approx(expected, abs=1e-8)

    def test_batch_axes(self):
        lat = TorusLattice(1, 8)
        h = np.random.default_rng(0).standard_normal((3, 2, 8))
        out = pair_field(h, SQRT2_COS, lat)
        assert out.shape == (3, 2)
        assert out[1, 1] == pytest.approx(pair_field(h[1, 1], SQRT2_COS, lat))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            exact_pairing_variance(SQRT2_COS, TorusLattice(2, 4))


class TestExactVariance:
    @pytest.mark.parametrize("d,n", [(1, 8), (1, 13), (2, 6)])
    def test_dense_oracle(self, d, n):
        lat = TorusLattice(d, n)
        u = SQRT2_COS if d == 1 else TestFunction.parse("1;1:1,2;-1:0.5j", 2)
        T = cell_average_T(u, lat).ravel()
        dense = 16 * math.pi**4 * n ** (d - 4) * T @ covariance_matrix(lat) @ T
        assert exact_pairing_variance(u, lat) == pytest.approx(dense, rel=1e-10)

    def test_converges_d1(self):
        vals = [exact_pairing_variance(SQRT2_COS, TorusLattice(1, n)) for n in (8, 16, 32, 64, 128)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert abs(vals[-1] - 1.0) <= 0.05
        assert vals[-1] == pytest.approx(1.0, abs=1e-3)

    def test_converges_d2(self):
        u = TestFunction.cosine([1, 1], 2.0)
        vals = [exact_pairing_variance(u, TorusLattice(2, n)) for n in (8, 16, 32, 64, 128)]
        assert abs(vals[-1] - 0.5) / 0.5 <= 0.05

    def test_scaling(self):
        lat = TorusLattice(1, 16)
        assert exact_pairing_variance(SQRT2_COS.scaled(2), lat) == pytest.approx(
            4 * exact_pairing_variance(SQRT2_COS, lat), rel=1e-13
        )

    def test_remainder_decreasing(self):
        ns = [8, 16, 32, 64, 128, 256]
        rv = [remainder_variance(SQRT2_COS, TorusLattice(1, n)) for n in ns]
        assert all(b < a for a, b in zip(rv, rv[1:]))
        assert all(r * n**2 <= rv[0] * ns[0] ** 2 for r, n in zip(rv, ns))


class TestMonteCarloPlumbing:
    def test_mode_agreement(self):
        lat = TorusLattice(1, 16)
        w = pairing_samples(SQRT2_COS, lat, 40, seed=4, mode="w")
        e = pairing_samples(SQRT2_COS, lat, 40, seed=4, mode="odometer")
        assert np.max(np.abs(w - e)) <= 1e-8

    def test_worker_and_chunk_independence(self):
        lat = TorusLattice(1, 16)
        a = pairing_samples(SQRT2_COS, lat, 30, seed=9, mode="odometer", workers=1, chunk=7)
        b = pairing_samples(SQRT2_COS, lat, 30, seed=9, mode="odometer", workers=2, chunk=30)
        assert a.tobytes() == b.tobytes()
        c = pairing_samples(SQRT2_COS, lat, 30, seed=9, mode="chi", chunk=4)
        d = pairing_samples(SQRT2_COS, lat, 30, seed=9, mode="chi", chunk=64)
        assert c.tobytes() == d.tobytes()

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            pairing_samples(SQRT2_COS, TorusLattice(1, 8), 3, mode="magic")
        with pytest.raises(ValueError):
            empirical_moment(SQRT2_COS, TorusLattice(1, 8), 0, 3)

    def test_moment_report(self):
        r = empirical_moment(SQRT2_COS, TorusLattice(1, 8), 2, 0, samples=np.array([1.0, -1.0, 2.0, -2.0]))
        assert r.mean == pytest.approx(2.5) and r.trials == 4
        assert isinstance(r, MomentReport) and r.within(2.5)


@pytest.mark.slow
class TestMonteCarlo:
    def test_three_way_variance(self):
        lat = TorusLattice(1, 8)
        exact = exact_pairing_variance(SQRT2_COS, lat)
        for mode in ("odometer", "chi"):
            r = empirical_moment(SQRT2_COS, lat, 2, 10**4, seed=21, mode=mode)
            assert r.within(exact), (mode, r.mean, r.se, exact)

    @pytest.mark.parametrize("kind", ["rademacher", "uniform"])
    def test_odd_moments_vanish(self, kind):
        lat = TorusLattice(1, 32)
        x = pairing_samples(SQRT2_COS, lat, 10**4, WeightDistribution.parse(kind), seed=5, mode="w")
        for m in (1, 3):
            assert empirical_moment(SQRT2_COS, lat, m, 0, samples=x).within(0.0)


class TestSobolev:
    def test_threshold(self):
        assert sobolev_threshold(1) == 1.25 and sobolev_threshold(4) == 2.0
        with pytest.raises(EpsilonTooSmall):
            sobolev_norm_field(np.zeros(8), TorusLattice(1, 8), 1.2)

    def test_zero(self):
        assert sobolev_norm_field(np.zeros(8), TorusLattice(1, 8), 1.5).value == 0.0

    def test_direct_oracle(self):
        lat = TorusLattice(1, 8)
        h = sample_chi(lat, 2).values
        M, eps = 16, 1.5
        total = 0.0
        for nu in range(-M, M + 1):
            if nu == 0:
                continue
            cell = math.sin(math.pi * nu / 8) / (math.pi * nu)
            xi_hat = sum(h[x] * np.exp(-2j * math.pi * nu * x / 8) for x in range(8)) * cell
            total += abs(4 * math.pi**2 * 8 ** (-1.5) * xi_hat) ** 2 / abs(nu) ** (2 * eps)
        assert sobolev_norm_field(h, lat, eps, cutoff=M).value == pytest.approx(total, rel=1e-12)

    @pytest.mark.parametrize("d,n,eps", [(1, 8, 1.5), (1, 32, 2.0), (2, 8, 1.6)])
    def test_tail_bound_honest(self, d, n, eps):
        lat = TorusLattice(d, n)
        h = sample_chi(lat, 3).values
        small = sobolev_norm_field(h, lat, eps, cutoff=n)
        big = sobolev_norm_field(h, lat, eps, cutoff=4 * n)
        assert 0 <= big.value - small.value <= small.tail_bound
        doubled = sobolev_norm_field(h, lat, eps, cutoff=2 * n)
        assert doubled.value - small.value <= small.tail_bound

    def test_cutoff_below_n(self):
        with pytest.raises(ValueError):
            sobolev_norm_field(np.zeros(8), TorusLattice(1, 8), 1.5, cutoff=4)
