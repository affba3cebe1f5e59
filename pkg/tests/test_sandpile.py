import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from odolab.green import poisson_solve, spectral_odometer
from odolab.sandpile import (
    NonConvergence,
    SandpileConfig,
    WeightDistribution,
    draw_weights,
    init_configuration,
    parallel_topple_sweep,
    stabilize,
    stabilize_many,
)
from odolab.torus import TorusLattice


class TestWeights:
    def test_rademacher_support(self):
        lat = TorusLattice(2, 16)
        for seed in range(5):
            w = draw_weights(lat, WeightDistribution("rademacher"), seed)
            assert set(np.unique(w)) <= {-1.0, 1.0}

    def test_gaussian_mean_clt(self):
        lat = TorusLattice(2, 64)
        w = draw_weights(lat, WeightDistribution(), 7)
        assert abs(w.mean()) <= 4 / np.sqrt(lat.size)

    def test_uniform_unit_variance(self):
        w = draw_weights(TorusLattice(1, 200000), WeightDistribution("uniform"), 1)
        assert np.max(np.abs(w)) <= np.sqrt(3)
        assert abs(w.var() - 1.0) < 0.02

    def test_truncated(self):
        dist = WeightDistribution("truncated_gaussian", 1.5)
        w = draw_weights(TorusLattice(1, 200000), dist, 3)
        assert np.max(np.abs(w)) < 1.5
        assert abs(w.var() - dist.v_R) < 0.01
        # v_R for R = 3 from the truncated second moment
        assert WeightDistribution("truncated_gaussian", 3).v_R == pytest.approx(0.970709113465, abs=1e-11)

    def test_parse_roundtrip(self):
        for text in ["gaussian", "rademacher", "uniform", "truncated_gaussian:3"]:
            assert str(WeightDistribution.parse(text)) == text
        assert WeightDistribution.parse("truncated-gaussian:2.5").R == 2.5

    @pytest.mark.parametrize("text", ["cauchy", "gaussian:2", "truncated_gaussian", "truncated_gaussian:-1"])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            WeightDistribution.parse(text)

    def test_deterministic(self):
        lat = TorusLattice(2, 8)
        for kind in ["gaussian", "rademacher", "uniform", "truncated_gaussian:2"]:
            dist = WeightDistribution.parse(kind)
            a = draw_weights(lat, dist, (4, 2))
            b = draw_weights(lat, dist, (4, 2))
            assert a.tobytes() == b.tobytes()
            assert not np.array_equal(a, draw_weights(lat, dist, (4, 3)))


class TestInit:
    def test_examples(self):
        lat = TorusLattice(1, 4)
        assert np.all(init_configuration(np.zeros(4), lat).mass == 1)
        assert np.allclose(init_configuration(np.full(4, 7.0), lat).mass, 1)
        assert init_configuration(np.array([1.0, -1.0])).mass.tolist() == [2.0, 0.0]

    def test_total(self, rng):
        s = init_configuration(rng.standard_normal((6, 6)))
        assert s.total == pytest.approx(36.0, abs=1e-12)


class TestSweep:
    def test_stable(self):
        s = SandpileConfig(TorusLattice(2, 3), np.ones((3, 3)))
        new, emitted = parallel_topple_sweep(s)
        assert np.array_equal(new.mass, s.mass) and not emitted.any()

    def test_hand_simulation(self):
        new, emitted = parallel_topple_sweep(SandpileConfig(TorusLattice(1, 3), np.array([2.0, 0.5, 0.5])))
        assert emitted.tolist() == [1.0, 0.0, 0.0]
        assert new.mass.tolist() == [1.0, 1.0, 1.0]

    def test_n2_multiplicity(self):
        new, emitted = parallel_topple_sweep(SandpileConfig(TorusLattice(1, 2), np.array([2.0, 0.0])))
        assert emitted.tolist() == [1.0, 0.0]
        assert new.mass.tolist() == [1.0, 1.0]

    @given(st.integers(1, 2), st.integers(2, 12), st.integers(0, 2**31))
    def test_conservation_and_monotone(self, d, n, seed):
        lat = TorusLattice(d, n)
        s = init_configuration(np.random.default_rng(seed).standard_normal(lat.shape) * 2, lat)
        total = s.total
        odo = np.zeros(lat.shape)
        for _ in range(30):
            s, emitted = parallel_topple_sweep(s)
            assert np.all(emitted >= 0)  # odometer nondecreasing
            odo += emitted
            assert abs(s.total - total) <= 1e-12 * lat.size


class TestStabilize:
    def test_stable_input(self):
        res = stabilize(SandpileConfig(TorusLattice(2, 4), np.ones((4, 4))))
        assert res.sweeps == 0 and not res.odometer.e.any()

    def test_hand_example(self):
        res = stabilize(SandpileConfig(TorusLattice(1, 3), np.array([2.0, 0.5, 0.5])), tol=1e-12)
        assert res.odometer.raw.tolist() == [1.0, 0.0, 0.0]
        assert np.all(res.final.mass == 1.0)
        assert res.sweeps == 1

    def test_n4_cross_module(self):
        s = SandpileConfig(TorusLattice(1, 4), np.array([3.0, 1.0, 1.0, -1.0]))
        res = stabilize(s, tol=1e-13)
        assert np.max(np.abs(res.odometer.e - spectral_odometer(s).e)) <= 1e-8

    def test_nonconvergence(self):
        s = SandpileConfig(TorusLattice(1, 3), np.array([2.0, 0.5, 0.5]))
        with pytest.raises(NonConvergence) as info:
            stabilize(s, max_sweeps=0)
        assert info.value.residual == 1.0
        assert info.value.result.sweeps == 0

    def test_rejects_bad_tol(self):
        with pytest.raises(ValueError):
            stabilize(SandpileConfig(TorusLattice(1, 3), np.ones(3)), tol=0)

    @given(st.integers(1, 2), st.sampled_from([4, 8, 16, 32]), st.integers(0, 2**31))
    def test_matches_spectral(self, d, n, seed):
        lat = TorusLattice(d, n)
        s = init_configuration(draw_weights(lat, WeightDistribution(), seed), lat)
        tol = 1e-10
        res = stabilize(s, tol=tol)
        r = res.final.mass - 1.0
        # excess is cut at tol; the matching deficit is spread but bounded by the total
        assert r.max() <= tol
        assert -r.min() <= lat.size * tol
        # the odometer gap is exactly the Poisson response to the residual mass
        gap = res.odometer.e - spectral_odometer(s).e
        resid = gap - poisson_solve(lat.degree * r, lat)
        assert resid.max() - resid.min() <= 1e-9
        assert np.max(np.abs(gap)) <= 20 * lat.size * tol

    def test_batch_matches_single(self, rng):
        lat = TorusLattice(2, 8)
        masses = np.stack([init_configuration(rng.standard_normal(lat.shape), lat).mass for _ in range(4)])
        raw, sweeps, _ = stabilize_many(masses, lat, tol=1e-11)
        for k in range(4):
            single = stabilize(SandpileConfig(lat, masses[k]), tol=1e-11)
            assert sweeps[k] == single.sweeps
            assert np.array_equal(raw[k], single.odometer.raw)

    def test_batch_nonconvergence(self):
        lat = TorusLattice(1, 3)
        with pytest.raises(NonConvergence):
            stabilize_many(np.array([[2.0, 0.5, 0.5]]), lat, max_sweeps=0)

    def test_per_edge_solves_poisson(self, rng):
        from odolab.torus import discrete_laplacian

        lat = TorusLattice(2, 8)
        s = init_configuration(rng.standard_normal(lat.shape), lat)
        res = stabilize(s, tol=1e-13)
        assert np.max(np.abs(discrete_laplacian(res.odometer.per_edge) - (1 - s.mass))) < 1e-9
