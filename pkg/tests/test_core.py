import numpy as np
import pytest

from ekinversion import oracles
from ekinversion.core import (
    DimensionError,
    Ensemble,
    InflationSchedule,
    LinearForwardModel,
    ObservationSetup,
    cov_apply,
    cross_cov_pp,
    cross_cov_up,
    deviations,
    empirical_mean,
    misfit,
)

from conftest import random_spd


class TestEnsemble:
    def test_requires_two_particles(self):
        with pytest.raises(ValueError):
            Ensemble(np.zeros((1, 3)))

    def test_rejects_non_finite(self):
        P = np.zeros((3, 2))
        P[1, 0] = np.nan
        with pytest.raises(ValueError):
            Ensemble(P)

    def test_rejects_wrong_rank(self):
        with pytest.raises(DimensionError):
            Ensemble(np.zeros(4))

    def test_is_read_only_copy(self):
        P = np.ones((2, 3))
        ens = Ensemble(P)
        P[0, 0] = 5.0
        assert ens.particles[0, 0] == 1.0
        with pytest.raises(ValueError):
            ens.particles[0, 0] = 2.0

    def test_shape_properties(self):
        ens = Ensemble(np.zeros((4, 7)))
        assert (ens.J, ens.d) == (4, 7)


class TestEmpiricalMean:
    def test_identical_particles(self):
        v = np.array([1.5, -2.0, 3.0])
        assert np.array_equal(empirical_mean(Ensemble(np.tile(v, (4, 1)))), v)

    def test_pair(self):
        assert np.allclose(empirical_mean(Ensemble([[0, 0], [2, 4]])), [1, 2])

    def test_matches_naive_loop(self, rng):
        P = rng.standard_normal((5, 3))
        naive = [sum(P[j, m] for j in range(5)) / 5 for m in range(3)]
        assert np.allclose(empirical_mean(Ensemble(P)), naive, rtol=1e-14)

    def test_deviations_sum_to_zero(self, rng):
        P = 1e3 * rng.standard_normal((9, 6))
        E = Ensemble(P).deviations()
        assert np.abs(E.sum(axis=0)).max() <= 1e-10 * 9 * np.abs(P).max()

    def test_batched_deviations(self, rng):
        U = rng.standard_normal((3, 4, 2))
        for b in range(3):
            assert np.allclose(deviations(U)[b], Ensemble(U[b]).deviations())


class TestCovariance:
    def test_zero_spread(self):
        ens = Ensemble(np.tile([1.0, 2.0, 3.0], (3, 1)))
        assert np.array_equal(cov_apply(ens, np.ones(3)), np.zeros(3))

    def test_symmetric_pair(self):
        w = np.array([1.0, -2.0, 0.5])
        ens = Ensemble(np.stack([-w, w]))
        assert np.allclose(cov_apply(ens, w), (w @ w) * w)

    def test_matches_explicit_matrix(self, rng):
        for _ in range(10):
            P = rng.standard_normal((6, 4))
            v = rng.standard_normal(4)
            ref = oracles.explicit_covariance(P) @ v
            assert np.allclose(cov_apply(Ensemble(P), v), ref, rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            cov_apply(Ensemble(rng.standard_normal((3, 4))), np.ones(5))

    def test_cross_covariances_constant_G(self, rng):
        ens = Ensemble(rng.standard_normal((4, 3)))
        G = np.tile([1.0, 2.0], (4, 1))
        assert np.array_equal(cross_cov_pp(ens, G), np.zeros((2, 2)))
        assert np.array_equal(cross_cov_up(ens, G), np.zeros((3, 2)))

    def test_identity_map_reduces_to_C(self, rng):
        P = rng.standard_normal((5, 3))
        C = oracles.explicit_covariance(P)
        assert np.allclose(cross_cov_pp(Ensemble(P), P), C)
        assert np.allclose(cross_cov_up(Ensemble(P), P), C)

    def test_cross_covariances_match_naive(self, rng):
        P = rng.standard_normal((5, 4))
        G = rng.standard_normal((5, 3))
        Cpp, Cup = oracles.naive_cross_covariances(P, G)
        assert np.allclose(cross_cov_pp(Ensemble(P), G), Cpp)
        assert np.allclose(cross_cov_up(Ensemble(P), G), Cup)

    def test_Cpp_symmetric_psd(self, rng):
        G = rng.standard_normal((4, 6))  # rank deficient: J < K
        Cpp = cross_cov_pp(Ensemble(rng.standard_normal((4, 2))), G)
        assert np.array_equal(Cpp, Cpp.T)
        assert np.linalg.eigvalsh(Cpp)[0] >= -1e-10 * np.trace(Cpp)

    def test_cross_cov_shape_check(self, rng):
        with pytest.raises(DimensionError):
            cross_cov_pp(Ensemble(rng.standard_normal((4, 2))), np.ones((3, 2)))


class TestLinearForwardModel:
    def test_rejects_asymmetric_gamma(self):
        with pytest.raises(ValueError, match="symmetric"):
            LinearForwardModel(np.eye(2), np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_indefinite_gamma(self):
        with pytest.raises(ValueError, match="positive definite"):
            LinearForwardModel(np.eye(2), np.diag([1.0, -1.0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DimensionError):
            LinearForwardModel(np.ones((2, 3)), np.eye(3))

    def test_cholesky_factor(self, rng):
        G = random_spd(rng, 4)
        model = LinearForwardModel(rng.standard_normal((4, 2)), G)
        L = model.Gamma_chol
        assert np.allclose(L @ L.T, G)
        assert np.allclose(np.triu(L, 1), 0)

    def test_whitening_gives_gamma_inverse(self, rng):
        G = random_spd(rng, 3)
        A = rng.standard_normal((3, 5))
        model = LinearForwardModel(A, G)
        W = model.whitened_A
        assert np.allclose(W.T @ W, A.T @ np.linalg.solve(G, A))
        v = rng.standard_normal(3)
        assert np.isclose(model.gamma_norm(v) ** 2, v @ np.linalg.solve(G, v))

    def test_batched_whiten(self, rng):
        model = LinearForwardModel(np.eye(3), random_spd(rng, 3))
        V = rng.standard_normal((2, 4, 3))
        assert np.allclose(model.whiten(V)[1, 2], model.whiten(V[1, 2]))


class TestMisfit:
    def test_exact_fit(self, rng):
        A = rng.standard_normal((2, 3))
        u = rng.standard_normal(3)
        model = LinearForwardModel(A, np.eye(2))
        assert misfit(model, A @ u, u) == pytest.approx(0.0, abs=1e-28)

    def test_half_norm(self):
        model = LinearForwardModel(np.eye(2), np.eye(2))
        assert misfit(model, np.array([1.0, 0.0]), np.zeros(2)) == 0.5

    def test_direct_solve(self, rng):
        G = random_spd(rng, 3)
        A = rng.standard_normal((3, 4))
        y, u = rng.standard_normal(3), rng.standard_normal(4)
        r = y - A @ u
        assert misfit(LinearForwardModel(A, G), y, u) == pytest.approx(0.5 * r @ np.linalg.solve(G, r), rel=1e-12)


class TestObservationSetup:
    def test_from_truth_is_consistent(self, rng):
        model = LinearForwardModel(rng.standard_normal((3, 4)), np.eye(3))
        setup = ObservationSetup.from_truth(model, rng.standard_normal(4))
        setup.check_consistent(model)
        assert setup.noise_free

    def test_noise_free_mismatch(self, rng):
        model = LinearForwardModel(np.eye(2), np.eye(2))
        setup = ObservationSetup(np.array([1.0, 1.0]), np.array([1.0, 0.0]), noise_free=True)
        with pytest.raises(ValueError):
            setup.check_consistent(model)

    def test_shape_mismatch(self):
        model = LinearForwardModel(np.eye(2), np.eye(2))
        with pytest.raises(DimensionError):
            ObservationSetup(np.ones(3)).check_consistent(model)


class TestInflationSchedule:
    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            InflationSchedule(alpha, 1.0, np.eye(2))

    def test_R_positive(self):
        with pytest.raises(ValueError):
            InflationSchedule(0.5, 0.0, np.eye(2))

    def test_B_psd(self):
        with pytest.raises(ValueError):
            InflationSchedule(0.5, 1.0, np.diag([1.0, -1.0]))
        with pytest.raises(ValueError):
            InflationSchedule(0.5, 1.0, np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_lambda_min_and_factor(self):
        s = InflationSchedule(0.5, 1.0, np.diag([3.0, 2.0]))
        assert s.lambda_min_B == pytest.approx(2.0)
        assert s.factor(4.0) == pytest.approx(1 / 3)
        assert s.factor(0.0) == 1.0

    def test_identity_fast_path_matches_dense(self, rng):
        v = rng.standard_normal((3, 4))
        fast = InflationSchedule.scaled_identity(0.5, 1.0, 4, 2.5)
        assert fast.identity_scale == 2.5
        assert np.allclose(fast.apply_B(v), v @ (2.5 * np.eye(4)))
        general = InflationSchedule(0.5, 1.0, np.diag([1.0, 2.0, 3.0, 4.0]))
        assert general.identity_scale is None
        assert np.allclose(general.apply_B(v), v * [1, 2, 3, 4])
