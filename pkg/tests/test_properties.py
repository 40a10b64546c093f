import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ekinversion import oracles
from ekinversion.core import Ensemble, InflationSchedule, LinearForwardModel, cov_apply, cross_cov_pp
from ekinversion.diagnostics import admissible_p, bound_thm2, bound_thm3, c_constant
from ekinversion.dynamics import StepConfig, batched_step

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def ensembles(max_J=8, max_d=6):
    return st.tuples(st.integers(2, max_J), st.integers(1, max_d)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite)
    )


@given(ensembles())
def test_deviations_sum_to_zero(P):
    E = Ensemble(P).deviations()
    assert np.abs(E.sum(axis=0)).max() <= 1e-10 * P.shape[0] * max(np.abs(P).max(), 1e-300)


@given(ensembles(), st.data())
def test_cov_apply_matches_explicit(P, data):
    v = data.draw(arrays(np.float64, P.shape[1], elements=finite))
    ref = oracles.explicit_covariance(P) @ v
    scale = np.abs(P).max() ** 2 * max(np.abs(v).max(), 1.0) * P.shape[1] + 1e-300
    assert np.abs(cov_apply(Ensemble(P), v) - ref).max() <= 1e-12 * scale


@given(st.integers(2, 8), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_Cpp_psd(J, K, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((J, K)) * rng.exponential(size=(J, K))
    Cpp = cross_cov_pp(Ensemble(rng.standard_normal((J, 2))), G)
    assert np.array_equal(Cpp, Cpp.T)
    assert np.linalg.eigvalsh(Cpp)[0] >= -1e-10 * max(np.trace(Cpp), 1e-300)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_quadratic_form_nonnegative(n, d, seed):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((d, d))
    M = R @ R.T
    z = rng.standard_normal((n, d))
    scale = np.sum(z**2) ** 2 * np.trace(M)
    assert oracles.nonneg_quadratic_form(z, M) >= -1e-10 * scale


@given(st.integers(1, 6), st.integers(1, 6), st.integers(2, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_pnorm_equivalence(d, J, p, seed):
    assert oracles.pnorm_equivalence_check(d, J, p, 20, np.random.default_rng(seed))


@pytest.mark.parametrize("J", range(2, 26))
def test_c_constant_sign(J):
    for p in range(2, 31):
        c = c_constant(p, J)
        assert abs(c - p * (J + 3 - p) / (2 * J**3)) <= 1e-14
        assert (c > 0) == (p < J + 3)


@given(st.integers(2, 40), st.floats(1e-3, 1e3))
def test_bound_thm2_positive_nonincreasing(J, C0):
    t = np.linspace(0, 1e4, 400)
    b = bound_thm2(t, J, C0)
    assert np.all(b > 0) and np.all(np.diff(b) <= 0)


@given(st.integers(2, 40), st.integers(1, 30), st.floats(1e-3, 1e3), st.floats(0.01, 0.99))
def test_bound_thm3_positive_nonincreasing(J, K, V0, frac):
    p = 2 + frac * ((J + 3) / 2 - 2)
    if not admissible_p(p, J):
        return
    t = np.linspace(0, 1e4, 400)
    b = bound_thm3(t, p, J, K, V0)
    assert np.all(b > 0) and np.all(np.diff(b) <= 0)
    assert b[0] >= V0


@given(
    st.sampled_from(["discrete_eki", "sde_linear", "sde_linear_inflated", "sde_nonlinear"]),
    st.integers(2, 6),
    st.integers(0, 2**32 - 1),
)
def test_consensus_is_fixed_point_without_misfit(scheme, J, seed):
    rng = np.random.default_rng(seed)
    d, K = 3, 2
    A = rng.standard_normal((K, d))
    model = LinearForwardModel(A, np.eye(K))
    u = rng.standard_normal(d)
    U = np.tile(u, (J, 1))
    sched = InflationSchedule.scaled_identity(0.5, 1.0, d) if scheme == "sde_linear_inflated" else None
    # zero spread kills every covariance term; inflation still relaxes unless y = A u
    y = A @ u if sched is not None else rng.standard_normal(K)
    out = batched_step(U, model, y, 1.0, StepConfig(0.1, scheme, sched), rng.standard_normal((J, K)))
    if sched is None:
        assert np.array_equal(out, U)
    else:
        # residual y - A u vanishes only up to rounding
        assert np.allclose(out, U, rtol=1e-12, atol=1e-12)


@given(st.sampled_from(["discrete_eki", "sde_linear", "sde_nonlinear"]), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_subspace_property(scheme, seed):
    rng = np.random.default_rng(seed)
    J, d, K = 3, 8, 4
    model = LinearForwardModel(rng.standard_normal((K, d)), np.eye(K))
    U0 = rng.standard_normal((J, d))
    Q, _ = np.linalg.qr(U0.T)
    U = U0.copy()
    y = model.apply(U0.T @ rng.standard_normal(J))
    cfg = StepConfig(0.01, scheme)
    for n in range(100):
        U = batched_step(U, model, y, n * 0.01, cfg, rng.standard_normal((J, K)))
    resid = U - (U @ Q) @ Q.T
    assert np.all(np.linalg.norm(resid, axis=1) <= 1e-8 * np.linalg.norm(U, axis=1))
