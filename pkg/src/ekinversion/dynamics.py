"""Particle update rules.

Every step comes in two layers. The ``*_kernel`` functions act on raw arrays
of shape ``(..., J, d)`` with pre-drawn standard normal noise of shape
``(..., J, K)``; leading axes are independent ensembles, which is how the Monte
Carlo driver advances many paths at once. The public ``*_step`` functions wrap
a kernel for a single :class:`~ekinversion.core.Ensemble` and draw the noise
from a generator.

Noise convention: one call draws ``standard_normal((J, K))`` from the
generator, row ``j`` belonging to particle ``j``. All schemes consume the
stream identically, so two schemes driven by the same generator see the same
Gaussian increments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import DimensionError, Ensemble, InflationSchedule, LinearForwardModel, deviations

SCHEMES = ("discrete_eki", "sde_linear", "sde_linear_inflated", "sde_nonlinear")


class NumericalError(RuntimeError):
    """A step produced non-finite values or an unsolvable gain system."""


@dataclass(frozen=True)
class StepConfig:
    dt: float
    scheme: str = "discrete_eki"
    inflation: Optional[InflationSchedule] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if (self.inflation is not None) != (self.scheme == "sde_linear_inflated"):
            raise ValueError("an inflation schedule is required by, and only by, sde_linear_inflated")


def draw_noise(rng: np.random.Generator, J: int, K: int) -> np.ndarray:
    """Standard normal increments for one step, shape ``(J, K)``."""
    return rng.standard_normal((J, K))


def _check_finite(U: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(U)):
        raise NumericalError(f"{what}: non-finite values in the updated ensemble")
    return U


def _cholesky_with_jitter(S: np.ndarray) -> np.ndarray:
    """Batched Cholesky; slices that fail get one retry with ``1e-12 * trace`` jitter."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    flat = S.reshape((-1,) + S.shape[-2:])
    out = np.empty_like(flat)
    eye = np.eye(S.shape[-1])
    for i, Si in enumerate(flat):
        try:
            out[i] = np.linalg.cholesky(Si)
        except np.linalg.LinAlgError:
            try:
                out[i] = np.linalg.cholesky(Si + 1e-12 * np.trace(Si) * eye)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("gain system C^pp + Gamma/dt is not positive definite") from exc
    return out.reshape(S.shape)


# --- kernels -------------------------------------------------------------------


def eki_discrete_kernel(U, G, model: LinearForwardModel, y, dt, z):
    """Perturbed-observation EKI update.

    ``u_j + C^up (C^pp + Gamma/dt)^{-1} (y + xi_j - G_j)`` with
    ``xi_j = L z_j / sqrt(dt)``, ``Gamma = L L^T``.
    """
    J = U.shape[-2]
    Eu = deviations(U)
    Eg = deviations(G)
    Cpp = np.swapaxes(Eg, -1, -2) @ Eg / J
    L = _cholesky_with_jitter(Cpp + model.Gamma / dt)
    xi = (z @ model.Gamma_chol.T) / np.sqrt(dt)
    innov = np.swapaxes(y + xi - G, -1, -2)  # (..., K, J)
    X = np.linalg.solve(np.swapaxes(L, -1, -2), np.linalg.solve(L, innov))
    coeff = Eg @ X  # (..., J_k, J_j): <g_k - gbar, x_j>
    return U + np.swapaxes(coeff, -1, -2) @ Eu / J


def _whitened_increment(Eu, WG, wy, dt, z):
    """``(1/J) sum_k e_k <wg_k - wgbar, (wy - wg_j) dt + sqrt(dt) z_j>``.

    Shared by the linear and nonlinear continuous-time schemes; ``WG`` holds
    whitened forward evaluations ``Gamma^{-1/2} G(u_j)``.
    """
    J = Eu.shape[-2]
    Ew = deviations(WG)
    forcing = (wy - WG) * dt + np.sqrt(dt) * z
    coeff = Ew @ np.swapaxes(forcing, -1, -2)
    return np.swapaxes(coeff, -1, -2) @ Eu / J


def sde_linear_kernel(U, model: LinearForwardModel, y, dt, z):
    """Euler-Maruyama step of ``du = C A^T G^-1 (y - Au) dt + C A^T G^-1/2 dW``."""
    WG = U @ model.whitened_A.T
    wy = model.whiten(y)
    return U + _whitened_increment(deviations(U), WG, wy, dt, z)


def sde_inflated_kernel(U, model: LinearForwardModel, y, t, dt, schedule: InflationSchedule, z):
    """Linear step plus the drift ``B/(t^alpha + R) A^T Gamma^{-1} (y - A u_j)``.

    The inflation factor is evaluated at the left endpoint ``t``; noise is not inflated.
    """
    WG = U @ model.whitened_A.T
    wy = model.whiten(y)
    step = _whitened_increment(deviations(U), WG, wy, dt, z)
    grad = (wy - WG) @ model.whitened_A  # A^T Gamma^{-1} (y - A u_j)
    return U + step + (schedule.factor(t) * dt) * schedule.apply_B(grad)


def sde_nonlinear_kernel(U, G, model: LinearForwardModel, y, dt, z):
    """Euler-Maruyama step of the coupled SDE for a general forward map.

    ``G`` holds precomputed forward evaluations; only ``model.Gamma`` is used.
    """
    WG = model.whiten(G)
    wy = model.whiten(y)
    return U + _whitened_increment(deviations(U), WG, wy, dt, z)


# --- single-ensemble steps -------------------------------------------------------


def _prepare(ens: Ensemble, model: LinearForwardModel, y):
    if ens.d != model.d:
        raise DimensionError(f"ensemble has d={ens.d}, model expects d={model.d}")
    y = np.asarray(y, dtype=float)
    if y.shape != (model.K,):
        raise DimensionError(f"y has shape {y.shape}, expected ({model.K},)")
    return ens.particles, y


def eki_discrete_step(ens: Ensemble, model: LinearForwardModel, y, dt: float, rng, z=None) -> Ensemble:
    U, y = _prepare(ens, model, y)
    if z is None:
        z = draw_noise(rng, ens.J, model.K)
    out = eki_discrete_kernel(U, model.apply(U), model, y, dt, z)
    return Ensemble(_check_finite(out, "eki_discrete_step"))


def sde_linear_step(ens: Ensemble, model: LinearForwardModel, y, dt: float, rng, z=None) -> Ensemble:
    U, y = _prepare(ens, model, y)
    if z is None:
        z = draw_noise(rng, ens.J, model.K)
    return Ensemble(_check_finite(sde_linear_kernel(U, model, y, dt, z), "sde_linear_step"))


def sde_inflated_step(
    ens: Ensemble, model: LinearForwardModel, y, t: float, dt: float, schedule: InflationSchedule, rng, z=None
) -> Ensemble:
    U, y = _prepare(ens, model, y)
    if t < 0:
        raise ValueError("t must be non-negative")
    if schedule.B.shape != (model.d, model.d):
        raise DimensionError(f"B must be {model.d}x{model.d}, got {schedule.B.shape}")
    if z is None:
        z = draw_noise(rng, ens.J, model.K)
    out = sde_inflated_kernel(U, model, y, t, dt, schedule, z)
    return Ensemble(_check_finite(out, "sde_inflated_step"))


def sde_nonlinear_step(
    ens: Ensemble, G: Callable[[np.ndarray], np.ndarray], Gamma, y, dt: float, rng, z=None
) -> Ensemble:
    """Exploratory nonlinear scheme; carries no convergence guarantee."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    K = y.shape[0]
    values = np.stack([np.asarray(G(u), dtype=float) for u in ens.particles])
    if values.shape != (ens.J, K):
        raise DimensionError(f"G must return vectors of length {K}, got shape {values.shape[1:]}")
    if not np.all(np.isfinite(values)):
        raise NumericalError("G returned non-finite values")
    # A is only a placeholder here: the kernel reads Gamma alone
    model = LinearForwardModel(np.zeros((K, 1)), Gamma)
    if z is None:
        z = draw_noise(rng, ens.J, K)
    out = sde_nonlinear_kernel(ens.particles, values, model, y, dt, z)
    return Ensemble(_check_finite(out, "sde_nonlinear_step"))


def step(ens: Ensemble, model: LinearForwardModel, y, t: float, config: StepConfig, rng) -> Ensemble:
    """Dispatch one step of ``config.scheme`` (the nonlinear scheme uses ``G = A``)."""
    if config.scheme == "discrete_eki":
        return eki_discrete_step(ens, model, y, config.dt, rng)
    if config.scheme == "sde_linear":
        return sde_linear_step(ens, model, y, config.dt, rng)
    if config.scheme == "sde_linear_inflated":
        return sde_inflated_step(ens, model, y, t, config.dt, config.inflation, rng)
    return sde_nonlinear_step(ens, model.apply, model.Gamma, y, config.dt, rng)


def batched_step(U, model: LinearForwardModel, y, t: float, config: StepConfig, z) -> np.ndarray:
    """Advance stacked ensembles ``(..., J, d)`` with pre-drawn noise ``(..., J, K)``."""
    if config.scheme == "discrete_eki":
        return eki_discrete_kernel(U, U @ model.A.T, model, y, config.dt, z)
    if config.scheme == "sde_linear":
        return sde_linear_kernel(U, model, y, config.dt, z)
    if config.scheme == "sde_linear_inflated":
        return sde_inflated_kernel(U, model, y, t, config.dt, config.inflation, z)
    return sde_nonlinear_kernel(U, U @ model.A.T, model, y, config.dt, z)


def correlated_increments(J: int, K: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Increments of ``W_j - mean_k W_k`` from ``J`` independent ``N(0, dt I_K)`` draws."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    dW = np.sqrt(dt) * rng.standard_normal((J, K))
    return dW - dW.mean(axis=0, keepdims=True)
