"""Domain types and empirical covariance algebra.

Particles are stored row-wise: an ensemble of ``J`` particles in ``R^d`` is a
``(J, d)`` array. Covariances are never assembled; they are applied through the
deviation arrays, so the cost stays linear in ``d`` even when ``d >> J``.
All covariances use the ``1/J`` normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg


class DimensionError(ValueError):
    """Raised when array shapes do not agree."""


@dataclass(frozen=True)
class Ensemble:
    """A set of ``J >= 2`` particles in parameter space, shape ``(J, d)``."""

    particles: np.ndarray

    def __post_init__(self):
        arr = np.array(self.particles, dtype=float)
        if arr.ndim != 2:
            raise DimensionError(f"particles must be 2-D (J, d), got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError(f"an ensemble needs J >= 2 particles, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ensemble contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "particles", arr)

    @property
    def J(self) -> int:
        return self.particles.shape[0]

    @property
    def d(self) -> int:
        return self.particles.shape[1]

    def mean(self) -> np.ndarray:
        return empirical_mean(self)

    def deviations(self) -> np.ndarray:
        """Rows ``u^(j) - mean``."""
        return self.particles - empirical_mean(self)


@dataclass(frozen=True)
class LinearForwardModel:
    """Linear forward map ``A`` (K x d) with SPD noise covariance ``Gamma`` (K x K).

    ``Gamma`` is factorized once as ``L L^T``. Whitening uses ``L^{-1}``; this
    square root is not the symmetric one, but every quantity built from it
    (weighted norms, ``A^T Gamma^{-1} A``, Gaussian noise laws) is identical.
    """

    A: np.ndarray
    Gamma: np.ndarray
    Gamma_chol: np.ndarray = field(init=False, repr=False)
    whitened_A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        Gamma = np.atleast_2d(np.array(self.Gamma, dtype=float))
        K, d = A.shape
        if K < 1 or d < 1:
            raise DimensionError("A must have K >= 1 rows and d >= 1 columns")
        if Gamma.shape != (K, K):
            raise DimensionError(f"Gamma must be {K}x{K}, got {Gamma.shape}")
        scale = max(np.max(np.abs(Gamma)), np.finfo(float).tiny)
        if np.max(np.abs(Gamma - Gamma.T)) > 1e-12 * scale:
            raise ValueError("Gamma is not symmetric")
        try:
            L = np.linalg.cholesky(Gamma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Gamma is not positive definite") from exc
        for name, arr in (("A", A), ("Gamma", Gamma), ("Gamma_chol", L)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        W = scipy.linalg.solve_triangular(L, A, lower=True)
        W.setflags(write=False)
        object.__setattr__(self, "whitened_A", W)

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``A u`` for a vector or row-stacked vectors ``(..., d)``."""
        return np.asarray(u) @ self.A.T

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """``Gamma^{-1/2} v`` for observation-space rows ``(..., K)``."""
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, self.K).T
        out = scipy.linalg.solve_triangular(self.Gamma_chol, flat, lower=True)
        return out.T.reshape(v.shape)

    def gamma_norm(self, v: np.ndarray) -> float:
        """Weighted norm ``|Gamma^{-1/2} v|``."""
        return float(np.linalg.norm(self.whiten(v)))

    @classmethod
    def with_isotropic_noise(cls, A: np.ndarray, noise_std: float = 1.0) -> "LinearForwardModel":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(A, noise_std**2 * np.eye(A.shape[0]))


@dataclass(frozen=True)
class ObservationSetup:
    """Data ``y`` with an optional ground truth ``u_truth``."""

    y: np.ndarray
    u_truth: Optional[np.ndarray] = None
    noise_free: bool = False

    def __post_init__(self):
        y = np.atleast_1d(np.array(self.y, dtype=float))
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if self.u_truth is not None:
            ut = np.atleast_1d(np.array(self.u_truth, dtype=float))
            ut.setflags(write=False)
            object.__setattr__(self, "u_truth", ut)

    def check_consistent(self, model: LinearForwardModel) -> None:
        if self.y.shape != (model.K,):
            raise DimensionError(f"y has shape {self.y.shape}, expected ({model.K},)")
        if self.u_truth is None:
            return
        if self.u_truth.shape != (model.d,):
            raise DimensionError(f"u_truth has shape {self.u_truth.shape}, expected ({model.d},)")
        if self.noise_free:
            gap = np.linalg.norm(self.y - model.apply(self.u_truth))
            if gap > 1e-10 * np.linalg.norm(self.y):
                raise ValueError(f"noise_free data does not match A u_truth (gap {gap:.3e})")

    @classmethod
    def from_truth(cls, model: LinearForwardModel, u_truth: np.ndarray) -> "ObservationSetup":
        u_truth = np.asarray(u_truth, dtype=float)
        return cls(model.apply(u_truth), u_truth, noise_free=True)


@dataclass(frozen=True)
class InflationSchedule:
    """Time-decaying covariance inflation ``B / (t**alpha + R)``."""

    alpha: float
    R: float
    B: np.ndarray
    lambda_min_B: float = field(init=False)
    # B == scale * I, or None; lets large-d drift terms skip a d x d product
    identity_scale: Optional[float] = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.R > 0.0:
            raise ValueError(f"R must be positive, got {self.R}")
        B = np.atleast_2d(np.array(self.B, dtype=float))
        if B.shape[0] != B.shape[1]:
            raise DimensionError(f"B must be square, got {B.shape}")
        if not np.array_equal(B, B.T):
            raise ValueError("B must be symmetric")
        lam = float(np.linalg.eigvalsh(B)[0]) if B.size else 0.0
        if lam < -1e-12 * max(1.0, np.max(np.abs(B))):
            raise ValueError(f"B must be positive semidefinite (smallest eigenvalue {lam:.3e})")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "lambda_min_B", max(lam, 0.0))
        diag = B[0, 0]
        scale = float(diag) if np.array_equal(B, diag * np.eye(B.shape[0])) else None
        object.__setattr__(self, "identity_scale", scale)

    @classmethod
    def scaled_identity(cls, alpha: float, R: float, d: int, scale: float = 1.0) -> "InflationSchedule":
        return cls(alpha, R, scale * np.eye(d))

    def factor(self, t: float) -> float:
        """``1 / (t**alpha + R)``."""
        return 1.0 / (t**self.alpha + self.R)

    def apply_B(self, v: np.ndarray) -> np.ndarray:
        """``B v`` for rows ``(..., d)``."""
        if self.identity_scale is not None:
            return self.identity_scale * v
        return v @ self.B


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Monitored quantities of one ensemble at time ``t``.

    Residual fields are ``None`` when no ground truth is known.
    """

    t: float
    V_obs: float
    V_param: float
    V_obs_p: float
    R_obs: Optional[float]
    R_param: Optional[float]
    V_lyap: float

    FIELDS = ("V_obs", "V_param", "V_obs_p", "R_obs", "R_param", "V_lyap")


def _particles(ens) -> np.ndarray:
    return ens.particles if isinstance(ens, Ensemble) else np.asarray(ens, dtype=float)


def empirical_mean(ens) -> np.ndarray:
    return _particles(ens).mean(axis=-2)


def deviations(arr: np.ndarray) -> np.ndarray:
    """Subtract the mean over the particle axis (``-2``)."""
    return arr - arr.mean(axis=-2, keepdims=True)


def cov_apply(ens, v: np.ndarray) -> np.ndarray:
    """``C(u) v = (1/J) sum_k e_k <e_k, v>`` without forming ``C(u)``."""
    E = deviations(_particles(ens))
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != E.shape[-1]:
        raise DimensionError(f"vector has length {v.shape[-1]}, ensemble has d={E.shape[-1]}")
    return (E @ v) @ E / E.shape[-2]


def cross_cov_pp(ens, G_values: np.ndarray) -> np.ndarray:
    """``C^pp = (1/J) sum_j (G_j - Gbar) (G_j - Gbar)^T``, shape ``(K, K)``."""
    P = _particles(ens)
    G = np.asarray(G_values, dtype=float)
    if G.ndim != 2 or G.shape[0] != P.shape[0]:
        raise DimensionError(f"G_values must be ({P.shape[0]}, K), got {G.shape}")
    Eg = deviations(G)
    return Eg.T @ Eg / G.shape[0]


def cross_cov_up(ens, G_values: np.ndarray) -> np.ndarray:
    """``C^up = (1/J) sum_j (u_j - ubar) (G_j - Gbar)^T``, shape ``(d, K)``.

    ``C^pu`` is its transpose.
    """
    P = _particles(ens)
    G = np.asarray(G_values, dtype=float)
    if G.ndim != 2 or G.shape[0] != P.shape[0]:
        raise DimensionError(f"G_values must be ({P.shape[0]}, K), got {G.shape}")
    return deviations(P).T @ deviations(G) / P.shape[0]


def misfit(model: LinearForwardModel, y: np.ndarray, u: np.ndarray) -> float:
    """Least-squares misfit ``0.5 |Gamma^{-1/2} (y - A u)|^2``."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != (model.d,) or y.shape != (model.K,):
        raise DimensionError("misfit: dimensions of y or u do not match the model")
    r = model.whiten(y - model.apply(u))
    return 0.5 * float(r @ r)
