"""Monitored quantities and closed-form ensemble collapse bounds.

Notation in docstrings: ``e_j = u_j - mean(u)``, ``r_j = u_j - u_truth`` and
their whitened observation-space images ``W e_j``, ``W r_j`` with
``W = Gamma^{-1/2} A``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DiagnosticsRecord, Ensemble, LinearForwardModel, ObservationSetup, deviations


class AssumptionError(ValueError):
    """The forward map is not injective on the ensemble span."""


def lyapunov_anchor(model: LinearForwardModel, y) -> np.ndarray:
    """Minimum-norm least-squares solution of ``W u = Gamma^{-1/2} y``.

    Singular values below ``1e-12 * sigma_max`` are discarded.
    """
    sol, *_ = np.linalg.lstsq(model.whitened_A, model.whiten(np.asarray(y, dtype=float)), rcond=1e-12)
    return sol


def diagnostic_arrays(
    U: np.ndarray,
    model: LinearForwardModel,
    p: float,
    anchor: np.ndarray,
    u_truth: Optional[np.ndarray] = None,
) -> dict:
    """All diagnostics for stacked ensembles ``(..., J, d)``.

    Returns a dict of arrays of shape ``U.shape[:-2]``; residual fields are NaN
    when ``u_truth`` is None.
    """
    W = model.whitened_A
    E = deviations(U)
    WE = E @ W.T
    obs_sq = np.sum(WE**2, axis=-1)
    par_sq = np.sum(E**2, axis=-1)
    ubar = U.mean(axis=-2)
    out = {
        "V_obs": obs_sq.mean(axis=-1),
        "V_param": par_sq.mean(axis=-1),
        "V_obs_p": (obs_sq ** (p / 2.0)).mean(axis=-1),
    }
    if u_truth is None:
        nan = np.full(U.shape[:-2], np.nan)
        out["R_obs"] = nan
        out["R_param"] = nan.copy()
    else:
        R = U - u_truth
        out["R_obs"] = np.sum((R @ W.T) ** 2, axis=-1).mean(axis=-1)
        out["R_param"] = np.sum(R**2, axis=-1).mean(axis=-1)
    out["V_lyap"] = out["V_param"] + np.sum((ubar - anchor) ** 2, axis=-1)
    return out


def record(
    ens: Ensemble,
    model: LinearForwardModel,
    setup: ObservationSetup,
    t: float,
    p: float = 2.0,
    anchor: Optional[np.ndarray] = None,
) -> DiagnosticsRecord:
    """Diagnostics of one ensemble; pass ``anchor`` to skip recomputing the Lyapunov anchor."""
    if p < 2:
        raise ValueError(f"moment order p must be >= 2, got {p}")
    if anchor is None:
        anchor = lyapunov_anchor(model, setup.y)
    vals = diagnostic_arrays(ens.particles, model, p, anchor, setup.u_truth)
    has_truth = setup.u_truth is not None
    return DiagnosticsRecord(
        t=float(t),
        V_obs=float(vals["V_obs"]),
        V_param=float(vals["V_param"]),
        V_obs_p=float(vals["V_obs_p"]),
        R_obs=float(vals["R_obs"]) if has_truth else None,
        R_param=float(vals["R_param"]) if has_truth else None,
        V_lyap=float(vals["V_lyap"]),
    )


# --- bounds ----------------------------------------------------------------------


def c_constant(p: float, J: int) -> float:
    """Drift constant of the p-th moment estimate.

    ``(p/J^2) (1 - (p-2+J)(J-1)/(2J^2) - (p-2)/(2J^2))``; equals ``(J+1)/J^3`` at p=2
    and vanishes at ``p = J + 3``. Integral ``p`` is evaluated in exact rational
    arithmetic, so the sign is exact and the result correctly rounded.
    """
    if float(p).is_integer():
        p, J = Fraction(int(p)), Fraction(int(J))
        J2 = J * J
        return float((p / J2) * (1 - (p - 2 + J) * (J - 1) / (2 * J2) - (p - 2) / (2 * J2)))
    J2 = J * J
    return (p / J2) * (1.0 - (p - 2 + J) * (J - 1) / (2.0 * J2) - (p - 2) / (2.0 * J2))


def bound_thm2(t, J: int, C0: float):
    """Second-moment collapse bound ``1 / ((J+1)/J^2 t + 1/C0)``."""
    if not C0 > 0:
        raise ValueError("C0 must be positive")
    return 1.0 / ((J + 1) / J**2 * np.asarray(t, dtype=float) + 1.0 / C0)


def admissible_p(p: float, J: int) -> bool:
    return 2.0 < p < (J + 3) / 2.0


def default_moment_order(J: int) -> int:
    """``floor((J+3)/2) - 1``, the moment order used for the higher-moment plots."""
    return (J + 3) // 2 - 1


def bound_thm3(t, p: float, J: int, K: int, V0: float):
    """Bound on ``E[(1/J) sum_j |W e_j|^p]`` for ``2 < p < (J+3)/2``.

    ``J^{p/2} / ((2/p) C(p,J) K^{-2/p} J^{1-2/p} t + (K^{(p-1)/2} V0)^{-2/p})^{p/2}``.
    """
    if not admissible_p(p, J):
        raise ValueError(f"p={p} outside the admissible range (2, {(J + 3) / 2}) for J={J}")
    if not V0 > 0:
        raise ValueError("V0 must be positive")
    rate = (2.0 / p) * c_constant(p, J) * K ** (-2.0 / p) * J ** (1.0 - 2.0 / p)
    base = rate * np.asarray(t, dtype=float) + (K ** ((p - 1) / 2.0) * V0) ** (-2.0 / p)
    return J ** (p / 2.0) / base ** (p / 2.0)


@dataclass(frozen=True)
class BoundCurve:
    """A collapse bound with its parameters frozen; call with ``t``."""

    kind: str
    J: int
    K: int
    p: float
    initial: float

    def __post_init__(self):
        if self.kind not in ("thm2_second_moment", "thm3_p_moment"):
            raise ValueError(f"unknown bound kind {self.kind!r}")
        if self.kind == "thm3_p_moment" and not admissible_p(self.p, self.J):
            raise ValueError(f"p={self.p} outside (2, {(self.J + 3) / 2})")

    def __call__(self, t):
        if self.kind == "thm2_second_moment":
            return bound_thm2(t, self.J, self.initial)
        return bound_thm3(t, self.p, self.J, self.K, self.initial)


# --- rates -----------------------------------------------------------------------


def rate_slope(times: Sequence[float], values: Sequence[float], window=None) -> float:
    """Least-squares slope of ``log(value)`` against ``log(t)`` over ``window = (t0, t1)``.

    The default window is the last decade ``[t_max / 10, t_max]``.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (t.max() / 10.0, t.max())
    t0, t1 = window
    mask = (t >= t0) & (t <= t1)
    if mask.sum() < 3:
        raise ValueError(f"need at least 3 points in window [{t0}, {t1}], got {mask.sum()}")
    if np.any(t[mask] <= 0) or np.any(~(v[mask] > 0)):
        raise ValueError("times and values must be positive on the fit window")
    slope, _ = np.polyfit(np.log(t[mask]), np.log(v[mask]), 1)
    return float(slope)


def sigma_min_transfer(model: LinearForwardModel, ens: Optional[Ensemble] = None, rtol: float = 1e-12) -> float:
    """Smallest eigenvalue of ``A^T Gamma^{-1} A`` restricted to the span of ``ens``.

    The restriction uses an orthonormal basis of the particle span; without an
    ensemble the whole parameter space is used. Raises :class:`AssumptionError`
    when the restriction is singular.
    """
    W = model.whitened_A
    if ens is not None:
        Q, Rf = np.linalg.qr(ens.particles.T)
        diag = np.abs(np.diag(Rf))
        Q = Q[:, diag > rtol * max(diag.max(), np.finfo(float).tiny)]
        W = W @ Q
    if W.shape[1] > W.shape[0]:
        raise AssumptionError(f"a {W.shape[1]}-dimensional span cannot map injectively into R^{W.shape[0]}")
    sv = np.linalg.svd(W, compute_uv=False)
    if sv.size == 0 or sv[-1] <= rtol * sv[0]:
        raise AssumptionError("A^T Gamma^{-1} A is singular on the ensemble span")
    return float(sv[-1] ** 2)


def is_nonincreasing(means, ses, k: float = 3.0) -> bool:
    """True when every increment ``m[i+1] - m[i]`` is at most ``k * max(se[i], se[i+1])``."""
    m = np.asarray(means, dtype=float)
    s = np.asarray(ses, dtype=float)
    tol = k * np.maximum(s[:-1], s[1:])
    return bool(np.all(np.diff(m) <= tol))


def largest_increase(means, ses) -> float:
    """Largest ``(m[i+1] - m[i]) / max(se[i], se[i+1])`` (in standard errors)."""
    m = np.asarray(means, dtype=float)
    s = np.maximum(np.asarray(ses, dtype=float)[:-1], np.asarray(ses, dtype=float)[1:])
    diff = np.diff(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, diff / s, np.where(diff > 0, np.inf, -np.inf))
    return float(z.max()) if z.size else -math.inf
