"""Brute-force reference computations for the test suite.

Nothing here imports :mod:`ekinversion.dynamics`; each function is a plain
transcription of the formula it checks, written with explicit loops and
assembled matrices where that keeps it obviously correct.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .core import Ensemble, LinearForwardModel


def explicit_covariance(particles: np.ndarray) -> np.ndarray:
    """Assembled ``(1/J) sum_k (u_k - ubar)(u_k - ubar)^T`` by a loop over particles."""
    P = np.asarray(particles, dtype=float)
    J, d = P.shape
    ubar = np.zeros(d)
    for k in range(J):
        ubar += P[k]
    ubar /= J
    C = np.zeros((d, d))
    for k in range(J):
        e = P[k] - ubar
        C += np.outer(e, e)
    return C / J


def naive_cross_covariances(particles: np.ndarray, G_values: np.ndarray):
    """``(C^pp, C^up)`` as explicit sums of outer products."""
    P = np.asarray(particles, dtype=float)
    G = np.asarray(G_values, dtype=float)
    J = P.shape[0]
    ubar = sum(P[j] for j in range(J)) / J
    gbar = sum(G[j] for j in range(J)) / J
    Cpp = sum(np.outer(G[j] - gbar, G[j] - gbar) for j in range(J)) / J
    Cup = sum(np.outer(P[j] - ubar, G[j] - gbar) for j in range(J)) / J
    return Cpp, Cup


def kalman_gain(ens: Ensemble, model: LinearForwardModel, dt: float) -> np.ndarray:
    """``K_n = C^up (C^pp + Gamma/dt)^{-1}`` from assembled covariances."""
    G = np.array([model.A @ u for u in ens.particles])
    Cpp, Cup = naive_cross_covariances(ens.particles, G)
    return Cup @ np.linalg.inv(Cpp + model.Gamma / dt)


def kalman_mean_update(ens: Ensemble, model: LinearForwardModel, y, dt: float) -> np.ndarray:
    """Expected perturbed-observation update of every particle, shape ``(J, d)``.

    Row ``j`` is ``u_j + K_n (y - A u_j)``; the row average is
    ``ubar + K_n (y - Gbar)``.
    """
    Kn = kalman_gain(ens, model, dt)
    y = np.asarray(y, dtype=float)
    return np.array([u + Kn @ (y - model.A @ u) for u in ens.particles])


def lin_inner_product_step(particles, A, Gamma, y, dt, dW) -> np.ndarray:
    """One explicit step of the inner-product form of the linear SDE.

    ``u_j + (1/J) sum_k <A(u_k - ubar), (y - A u_j) dt + Gamma^{1/2} dW_j>_Gamma (u_k - ubar)``
    with ``<a, b>_Gamma = a^T Gamma^{-1} b`` and ``Gamma^{1/2}`` the lower Cholesky factor.
    """
    P = np.asarray(particles, dtype=float)
    J = P.shape[0]
    Ginv = np.linalg.inv(Gamma)
    root = np.linalg.cholesky(Gamma)
    ubar = P.mean(axis=0)
    out = P.copy()
    for j in range(J):
        forcing = (y - A @ P[j]) * dt + root @ dW[j]
        for k in range(J):
            e = P[k] - ubar
            out[j] += (A @ e) @ Ginv @ forcing * e / J
    return out


def nonneg_quadratic_form(z: np.ndarray, M: np.ndarray) -> float:
    """``sum_{k,l} <z_k, z_l> <z_k, M z_l>`` for rows ``z_k``; non-negative for PSD ``M``."""
    z = np.asarray(z, dtype=float)
    total = 0.0
    for k in range(z.shape[0]):
        for l in range(z.shape[0]):
            total += (z[k] @ z[l]) * (z[k] @ M @ z[l])
    return total


def _independent_centered_increments(J, K, dt, rng):
    dW = np.sqrt(dt) * rng.standard_normal((J, K))
    return dW - dW.sum(axis=0) / J


def noise_covariation_check(
    J: int,
    dt: float,
    n_samples: int,
    rng: np.random.Generator,
    u: Optional[np.ndarray] = None,
    v: Optional[np.ndarray] = None,
    sampler: Optional[Callable] = None,
):
    """Empirical covariation rates of ``<u, d(W_j - Wbar)> <v, d(W_l - Wbar)>`` per unit time.

    Targets are ``(J-1)/J <u, v>`` for ``j == l`` and ``-<u, v>/J`` otherwise.
    ``sampler(J, K, dt, rng)`` supplies the centered increments; by default they
    are built here from independent draws.

    Returns ``(diag_estimate, cross_estimate, (diag_se, cross_se))``.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 10^4")
    u = np.array([1.0]) if u is None else np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    K = u.size
    sampler = sampler or _independent_centered_increments
    diag = np.empty(n_samples)
    cross = np.empty(n_samples)
    off = ~np.eye(J, dtype=bool)
    for s in range(n_samples):
        inc = sampler(J, K, dt, rng)
        prod = np.outer(inc @ u, inc @ v) / dt
        diag[s] = np.trace(prod) / J
        cross[s] = prod[off].mean() if J > 1 else 0.0
    n = np.sqrt(n_samples)
    return diag.mean(), cross.mean(), (diag.std(ddof=1) / n, cross.std(ddof=1) / n)


def covariation_targets(J: int, u=None, v=None):
    u = np.array([1.0]) if u is None else np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    uv = float(u @ v)
    return (J - 1) / J * uv, -uv / J


def pnorm_sums(a: np.ndarray, p: float):
    """The four ensemble p-norm sums of a ``(d, J)`` array.

    Returns ``(col, entry, row)`` where ``col = sum_j (sum_m a^2)^{p/2}``,
    ``entry = sum_{m,j} |a|^p`` and ``row = sum_m (sum_j a^2)^{p/2}``.
    """
    a = np.asarray(a, dtype=float)
    col = np.sum(np.sum(a**2, axis=0) ** (p / 2))
    entry = np.sum(np.abs(a) ** p)
    row = np.sum(np.sum(a**2, axis=1) ** (p / 2))
    return col, entry, row


def pnorm_violations(a: np.ndarray, p: int, rtol: float = 1e-12) -> int:
    """Number of the four norm-equivalence inequalities that fail for ``a`` (shape ``(d, J)``)."""
    d, J = a.shape
    col, entry, row = pnorm_sums(a, p)
    cd = d ** ((p - 1) / 2)
    cJ = J ** (p / 2)
    checks = (
        (col, cd * entry),
        (entry, cJ * row),
        (row, cJ * entry),
        (entry, cd * col),
    )
    return sum(lhs > rhs * (1 + rtol) for lhs, rhs in checks)


def pnorm_equivalence_check(d: int, J: int, p: int, trials: int, rng: np.random.Generator) -> bool:
    """Check the four inequalities on random (dense and sparse) ``d x J`` arrays."""
    if p < 2 or int(p) != p:
        raise ValueError("p must be an integer >= 2")
    for t in range(trials):
        a = rng.standard_normal((d, J)) * rng.exponential(size=(d, J))
        if t % 3 == 1:
            a *= rng.random((d, J)) < 0.3
        if pnorm_violations(a, p):
            return False
    return True
