"""1-D elliptic forward model ``-p'' + p = u`` on ``(0, pi)`` with ``p = 0`` at both ends.

Continuous piecewise-linear finite elements on a uniform mesh. The unknown
parameter ``u`` is represented by its values at the interior nodes, so the
parameter dimension is ``d = n_cells - 1``. Observations are point evaluations
of the solution by linear interpolation between nodes.

The prior covariance ``beta * (-d^2/dx^2)^{-1}`` has eigenpairs
``beta / j^2`` and ``sqrt(2/pi) sin(j x)``; sampled at the interior nodes these
sine vectors are exactly orthonormal for the mesh inner product
``h * sum_i f_i g_i`` as long as ``j < n_cells``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .core import Ensemble, LinearForwardModel

#: mesh width used by the default setup; pi / 2**-8 is not an integer
DEFAULT_MESH_WIDTH = 2.0**-8


def cells_for_mesh_width(h: float) -> int:
    """Smallest uniform cell count on ``(0, pi)`` whose width does not exceed ``h``."""
    return int(math.ceil(math.pi / h))


def default_obs_points(K: int = 15, spacing: float = 1.0 / 16) -> np.ndarray:
    """Equispaced points ``k * spacing`` for ``k = 1..K``."""
    return spacing * np.arange(1, K + 1, dtype=float)


@dataclass(frozen=True)
class FemModel:
    n_cells: int
    obs_points: np.ndarray
    h_mesh: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    # symmetric tridiagonal matrices in scipy "upper" banded storage, shape (2, d)
    stiffness_banded: np.ndarray = field(init=False, repr=False)
    mass_banded: np.ndarray = field(init=False, repr=False)
    system_banded: np.ndarray = field(init=False, repr=False)
    obs_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n_cells
        if not isinstance(n, (int, np.integer)) or n < 2:
            raise ValueError(f"n_cells must be an integer >= 2, got {n!r}")
        h = math.pi / n
        pts = np.array(self.obs_points, dtype=float).ravel()
        if pts.size == 0:
            raise ValueError("at least one observation point is required")
        if np.any(pts <= 0.0) or np.any(pts >= math.pi):
            raise ValueError("observation points must lie strictly inside (0, pi)")
        if np.any(np.diff(pts) <= 0.0):
            raise ValueError("observation points must be strictly increasing")
        d = n - 1
        stiff = np.empty((2, d))
        stiff[0, :] = -1.0 / h
        stiff[1, :] = 2.0 / h
        mass = np.empty((2, d))
        mass[0, :] = h / 6.0
        mass[1, :] = 2.0 * h / 3.0
        for name, value in (
            ("n_cells", int(n)),
            ("obs_points", pts),
            ("h_mesh", h),
            ("nodes", h * np.arange(n + 1)),
            ("stiffness_banded", stiff),
            ("mass_banded", mass),
            ("system_banded", stiff + mass),
            ("obs_matrix", _interpolation_matrix(pts, h, n)),
        ):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def d(self) -> int:
        return self.n_cells - 1

    @property
    def K(self) -> int:
        return self.obs_points.size

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]

    def system_matrix(self) -> np.ndarray:
        """Dense stiffness-plus-mass matrix (for inspection and tests)."""
        return _banded_to_dense(self.system_banded)

    def mass_matrix(self) -> np.ndarray:
        return _banded_to_dense(self.mass_banded)

    def stiffness_matrix(self) -> np.ndarray:
        return _banded_to_dense(self.stiffness_banded)

    def apply_mass(self, v: np.ndarray) -> np.ndarray:
        """Mass matrix times nodal columns ``v`` of shape ``(d,)`` or ``(d, m)``."""
        return _banded_matvec(self.mass_banded, v)

    def solve(self, u: np.ndarray) -> np.ndarray:
        """Interior nodal values of the FEM solution for load ``u`` (interior nodal values)."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.d:
            raise ValueError(f"load has {u.shape[0]} nodal values, mesh has {self.d} interior nodes")
        return scipy.linalg.solveh_banded(self.system_banded, self.apply_mass(u))

    def observe(self, p: np.ndarray) -> np.ndarray:
        """Evaluate interior nodal values ``p`` at the observation points."""
        p = np.asarray(p, dtype=float)
        if p.shape[0] != self.d:
            raise ValueError(f"p has {p.shape[0]} nodal values, mesh has {self.d} interior nodes")
        return self.obs_matrix @ p


def _interpolation_matrix(points: np.ndarray, h: float, n_cells: int) -> np.ndarray:
    """Rows of hat-function values at ``points``, restricted to interior nodes."""
    O = np.zeros((points.size, n_cells - 1))
    for k, x in enumerate(points):
        cell = min(int(x // h), n_cells - 1)
        w = x / h - cell
        # node i sits at column i - 1; boundary nodes carry p = 0
        if cell >= 1:
            O[k, cell - 1] += 1.0 - w
        if cell + 1 <= n_cells - 1:
            O[k, cell] += w
    return O


def _banded_to_dense(ab: np.ndarray) -> np.ndarray:
    return np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[0, 1:], -1)


def _banded_matvec(ab: np.ndarray, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = ab[1].reshape((-1,) + (1,) * (v.ndim - 1)) * v
    off = ab[0, 1:].reshape((-1,) + (1,) * (v.ndim - 1))
    out[:-1] += off * v[1:]
    out[1:] += off * v[:-1]
    return out


def assemble(n_cells: int, obs_points: Optional[Sequence[float]] = None) -> FemModel:
    """Build the FEM model; observation points default to ``k/16, k = 1..15``."""
    if obs_points is None:
        obs_points = default_obs_points()
    return FemModel(n_cells, np.asarray(obs_points, dtype=float))


def observe(model: FemModel, p: np.ndarray) -> np.ndarray:
    return model.observe(p)


def build_A(model: FemModel) -> np.ndarray:
    """Matrix of ``u -> observe(solve(u))``, shape ``(K, d)``.

    Uses symmetry of the system and mass matrices:
    ``A^T = M S^{-1} O^T`` needs only ``K`` banded solves.
    """
    X = scipy.linalg.solveh_banded(model.system_banded, model.obs_matrix.T)
    return np.ascontiguousarray(model.apply_mass(X).T)


def forward_model(model: FemModel, noise_std: float = 1.0) -> LinearForwardModel:
    """Linear inverse problem for the FEM map with ``Gamma = noise_std**2 I``."""
    return LinearForwardModel.with_isotropic_noise(build_A(model), noise_std)


@dataclass(frozen=True)
class KlPrior:
    """Leading eigenpairs of ``beta * (-d^2/dx^2)^{-1}`` sampled on the interior nodes."""

    beta: float
    modes: int
    eigvals: np.ndarray = field(repr=False)
    eigfuncs: np.ndarray = field(repr=False)  # (modes, d)

    def __post_init__(self):
        lam = np.asarray(self.eigvals, dtype=float)
        if lam.shape != (self.modes,) or self.eigfuncs.shape[0] != self.modes:
            raise ValueError("eigenpair arrays do not match the number of modes")
        if np.any(lam <= 0.0) or np.any(np.diff(lam) >= 0.0):
            raise ValueError("eigenvalues must be positive and strictly decreasing")

    @property
    def d(self) -> int:
        return self.eigfuncs.shape[1]


def kl_prior(model: FemModel, beta: float = 10.0, modes: Optional[int] = None) -> KlPrior:
    """Analytic eigenpairs ``beta / j^2`` and ``sqrt(2/pi) sin(j x)``, ``j = 1..modes``."""
    if modes is None:
        modes = model.d
    if not 1 <= modes <= model.d:
        raise ValueError(f"modes must lie in [1, {model.d}] for this mesh, got {modes}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    j = np.arange(1, modes + 1, dtype=float)
    z = math.sqrt(2.0 / math.pi) * np.sin(np.outer(j, model.interior_nodes))
    z.setflags(write=False)
    lam = beta / j**2
    lam.setflags(write=False)
    return KlPrior(float(beta), int(modes), lam, z)


def numerical_prior_spectrum(model: FemModel, beta: float = 10.0, modes: int = 10):
    """Leading eigenpairs of the discrete prior covariance ``beta * S^{-1} M``.

    Solves ``S v = mu M v`` for the smallest ``mu`` and returns
    ``(beta / mu, v)`` with ``v`` normalized in the mesh inner product.
    """
    S = model.stiffness_matrix()
    M = model.mass_matrix()
    mu, V = scipy.linalg.eigh(S, M, subset_by_index=[0, modes - 1])
    V = V / np.sqrt(model.h_mesh * np.sum(V**2, axis=0))
    return beta / mu, V.T


def mesh_gram(model: FemModel, funcs: np.ndarray) -> np.ndarray:
    """Gram matrix of nodal functions (rows) under ``h * sum_i f_i g_i``."""
    return model.h_mesh * funcs @ funcs.T


def kl_particles(prior: KlPrior, zeta: np.ndarray) -> np.ndarray:
    """Particle ``j`` is ``sqrt(lambda_j) zeta_j z_j`` (one mode per particle)."""
    zeta = np.asarray(zeta, dtype=float)
    J = zeta.shape[-1]
    if J > prior.modes:
        raise ValueError(f"J={J} particles need at least J modes, prior has {prior.modes}")
    coef = np.sqrt(prior.eigvals[:J]) * zeta
    return coef[..., :, None] * prior.eigfuncs[:J]


def kl_initial_ensemble(prior: KlPrior, J: int, rng: np.random.Generator) -> Ensemble:
    if J > prior.modes:
        raise ValueError(f"J={J} particles need at least J modes, prior has {prior.modes}")
    return Ensemble(kl_particles(prior, rng.standard_normal(J)))


def kl_draw(prior: KlPrior, rng: np.random.Generator) -> np.ndarray:
    """One draw from the truncated prior, ``sum_j sqrt(lambda_j) zeta_j z_j``."""
    zeta = rng.standard_normal(prior.modes)
    return (np.sqrt(prior.eigvals) * zeta) @ prior.eigfuncs
