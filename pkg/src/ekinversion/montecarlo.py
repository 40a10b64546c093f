"""Independent Monte Carlo paths of an experiment, aggregated into moment summaries.

Each path ``i`` draws from its own counter-based stream
``Philox(SeedSequence(base_seed, spawn_key=(1, i)))``, so a path's trajectory
does not depend on how many paths run, in which order, or on how many
workers. Paths are advanced in fixed-size chunks (independent of the worker
count) and aggregated in path-index order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .config import ExperimentConfig, InflationConfig
from .core import InflationSchedule, LinearForwardModel, ObservationSetup
from .diagnostics import diagnostic_arrays, lyapunov_anchor
from .dynamics import StepConfig, batched_step
from .forward import FemModel, KlPrior, assemble, forward_model, kl_draw, kl_particles, kl_prior

FIELDS = ("V_obs", "V_param", "V_obs_p", "R_obs", "R_param", "V_lyap")
CHUNK = 25

_TRUTH_KEY = 0
_PATH_KEY = 1
_SHARED_ENSEMBLE_KEY = 2


class NumericalAbort(RuntimeError):
    """A path produced non-finite values; carries where and what was last seen."""

    def __init__(self, path: int, step: int, snapshot: dict):
        self.path = path
        self.step = step
        self.snapshot = snapshot
        super().__init__(f"path {path} became non-finite at step {step}; last diagnostics {snapshot}")


def stream(base_seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(base_seed, spawn_key=key)))


def path_stream(base_seed: int, i: int) -> np.random.Generator:
    return stream(base_seed, _PATH_KEY, i)


@dataclass(frozen=True)
class Problem:
    """Everything shared by all paths of one experiment."""

    fem: FemModel
    model: LinearForwardModel
    prior: KlPrior
    setup: ObservationSetup
    step: StepConfig
    anchor: np.ndarray
    shared_zeta: Optional[np.ndarray]


def build_problem(config: ExperimentConfig) -> Problem:
    fem = assemble(config.forward.n_cells, config.forward.points())
    model = forward_model(fem, config.forward.noise_std)
    prior = kl_prior(fem, config.prior.beta, config.prior_modes)
    if config.truth_mode == "synthetic_truth":
        u_truth = kl_draw(prior, stream(config.base_seed, _TRUTH_KEY))
        setup = ObservationSetup.from_truth(model, u_truth)
    else:
        setup = ObservationSetup(np.asarray(config.data, dtype=float))
    setup.check_consistent(model)
    inflation = None
    if config.scheme == "sde_linear_inflated":
        inf = config.inflation
        inflation = InflationSchedule.scaled_identity(inf.alpha, inf.R, model.d, inf.nodal_scale(fem.h_mesh))
    shared = None
    if config.fix_initial_ensemble:
        shared = stream(config.base_seed, _SHARED_ENSEMBLE_KEY).standard_normal(config.J)
    return Problem(
        fem=fem,
        model=model,
        prior=prior,
        setup=setup,
        step=StepConfig(config.dt, config.scheme, inflation),
        anchor=lyapunov_anchor(model, setup.y),
        shared_zeta=shared,
    )


@dataclass
class MomentSummary:
    """Across-path mean and standard error of each diagnostic at each checkpoint."""

    times: np.ndarray
    mean: Dict[str, np.ndarray]
    se: Dict[str, np.ndarray]
    Q_effective: int

    @classmethod
    def from_paths(cls, times, per_path: Dict[str, np.ndarray]) -> "MomentSummary":
        Q = next(iter(per_path.values())).shape[0]
        mean, se = {}, {}
        for name, vals in per_path.items():
            mean[name] = vals.mean(axis=0)
            if Q > 1:
                se[name] = vals.std(axis=0, ddof=1) / np.sqrt(Q)
            else:
                se[name] = np.zeros_like(mean[name])
        return cls(np.asarray(times, dtype=float), mean, se, Q)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem: Problem
    times: np.ndarray
    per_path: Dict[str, np.ndarray]  # field -> (Q, n_checkpoints)
    final_means: np.ndarray  # (Q, d) ensemble means at T
    summary: MomentSummary = field(init=False)

    def __post_init__(self):
        self.summary = MomentSummary.from_paths(self.times, self.per_path)


def _initial_particles(problem: Problem, config: ExperimentConfig, gen: np.random.Generator) -> np.ndarray:
    if problem.shared_zeta is not None:
        zeta = problem.shared_zeta
    else:
        zeta = gen.standard_normal(config.J)
    return kl_particles(problem.prior, zeta)


def _run_chunk(problem: Problem, config: ExperimentConfig, first: int, last: int):
    gens = [path_stream(config.base_seed, i) for i in range(first, last)]
    U = np.stack([_initial_particles(problem, config, g) for g in gens])
    ckpt = config.checkpoint_steps()
    ckpt_pos = {s: k for k, s in enumerate(ckpt)}
    out = {name: np.empty((last - first, len(ckpt))) for name in FIELDS}
    p = config.moment_order
    model, y, dt = problem.model, problem.setup.y, config.dt
    J, K = config.J, model.K
    last_seen: dict = {}

    def snapshot(step):
        with np.errstate(over="ignore", invalid="ignore"):
            vals = diagnostic_arrays(U, model, p, problem.anchor, problem.setup.u_truth)
        if step in ckpt_pos:
            for name in FIELDS:
                out[name][:, ckpt_pos[step]] = vals[name]
        return vals

    last_seen = snapshot(0)
    for n in range(ckpt[-1]):
        z = np.stack([g.standard_normal((J, K)) for g in gens])
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                U_next = batched_step(U, model, y, n * dt, problem.step, z)
            bad = ~np.all(np.isfinite(U_next), axis=(-2, -1))
        except (np.linalg.LinAlgError, RuntimeError):
            bad = np.ones(U.shape[0], dtype=bool)
        if bad.any():
            i = int(np.argmax(bad))
            snap = {name: float(vals[i]) for name, vals in last_seen.items()}
            raise NumericalAbort(first + i, n + 1, snap)
        U = U_next
        if (n + 1) in ckpt_pos:
            last_seen = snapshot(n + 1)
    return out, U.mean(axis=-2)


def default_workers() -> int:
    return os.cpu_count() or 1


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """Run ``config.Q`` paths and aggregate diagnostics at the checkpoints.

    Raises :class:`NumericalAbort` if any path blows up; no path is silently dropped.
    """
    problem = build_problem(config)
    workers = workers or default_workers()
    bounds = [(a, min(a + CHUNK, config.Q)) for a in range(0, config.Q, CHUNK)]
    if workers == 1 or len(bounds) == 1:
        results = [_run_chunk(problem, config, a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda ab: _run_chunk(problem, config, *ab), bounds))
    per_path = {name: np.concatenate([r[0][name] for r in results]) for name in FIELDS}
    final_means = np.concatenate([r[1] for r in results])
    times = np.asarray(config.checkpoint_steps(), dtype=float) * config.dt
    return ExperimentResult(config, problem, times, per_path, final_means)


def run_arms(config: ExperimentConfig, alphas: List[float], workers: Optional[int] = None):
    """Matched runs sharing every random stream: one without inflation, one per ``alpha``.

    Returns ``{"none": result, "alpha=0.5": result, ...}``.
    """
    base = config.inflation or InflationConfig()
    arms = {"none": run_experiment(config.with_updates(scheme="sde_linear", inflation=None), workers)}
    for a in alphas:
        inf = dict(base.model_dump(), alpha=a)
        arms[f"alpha={a:g}"] = run_experiment(
            config.with_updates(scheme="sde_linear_inflated", inflation=inf), workers
        )
    return arms
