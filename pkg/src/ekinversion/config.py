"""Experiment configuration, loaded from a single JSON document.

Unknown keys are rejected so that a typo in an experiment file fails loudly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .diagnostics import admissible_p, default_moment_order

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "ValidationError"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ForwardConfig(_Strict):
    n_cells: int = Field(805, ge=2, description="805 = ceil(pi / 2**-8) uniform cells")
    K: int = Field(15, ge=1)
    obs_spacing: float = Field(1.0 / 16, gt=0, description="points k * obs_spacing, k = 1..K")
    obs_points: Optional[List[float]] = Field(None, description="explicit points; overrides K/obs_spacing")
    noise_std: float = Field(1.0, gt=0, description="Gamma = noise_std**2 * I")

    def points(self) -> List[float]:
        if self.obs_points is not None:
            return list(self.obs_points)
        return [self.obs_spacing * k for k in range(1, self.K + 1)]


class PriorConfig(_Strict):
    beta: float = Field(10.0, gt=0)
    modes: Optional[int] = Field(None, ge=1, description="default: every interior mesh mode")


class InflationConfig(_Strict):
    alpha: float = Field(0.5, gt=0, lt=1)
    R: float = Field(1.0, gt=0)
    B_scale: float = Field(1.0, ge=0, description="B = B_scale * I")
    B_metric: Literal["l2", "euclidean"] = Field(
        "l2", description="identity on L2(0, pi) (nodal 1/h * I) or on nodal coordinates"
    )

    def nodal_scale(self, h_mesh: float) -> float:
        return self.B_scale / h_mesh if self.B_metric == "l2" else self.B_scale


class ExperimentConfig(_Strict):
    scheme: Literal["discrete_eki", "sde_linear", "sde_linear_inflated", "sde_nonlinear"] = "discrete_eki"
    dt: float = Field(0.01, gt=0)
    T: float = Field(10.0, gt=0)
    J: int = Field(5, ge=2)
    Q: int = Field(1000, ge=1)
    base_seed: int = Field(0, ge=0)
    p: Optional[float] = Field(None, ge=2, description="default: floor((J+3)/2) - 1")
    checkpoint_every: Optional[float] = Field(0.1, gt=0)
    checkpoints: Optional[List[float]] = None
    truth_mode: Literal["synthetic_truth", "given_data"] = "synthetic_truth"
    data: Optional[List[float]] = None
    fix_initial_ensemble: bool = False
    forward: ForwardConfig = ForwardConfig()
    prior: PriorConfig = PriorConfig()
    inflation: Optional[InflationConfig] = None
    extra_alphas: List[float] = Field(default_factory=list, description="additional inflated arms")
    rate_window: Optional[Tuple[float, float]] = Field(None, description="default: [T/10, T]")

    @model_validator(mode="after")
    def _consistent(self):
        if (self.scheme == "sde_linear_inflated") and self.inflation is None:
            raise ValueError("scheme sde_linear_inflated needs an 'inflation' block")
        if self.truth_mode == "given_data":
            if self.data is None:
                raise ValueError("truth_mode given_data needs 'data'")
            if len(self.data) != len(self.forward.points()):
                raise ValueError(f"'data' must have {len(self.forward.points())} entries")
        elif self.data is not None:
            raise ValueError("'data' is only allowed with truth_mode given_data")
        modes = self.prior.modes if self.prior.modes is not None else self.forward.n_cells - 1
        if modes > self.forward.n_cells - 1:
            raise ValueError(f"prior.modes may not exceed n_cells - 1 = {self.forward.n_cells - 1}")
        if self.J > modes:
            raise ValueError(f"J={self.J} exceeds the {modes} available prior modes")
        pts = self.forward.points()
        if any(not 0 < x < math.pi for x in pts) or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("observation points must be strictly increasing inside (0, pi)")
        if self.checkpoints is not None:
            c = self.checkpoints
            if any(b <= a for a, b in zip(c, c[1:])) or c[0] < 0 or c[-1] > self.T + 1e-12:
                raise ValueError("checkpoints must be sorted, distinct and inside [0, T]")
        elif self.checkpoint_every is None:
            raise ValueError("set either 'checkpoints' or 'checkpoint_every'")
        for a in self.extra_alphas:
            if not 0 < a < 1:
                raise ValueError(f"extra_alphas entries must lie in (0, 1), got {a}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def moment_order(self) -> float:
        return self.p if self.p is not None else float(default_moment_order(self.J))

    @property
    def p_admissible(self) -> bool:
        return admissible_p(self.moment_order, self.J)

    @property
    def prior_modes(self) -> int:
        return self.prior.modes if self.prior.modes is not None else self.forward.n_cells - 1

    def checkpoint_steps(self) -> List[int]:
        """Step indices of the checkpoints (each must fall on the ``dt`` grid)."""
        if self.checkpoints is not None:
            times = list(self.checkpoints)
        else:
            n = int(math.floor(self.T / self.checkpoint_every + 1e-9))
            times = [k * self.checkpoint_every for k in range(n + 1)]
        steps = []
        for t in times:
            s = int(round(t / self.dt))
            if abs(s * self.dt - t) > 1e-9 * max(1.0, abs(t)):
                raise ConfigError(f"checkpoint {t} is not a multiple of dt={self.dt}")
            steps.append(s)
        if steps[-1] > self.n_steps:
            raise ConfigError("checkpoints extend past T")
        return steps

    def window(self) -> Tuple[float, float]:
        return tuple(self.rate_window) if self.rate_window is not None else (self.T / 10.0, self.T)

    def with_updates(self, **changes) -> "ExperimentConfig":
        data = self.model_dump()
        _deep_update(data, changes)
        return parse_config(data)


def _deep_update(base: dict, changes: dict) -> None:
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None
    cfg.checkpoint_steps()
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON experiment file.

    Raises ``OSError`` when the file cannot be read and :class:`ConfigError`
    for malformed JSON or invalid fields.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data)
