"""
JSON configuration schemas for the command line.

Unknown keys are errors and every dimensional key carries its unit
(``*_khz``, ``*_ms``, ``*_tesla``, ``*_ang``). Values left out take the
defaults shown here.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Axis = Literal["X", "Y", "Z"]


class SystemConfig(_Strict):
    """Spin system: geometry file plus field and suppression.

    ``geometry_path`` is a tab-separated geometry table; ``None`` selects the
    packaged six-proton cluster.
    """

    geometry_path: Optional[str] = None
    field_tesla: float = Field(23.5, gt=0)
    field_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    alpha: float = Field(1.0, gt=0)
    j_couplings_khz: list[tuple[int, int, float]] = []

    def system_kwargs(self) -> dict:
        return {
            "field_tesla": self.field_tesla,
            "field_direction": self.field_direction,
            "alpha": self.alpha,
            "j_couplings": [list(j) for j in self.j_couplings_khz],
        }


class TimesConfig(_Strict):
    times_ms: Optional[list[float]] = None
    n_times: int = Field(21, ge=1)
    t_end_ms: float = Field(2.0, ge=0)

    def grid(self):
        import numpy as np

        if self.times_ms is not None:
            return np.asarray(self.times_ms, dtype=float)
        return np.linspace(0.0, self.t_end_ms, self.n_times)


class SynthConfig(_Strict):
    system: SystemConfig = SystemConfig(alpha=10.0)
    times: TimesConfig = TimesConfig()
    axes: list[Axis] = ["Z", "X"]
    pairs: Optional[list[tuple[int, int]]] = None
    sigma: float = Field(1e-3, gt=0)
    sigma_inject: float = Field(1e-3, ge=0)
    free_pairs: int = Field(6, ge=0)


class QuadratureConfig(_Strict):
    scheme: Literal["uniform-left", "uniform-midpoint", "gauss-legendre", "exact"] = "exact"
    L: int = Field(64, ge=1)
    tol: Optional[float] = Field(None, gt=0)
    L_max: int = Field(4096, ge=1)


class FitConfig(_Strict):
    algorithm: Literal["levenberg-marquardt", "conjugate-gradient"] = "levenberg-marquardt"
    g_tol: float = Field(1e-8, gt=0)
    f_tol: float = Field(1e-10, ge=0)
    max_iter: int = Field(100, ge=1)
    quadrature: QuadratureConfig = QuadratureConfig()
    query_noise: float = Field(0.0, ge=0)
    staged: bool = False
    delta_prior_khz: Optional[float] = Field(None, gt=0)
    schedule_c: float = Field(0.5, gt=0, lt=1)

    @model_validator(mode="after")
    def _staged_needs_delta(self):
        if self.staged and self.delta_prior_khz is None:
            raise ValueError("staged fits need delta_prior_khz")
        return self


class ClustersConfig(_Strict):
    system: SystemConfig = SystemConfig()
    thresholds_khz: list[float] = [10.0, 12.0, 14.0]
    weight_mode: Literal["orientation", "bare"] = "orientation"
    min_weight_khz: float = Field(0.0, ge=0)
    bins: int = Field(30, ge=1)

    @field_validator("thresholds_khz")
    @classmethod
    def _positive(cls, v):
        if not v or any(x <= 0 for x in v):
            raise ValueError("thresholds_khz must be a non-empty list of positive values")
        return v


class LearnabilityConfig(_Strict):
    sizes: list[int] = [5, 6, 7, 8, 9, 10]
    per_size: int = Field(20, ge=1)
    alphas: list[float] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 1000.0]
    entropy: bool = True
    hessian: bool = True
    hessian_sizes: list[int] = [5, 6, 7, 8]
    hessian_per_size: int = Field(20, ge=1)
    hessian_alphas: list[float] = [1.0, 100.0]
    n_times: int = Field(26, ge=2)
    t_end_ms: float = Field(5.0, gt=0)
    axes: list[Axis] = ["Z", "X"]
    sigma: float = Field(1.0, gt=0)
    cap: int = Field(10, ge=1)


class FTConfig(_Strict):
    n: int = Field(..., ge=1)
    n_d: int = Field(1, ge=1)
    n_omega: int = Field(0, ge=0)
    lambda_ind_khz: float = Field(..., ge=0)
    lambda_total_khz: float = Field(..., ge=0)
    lambda_int_khz: float = Field(..., ge=0)
    fourier: list[tuple[float, float, float]] = []
    trotter_exponent: float = Field(0.1, gt=0)
    eta: Optional[float] = Field(None, gt=0)


class ResourcesConfig(_Strict):
    epsilon: float = Field(..., gt=0)
    delta_fail: float = Field(..., gt=0, lt=1)
    sigma: float = Field(1.0, gt=0)
    n_x: int = Field(1, ge=1)
    times_ms: list[float] = []
    T_ms: Optional[float] = Field(None, gt=0)
    o_norm: float = Field(1.0, gt=0)
    sampling: Literal["sparse-log", "dense"] = "sparse-log"
    dt_ms: float = Field(1.0, gt=0)
    ft: Optional[FTConfig] = None

    @model_validator(mode="after")
    def _need_T(self):
        if not self.times_ms and self.T_ms is None:
            raise ValueError("give times_ms or T_ms")
        return self


SCHEMAS = {
    "synth": SynthConfig,
    "fit": FitConfig,
    "clusters": ClustersConfig,
    "learnability": LearnabilityConfig,
    "resources": ResourcesConfig,
}


def load_config(command: str, path: str | Path | None):
    """Validated config for ``command``; defaults when ``path`` is ``None``.

    Raises
    ------
    ConfigError
        Unreadable file, invalid JSON or schema violation.
    """
    schema = SCHEMAS[command]
    if path is None:
        try:
            return schema()
        except ValidationError as exc:
            raise ConfigError(f"{command} needs a config: {_first_error(exc)}") from exc
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        return schema.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"config {path}: {_first_error(exc)}") from exc


def _first_error(exc: ValidationError) -> str:
    errs = exc.errors()
    parts = []
    for e in errs[:3]:
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    more = f" (+{len(errs) - 3} more)" if len(errs) > 3 else ""
    return "; ".join(parts) + more
