# Copyright 2025 Google LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Configuration for homest runs.

Environment-level knobs (worker count, log level) come from ``Settings``;
everything that determines a result lives in ``ExperimentConfig``, loaded
from YAML with ``key.path=value`` overrides on top.
"""

import logging
import os
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError
from .qops import SystemModel, qubit_model

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | int = "INFO") -> None:
    if isinstance(level, str):
        level = level.upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


class Settings(BaseSettings):
    """Environment settings; never affect computed values."""

    model_config = SettingsConfigDict(
        env_file=os.path.join(os.path.dirname(os.path.abspath(__file__)), "../.env"),
        env_prefix="HOMEST_",
        case_sensitive=True,
        extra="ignore",
    )
    WORKERS: int | None = Field(default=None, ge=1)
    LOG_LEVEL: str = Field(default="INFO")


def _strictly_increasing(values: list[float] | None, name: str) -> list[float] | None:
    if values is not None and len(values) > 1 and np.any(np.diff(values) <= 0):
        raise ValueError(f"{name} must be strictly increasing")
    return values


class ModelBlock(BaseModel):
    """Driven two-level emitter and detection channel."""

    model_config = ConfigDict(extra="forbid")

    param: Literal["omega", "delta", "gamma"] = "omega"
    theta: float = Field(default=2.0, description="true value of the unknown parameter")
    omega: float = 1.0
    delta: float = 0.0
    gamma: float = Field(default=1.0, gt=0)
    phi: float = Field(default=np.pi / 2, description="local oscillator phase (rad)")
    eta: float = Field(default=1.0, ge=0, le=1)

    def build(self, phi: float | None = None) -> SystemModel:
        return qubit_model(
            param=self.param,
            omega=self.omega,
            delta=self.delta,
            gamma=self.gamma,
            phi=self.phi if phi is None else phi,
            eta=self.eta,
        )


class SimulationBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T: float = Field(default=20.0, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    n_traj: int = Field(default=100, ge=1)
    base_seed: int = Field(default=0, ge=0)
    initial: Literal["steady", "ground"] = "steady"

    @model_validator(mode="after")
    def _duration_covers_step(self):
        if self.T < self.dt:
            raise ValueError(f"T={self.T} must be at least dt={self.dt}")
        return self


class AnalysisBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid_min: float = 0.0
    grid_max: float = 4.0
    grid_points: int = Field(default=201, ge=2)
    checkpoints: list[float] | None = None
    dtau: float = Field(default=0.05, gt=0, description="lag spacing of empirical correlations")
    n_lags: int = Field(default=40, ge=1)
    mean_subtract: bool = True
    dtheta: float = Field(default=1e-4, gt=0)
    tau_step: float = Field(default=1e-3, gt=0, description="lag spacing of correlation integrals")
    tau_max: float = Field(default=20.0, gt=0)
    omega_max: float = Field(default=60.0, gt=0)
    omega_points: int = Field(default=12001, ge=3)
    include_shot_floor: bool = False
    phis: list[float] = Field(default_factory=lambda: np.linspace(0.0, np.pi, 13).tolist())
    thetas: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    zeta_init: Literal["steady_derivative", "zero"] = "steady_derivative"

    @field_validator("checkpoints", "phis", "thetas")
    @classmethod
    def check_increasing(cls, value, info):
        return _strictly_increasing(value, info.field_name)

    @model_validator(mode="after")
    def _ranges(self):
        if self.grid_max <= self.grid_min:
            raise ValueError(f"grid_max={self.grid_max} must exceed grid_min={self.grid_min}")
        if self.tau_max <= self.tau_step:
            raise ValueError(f"tau_max={self.tau_max} must exceed tau_step={self.tau_step}")
        return self


class OutputBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str | None = None
    format: Literal["csv", "json"] = "csv"
    record_format: Literal["csv", "bin"] = "csv"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelBlock = Field(default_factory=ModelBlock)
    simulation: SimulationBlock = Field(default_factory=SimulationBlock)
    analysis: AnalysisBlock = Field(default_factory=AnalysisBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def _checkpoints_within_record(self):
        checkpoints = self.analysis.checkpoints
        if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] > self.simulation.T):
            raise ValueError(f"checkpoints must lie within [0, {self.simulation.T}]")
        return self

    def checkpoint_times(self, n: int = 11) -> np.ndarray:
        if self.analysis.checkpoints is not None:
            return np.asarray(self.analysis.checkpoints, dtype=float)
        return np.linspace(0.0, self.simulation.T, n)

    def resolved(self) -> dict:
        """Fully defaulted config as plain data; reparses to an equal config."""
        return self.model_dump(mode="json")


def apply_override(raw: dict, assignment: str) -> dict:
    """Set ``a.b.c=value`` in a nested dict; the value is parsed as a YAML scalar."""
    key, sep, text = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {assignment!r} is not of the form key.path=value")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value of override {assignment!r}: {exc}") from exc
    node = raw
    *parents, leaf = key.strip().split(".")
    for part in parents:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {assignment!r} descends into non-mapping key {part!r}")
        node = child
    node[leaf] = value
    return raw


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Config file, then overrides, then validation."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for assignment in overrides:
        apply_override(raw, assignment)
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    logger.debug(f"loaded config from {path or 'defaults'} with {len(overrides)} override(s)")
    return config


def dump_config(config: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        yaml.safe_dump(config.resolved(), fh, default_flow_style=False, sort_keys=False)
    return path
