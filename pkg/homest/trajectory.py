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
"""Homodyne measurement records from stochastic master equation trajectories."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from . import _kernels
from .errors import NumericalError, RecordError
from .qops import GROUND, SystemModel, vectorize

logger = logging.getLogger(__name__)

DT_WARN = 0.01
RECORD_SCHEMA = 1
INITIAL_STATES = ("steady", "ground")


@dataclass(frozen=True)
class RngSpec:
    """Counter-based Gaussian stream identified by (base_seed, stream_index)."""

    base_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        seed_seq = np.random.SeedSequence(self.base_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(seed_seq))

    def wiener_increments(self, n_steps: int, dt: float) -> np.ndarray:
        return self.generator().standard_normal(n_steps) * np.sqrt(dt)


@dataclass(frozen=True)
class MeasurementRecord:
    """Integrated homodyne current dy_i = J(t_i) dt over steps of length dt."""

    dt: float
    dy: np.ndarray = field(repr=False)
    seed: int
    stream_index: int
    theta_true: float
    fingerprint: str

    def __post_init__(self):
        if self.dt <= 0:
            raise RecordError(f"record step must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.dy)):
            raise RecordError("record contains non-finite increments")

    @property
    def n_steps(self) -> int:
        return int(self.dy.shape[0])

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def current(self) -> np.ndarray:
        """Homodyne current J = dy/dt."""
        return self.dy / self.dt

    def truncated(self, t: float) -> "MeasurementRecord":
        n = int(round(t / self.dt))
        if not 0 <= n <= self.n_steps:
            raise RecordError(f"time {t} outside record of duration {self.duration}")
        return MeasurementRecord(self.dt, self.dy[:n], self.seed, self.stream_index, self.theta_true, self.fingerprint)

    def coarsened(self, factor: int) -> "MeasurementRecord":
        """Sum increments over blocks of ``factor`` steps (a trailing partial block is dropped)."""
        if factor < 1:
            raise RecordError(f"coarsening factor must be >= 1, got {factor}")
        n_bins = self.n_steps // factor
        dy = self.dy[: n_bins * factor].reshape(n_bins, factor).sum(axis=1)
        return MeasurementRecord(self.dt * factor, dy, self.seed, self.stream_index, self.theta_true, self.fingerprint)

    def header(self) -> dict:
        return {
            "schema": RECORD_SCHEMA,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "stream_index": self.stream_index,
            "theta_true": self.theta_true,
            "fingerprint": self.fingerprint,
        }


@dataclass(frozen=True)
class Trajectory:
    record: MeasurementRecord
    states: np.ndarray | None
    state_stride: int
    clipped_fraction: float
    negative_fraction: float
    min_eigenvalue: float


def initial_state(model: SystemModel, theta: float, initial: str = "steady") -> np.ndarray:
    """Starting density matrix: the steady state of ``theta`` or the ground state |0><0|."""
    if initial == "steady":
        return model.steady_state(theta)
    if initial == "ground":
        if model.dim != 2:
            rho = np.zeros((model.dim, model.dim), dtype=complex)
            rho[0, 0] = 1.0
            return rho
        return GROUND.copy()
    raise ValueError(f"unknown initial state {initial!r} (expected one of {INITIAL_STATES})")


def step_count(T: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if T < dt:
        raise ValueError(f"duration T={T} shorter than the time step dt={dt}")
    if dt > DT_WARN:
        logger.warning(f"⚠️  dt={dt} exceeds {DT_WARN}/gamma; first-order discretization bias may be visible")
    return int(round(T / dt))


def simulate_homodyne(
    model: SystemModel,
    theta_true: float,
    T: float,
    dt: float,
    rng: RngSpec,
    keep_states: bool = False,
    state_stride: int = 1,
    initial: str = "steady",
) -> Trajectory:
    """Simulate one conditional trajectory and its homodyne record.

    Each step emits dy from the pre-update state, applies the completely
    positive measurement step (first-order equivalent to the Euler-Maruyama
    update of the conditional master equation), then symmetrizes, clips
    negative eigenvalues and renormalizes the state.
    """
    n_steps = step_count(T, dt)
    K = model.step_superops(theta_true, dt)
    X = model.measurement(theta_true)
    rho0 = vectorize(initial_state(model, theta_true, initial))
    noise = rng.wiener_increments(n_steps, dt)
    stride = max(int(state_stride), 1) if keep_states else 0

    dy, states, n_clipped, n_negative, worst, status = _kernels.sme_trajectory(
        K, X, rho0, noise, dt, np.sqrt(model.eta), model.dim, stride
    )
    if status != _kernels.STATUS_OK:
        raise NumericalError(
            f"trajectory (seed {rng.base_seed}, stream {rng.stream_index}) became non-finite; dt={dt} is too large"
        )
    if n_clipped:
        logger.debug(f"stream {rng.stream_index}: clipped {n_clipped}/{n_steps} steps, worst eigenvalue {worst:.2e}")

    record = MeasurementRecord(
        dt=dt,
        dy=dy,
        seed=rng.base_seed,
        stream_index=rng.stream_index,
        theta_true=float(theta_true),
        fingerprint=model.fingerprint(),
    )
    return Trajectory(
        record=record,
        states=states if keep_states else None,
        state_stride=stride,
        clipped_fraction=n_clipped / n_steps,
        negative_fraction=n_negative / n_steps,
        min_eigenvalue=float(worst),
    )


def default_workers() -> int:
    return os.cpu_count() or 1


def iter_ensemble(
    model: SystemModel,
    theta: float,
    T: float,
    dt: float,
    n_traj: int,
    base_seed: int,
    workers: int | None = None,
    initial: str = "steady",
    coarsen: int = 1,
) -> Iterator[MeasurementRecord]:
    """Yield the records of streams 0..n_traj-1 in order.

    Streams run on a thread pool in batches, so memory stays bounded;
    ``coarsen`` > 1 sums each record into bins of that many steps.
    """
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    workers = workers or default_workers()
    batch = max(4 * workers, 1)

    def run(index: int) -> MeasurementRecord:
        record = simulate_homodyne(model, theta, T, dt, RngSpec(base_seed, index), initial=initial).record
        return record.coarsened(coarsen) if coarsen > 1 else record

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, n_traj, batch):
            indices = range(start, min(start + batch, n_traj))
            yield from pool.map(run, indices)


def simulate_ensemble(
    model: SystemModel,
    theta: float,
    T: float,
    dt: float,
    n_traj: int,
    base_seed: int,
    workers: int | None = None,
    initial: str = "steady",
) -> list[MeasurementRecord]:
    """Records for streams 0..n_traj-1; identical for any worker count."""
    records = list(iter_ensemble(model, theta, T, dt, n_traj, base_seed, workers=workers, initial=initial))
    logger.info(f"✅ simulated {n_traj} trajectories (T={T}, dt={dt}, seed={base_seed})")
    return records


def write_record(path: str | Path, record: MeasurementRecord, fmt: str = "csv", config: dict | None = None) -> Path:
    """Write a record as CSV (header comments + step_index, dy) or binary.

    The binary layout is one JSON header line followed by n_steps
    little-endian float64 values.

    Args:
        path: Destination file.
        record: Record to write.
        fmt: ``csv`` or ``bin``.
        config: Resolved run configuration to embed, as a trailing
            ``# config=`` header line (CSV) or a ``config`` header key (binary).

    Returns:
        The path written.
    """
    path = Path(path)
    header = record.header()
    if fmt == "csv":
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(f"# schema={RECORD_SCHEMA}\n")
            for key, value in header.items():
                if key != "schema":
                    fh.write(f"# {key}={value!r}\n" if isinstance(value, float) else f"# {key}={value}\n")
            if config is not None:
                fh.write(f"# config={json.dumps(config, sort_keys=True)}\n")
            frame = pd.DataFrame({"step_index": np.arange(record.n_steps), "dy": record.dy})
            frame.to_csv(fh, index=False, float_format="%.17g")
    elif fmt == "bin":
        if config is not None:
            header["config"] = config
        with path.open("wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
            fh.write(np.asarray(record.dy, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown record format {fmt!r} (expected csv or bin)")
    return path


def read_record(path: str | Path) -> MeasurementRecord:
    """Load a record written by :func:`write_record`; the format is detected from the first byte."""
    path = Path(path)
    with path.open("rb") as fh:
        first = fh.readline()
        if first.startswith(b"{"):
            header = json.loads(first)
            dy = np.frombuffer(fh.read(), dtype="<f8").astype(float)
        else:
            header = {}
            for line in [first, *iter(fh.readline, b"")]:
                text = line.decode("utf-8")
                if not text.startswith("#"):
                    break
                key, _, value = text[1:].strip().partition("=")
                header[key] = value
            fh.seek(0)
            frame = pd.read_csv(fh, comment="#")
            dy = frame["dy"].to_numpy(dtype=float)
    try:
        record = MeasurementRecord(
            dt=float(header["dt"]),
            dy=dy,
            seed=int(header["seed"]),
            stream_index=int(header["stream_index"]),
            theta_true=float(header["theta_true"]),
            fingerprint=str(header["fingerprint"]),
        )
    except KeyError as exc:
        raise RecordError(f"{path}: record header is missing {exc}") from exc
    if record.n_steps != int(header["n_steps"]):
        raise RecordError(f"{path}: header declares {header['n_steps']} steps, found {record.n_steps}")
    return record
