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
"""Parameter inference from homodyne records.

Likelihoods come from the linear (un-normalized) filter, propagated for all
grid candidates over a shared record and kept in the log domain. The Fisher
information of the full record is estimated by co-integrating the
conditional state with the score operator zeta, whose trace is the
derivative of the log-likelihood.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from . import _kernels
from .correlations import CorrelationEstimate, expected_correlation, fisher_mean_signal, fisher_two_time
from .errors import DimensionError, NumericalError, RecordError
from .qops import SystemModel, mean_signal, step_derivative, vectorize
from .trajectory import MeasurementRecord, RngSpec, default_workers, initial_state, step_count

logger = logging.getLogger(__name__)

DEFAULT_DTHETA = 1e-4
ZETA_INITS = ("steady_derivative", "zero")


@dataclass(frozen=True)
class ParameterGrid:
    """Candidate values with prior log-weights, normalized on construction."""

    values: np.ndarray
    log_prior: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        log_prior = np.asarray(self.log_prior, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("parameter grid needs at least two values")
        if np.any(np.diff(values) <= 0):
            raise ValueError("parameter grid must be strictly increasing")
        if log_prior.shape != values.shape:
            raise DimensionError(f"prior has shape {log_prior.shape}, grid has {values.shape}")
        total = logsumexp(log_prior)
        if not np.isfinite(total):
            raise NumericalError("prior is not normalizable")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "log_prior", log_prior - total)

    @classmethod
    def uniform(cls, lower: float, upper: float, n: int) -> "ParameterGrid":
        return cls(np.linspace(lower, upper, n), np.zeros(n))

    @property
    def size(self) -> int:
        return self.values.size


def _fwhm(values: np.ndarray, p: np.ndarray) -> float:
    k = int(np.argmax(p))
    half = 0.5 * p[k]
    left = values[0]
    for i in range(k, 0, -1):
        if p[i - 1] < half:
            left = np.interp(half, [p[i - 1], p[i]], [values[i - 1], values[i]])
            break
    right = values[-1]
    for i in range(k, values.size - 1):
        if p[i + 1] < half:
            right = np.interp(half, [p[i + 1], p[i]], [values[i + 1], values[i]])
            break
    return float(right - left)


@dataclass(frozen=True)
class PosteriorTrace:
    times: np.ndarray
    grid: ParameterGrid
    log_posterior: np.ndarray

    def posterior(self) -> np.ndarray:
        return np.exp(self.log_posterior)

    @property
    def map_path(self) -> np.ndarray:
        return self.grid.values[np.argmax(self.log_posterior, axis=1)]

    @property
    def fwhm_path(self) -> np.ndarray:
        return np.array([_fwhm(self.grid.values, p) for p in self.posterior()])

    def to_frame(self) -> pd.DataFrame:
        T, Th = np.meshgrid(self.times, self.grid.values, indexing="ij")
        return pd.DataFrame({"time": T.ravel(), "theta": Th.ravel(), "posterior": self.posterior().ravel()})


def posterior_statistics(trace: PosteriorTrace) -> pd.DataFrame:
    """Mean, standard deviation, MAP and FWHM of the posterior at each checkpoint."""
    p = trace.posterior()
    values = trace.grid.values
    mean = p @ values
    var = p @ values**2 - mean**2
    return pd.DataFrame(
        {
            "time": trace.times,
            "mean": mean,
            "std": np.sqrt(np.clip(var, 0.0, None)),
            "map": trace.map_path,
            "fwhm": trace.fwhm_path,
        }
    )


def _checkpoint_steps(record: MeasurementRecord, checkpoints: Sequence[float] | None) -> np.ndarray:
    if checkpoints is None:
        return np.array([record.n_steps], dtype=np.int64)
    times = np.asarray(checkpoints, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("checkpoints must be sorted")
    steps = np.rint(times / record.dt).astype(np.int64)
    if np.any(steps < 0) or np.any(steps > record.n_steps):
        raise RecordError(f"checkpoints must lie within [0, {record.duration}]")
    return steps


def loglik_bank(
    record: MeasurementRecord,
    model: SystemModel,
    thetas: Sequence[float],
    checkpoints: Sequence[float] | None = None,
    renorm_every: int = 1,
    initial: str = "steady",
) -> np.ndarray:
    """log Tr of the linear filter for every candidate at every checkpoint, shape (n_checkpoints, n_candidates).

    Each candidate starts from its own initial state; values are defined up to
    a candidate-independent constant.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    steps = _checkpoint_steps(record, checkpoints)
    if renorm_every < 1:
        raise ValueError(f"renorm_every must be >= 1, got {renorm_every}")
    if model.eta == 0.0:
        return np.zeros((steps.size, thetas.size))
    Ks = np.stack([model.step_superops(th, record.dt) for th in thetas])
    rho0s = np.stack([vectorize(initial_state(model, th, initial)) for th in thetas])
    out, status = _kernels.filter_loglik(Ks, rho0s, record.dy, np.sqrt(model.eta), model.dim, steps, renorm_every)
    if status != _kernels.STATUS_OK:
        raise NumericalError(f"linear filter became non-finite on stream {record.stream_index}")
    return out


def loglik(
    record: MeasurementRecord,
    model: SystemModel,
    theta: float,
    dt: float | None = None,
    renorm_every: int = 1,
) -> float:
    """Log-likelihood of ``theta`` given the record, up to a theta-independent constant."""
    if dt is not None and not np.isclose(dt, record.dt, rtol=1e-12, atol=0.0):
        raise RecordError(f"filter dt={dt} does not match record dt={record.dt}")
    return float(loglik_bank(record, model, [theta], renorm_every=renorm_every)[-1, 0])


def bayes_posterior(
    record: MeasurementRecord,
    model: SystemModel,
    grid: ParameterGrid,
    checkpoints: Sequence[float],
    workers: int | None = None,
    renorm_every: int = 1,
) -> PosteriorTrace:
    """Posterior over ``grid`` at each checkpoint time.

    Candidates are split into contiguous chunks that run on a thread pool;
    each candidate's filter is independent, so the result does not depend on
    the worker count.
    """
    times = np.asarray(checkpoints, dtype=float)
    workers = max(1, min(workers or default_workers(), grid.size))
    chunks = np.array_split(np.arange(grid.size), workers)

    def run(idx: np.ndarray) -> np.ndarray:
        return loglik_bank(record, model, grid.values[idx], times, renorm_every=renorm_every)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        ll = np.concatenate(list(pool.map(run, chunks)), axis=1)

    log_post = ll + grid.log_prior[None, :]
    norm = logsumexp(log_post, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericalError("posterior has no support on the grid")
    logger.debug(f"posterior over {grid.size} candidates at {times.size} checkpoints")
    return PosteriorTrace(times=times, grid=grid, log_posterior=log_post - norm)


@dataclass(frozen=True)
class FisherReport:
    """Monte-Carlo Fisher information of the full record at time ``T``."""

    T: float
    estimate: float
    stderr: float
    n_traj: int
    dt: float
    qfi_reference: float | None
    mean_score: float
    mean_score_stderr: float
    config: dict = field(default_factory=dict)

    @property
    def per_time(self) -> float:
        return self.estimate / self.T if self.T > 0 else float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def steady_state_derivative(model: SystemModel, theta: float, dtheta: float = DEFAULT_DTHETA) -> np.ndarray:
    """d rho_st / d theta by central difference."""
    return (model.steady_state(theta + dtheta) - model.steady_state(theta - dtheta)) / (2 * dtheta)


def fisher_mc(
    model: SystemModel,
    theta: float,
    T: float,
    dt: float,
    n_traj: int,
    base_seed: int,
    checkpoints: Sequence[float] | None = None,
    workers: int | None = None,
    zeta_init: str = "steady_derivative",
    initial: str = "steady",
    dtheta: float = DEFAULT_DTHETA,
) -> list[FisherReport]:
    """Fisher information E[(Tr zeta)^2] at each checkpoint.

    Stream i uses the same Wiener increments as ``simulate_homodyne`` with
    ``RngSpec(base_seed, i)``.
    """
    n_steps = step_count(T, dt)
    if n_traj < 2:
        raise ValueError(f"fisher_mc needs at least 2 trajectories, got {n_traj}")
    if zeta_init not in ZETA_INITS:
        raise ValueError(f"unknown zeta_init {zeta_init!r} (expected one of {ZETA_INITS})")
    times = np.array([T]) if checkpoints is None else np.asarray(checkpoints, dtype=float)
    steps = np.rint(times / dt).astype(np.int64)
    if np.any(np.diff(steps) < 0) or np.any(steps < 0) or np.any(steps > n_steps):
        raise ValueError(f"checkpoints must be sorted and lie within [0, {T}]")

    K = model.step_superops(theta, dt)
    dK = step_derivative(model, theta, dt, dtheta)
    X = model.measurement(theta)
    if dK.shape != K.shape:
        raise DimensionError(f"step derivative {dK.shape} does not match the step {K.shape}")
    rho0 = vectorize(initial_state(model, theta, initial))
    if zeta_init == "steady_derivative" and initial == "steady":
        zeta0 = vectorize(steady_state_derivative(model, theta, dtheta))
    else:
        zeta0 = np.zeros_like(rho0)
    sqrt_eta = np.sqrt(model.eta)

    def run(index: int) -> np.ndarray:
        noise = RngSpec(base_seed, index).wiener_increments(n_steps, dt)
        scores, status = _kernels.score_trajectory(K, dK, X, rho0, zeta0, noise, dt, sqrt_eta, model.dim, steps)
        if status != _kernels.STATUS_OK:
            raise NumericalError(f"score became non-finite on stream {index} (seed {base_seed})")
        return scores

    workers = workers or default_workers()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        scores = np.stack(list(pool.map(run, range(n_traj))))

    squared = scores**2
    estimate = squared.mean(axis=0)
    stderr = squared.std(axis=0, ddof=1) / np.sqrt(n_traj)
    mean_score = scores.mean(axis=0)
    mean_score_stderr = scores.std(axis=0, ddof=1) / np.sqrt(n_traj)
    echo = {
        "theta": float(theta),
        "phi": float(model.phi),
        "eta": float(model.eta),
        "dt": dt,
        "T": T,
        "n_traj": n_traj,
        "base_seed": base_seed,
        "zeta_init": zeta_init,
    }
    reports = [
        FisherReport(
            T=float(t),
            estimate=float(estimate[k]),
            stderr=float(stderr[k]),
            n_traj=n_traj,
            dt=dt,
            qfi_reference=None if model.qfi_rate is None else model.qfi_rate * float(t),
            mean_score=float(mean_score[k]),
            mean_score_stderr=float(mean_score_stderr[k]),
            config=echo,
        )
        for k, t in enumerate(times)
    ]
    last = reports[-1]
    logger.info(f"✅ Fisher information at T={last.T}: {last.estimate:.4g} ± {last.stderr:.2g} ({n_traj} trajectories)")
    return reports


def linear_filter_estimate(
    Y: float,
    C: CorrelationEstimate,
    theta0: float,
    model: SystemModel,
    dtheta: float = DEFAULT_DTHETA,
    T: float | None = None,
    finite_record_correction: bool = True,
) -> float:
    """One-step estimate from the integrated signal and the two-time correlation.

    theta0 + [dI (Y - I) + int dF (C - F) d tau] / (I1 + I2), with the
    Fisher rates I1 = dI**2 and I2 = int dF**2 d tau taken on the lag grid of
    ``C``. Raw correlations are mean-subtracted with the record's own Y. With
    ``finite_record_correction`` the reference F is the expectation of the
    empirical estimator for a record of duration T (bin averaging and the
    var(Y) offset of mean subtraction).
    """
    T = C.duration if T is None else T
    lags = C.lags
    values = C.values if C.mean_subtracted else C.values - Y**2
    n_lags = lags.size

    def reference(th: float) -> np.ndarray:
        if finite_record_correction:
            return expected_correlation(model, th, C.dtau, n_lags, T=T, mean_subtract=True)
        return expected_correlation(model, th, C.dtau, n_lags, mean_subtract=False, bin_average=False) - (
            mean_signal(model, th) ** 2
        )

    I0 = mean_signal(model, theta0)
    dI = (mean_signal(model, theta0 + dtheta) - mean_signal(model, theta0 - dtheta)) / (2 * dtheta)
    F0 = reference(theta0)
    dF = (reference(theta0 + dtheta) - reference(theta0 - dtheta)) / (2 * dtheta)
    information = dI**2 + trapezoid(dF**2, lags)
    if not information > 0:
        raise NumericalError(f"Fisher denominator vanishes at theta0={theta0}")
    innovation = dI * (Y - I0) + trapezoid(dF * (values - F0), lags)
    return float(theta0 + innovation / information)


def _scan(
    points: Sequence[float],
    build: Callable[[float], tuple[SystemModel, float]],
    T: float,
    dt: float,
    n_traj: int,
    base_seed: int,
    workers: int | None,
    dtheta: float,
    tau_max: float,
    label: str,
) -> pd.DataFrame:
    rows = []
    for value in points:
        model, theta = build(value)
        report = fisher_mc(model, theta, T, dt, n_traj, base_seed, workers=workers, dtheta=dtheta)[-1]
        i1 = fisher_mean_signal(model, theta, dtheta)
        i2 = fisher_two_time(model, theta, dtheta, tau_max=tau_max)
        rows.append(
            {
                label: float(value),
                "full_per_T": report.per_time,
                "full_stderr_per_T": report.stderr / T,
                "i1_per_T": i1,
                "i2_per_T": i2,
                "combined_per_T": i1 + i2,
                "qfi_per_T": model.qfi_rate if model.qfi_rate is not None else float("nan"),
            }
        )
    return pd.DataFrame(rows)


def fisher_phase_scan(
    model: SystemModel,
    theta: float,
    phis: Sequence[float],
    T: float,
    dt: float,
    n_traj: int,
    base_seed: int,
    workers: int | None = None,
    dtheta: float = DEFAULT_DTHETA,
    tau_max: float = 20.0,
) -> pd.DataFrame:
    """Full-record, mean-signal and correlation Fisher rates over local oscillator phases."""
    return _scan(
        phis,
        lambda phi: (model.with_channel(phi=phi), theta),
        T, dt, n_traj, base_seed, workers, dtheta, tau_max,
        label="phi",
    )


def fisher_rabi_scan(
    model: SystemModel,
    thetas: Sequence[float],
    T: float,
    dt: float,
    n_traj: int,
    base_seed: int,
    workers: int | None = None,
    dtheta: float = DEFAULT_DTHETA,
    tau_max: float = 20.0,
) -> pd.DataFrame:
    """Full-record, mean-signal and correlation Fisher rates over true parameter values."""
    return _scan(
        thetas,
        lambda theta: (model, theta),
        T, dt, n_traj, base_seed, workers, dtheta, tau_max,
        label="theta",
    )
