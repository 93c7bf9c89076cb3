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
"""Reduced statistics of homodyne records and their Fisher information.

Empirical correlations are taken on the record coarse-grained to the lag
spacing: J_k is the current averaged over bin k of width dtau, and lag l
pairs bins k and k + l. This is the sampling for which the lag covariance
is diagonal with variance 1/(T dtau).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.integrate import trapezoid

from .errors import ConfigError, InsufficientDecayError, NumericalError, RecordError
from .qops import (
    Spectrum,
    SystemModel,
    mean_signal,
    power_spectrum,
    qrt_two_time,
    qrt_zero_lag,
    trace_row,
    vectorize,
)
from .trajectory import MeasurementRecord

logger = logging.getLogger(__name__)

CSV_SCHEMA = "# schema=1\n"
DEFAULT_DTHETA = 1e-4
DEFAULT_DTAU = 1e-3
DEFAULT_TAU_MAX = 20.0
DECAY_TOL = 1e-6
HALVING_TOL = 5e-3
SPECTRAL_TAIL_TOL = 1e-4


@dataclass(frozen=True)
class CorrelationEstimate:
    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_records: int
    dtau: float
    mean_subtracted: bool
    duration: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"tau": self.lags, "value": self.values, "stderr": self.stderr})


@dataclass(frozen=True)
class GaussianStatVector:
    """Sample mean and covariance of (Y, C_1, ..., C_L) across records."""

    mean: np.ndarray
    covariance: np.ndarray
    n_records: int
    lags: np.ndarray
    dtau: float
    duration: float

    def sampling_stderr(self) -> np.ndarray:
        """Standard error of each sample-covariance entry under normality."""
        diag = np.diag(self.covariance)
        return np.sqrt((np.outer(diag, diag) + self.covariance**2) / (self.n_records - 1))

    def labels(self) -> list[str]:
        return ["Y"] + [f"C_{l}" for l in range(1, self.lags.size + 1)]

    def to_frame(self) -> pd.DataFrame:
        labels = self.labels()
        return pd.DataFrame(self.covariance, index=labels, columns=labels)


def write_frame(path: str | Path, frame: pd.DataFrame, index: bool = False, config: dict | None = None) -> Path:
    """Write a table as CSV.

    Args:
        path: Destination file.
        frame: Table to write.
        index: Whether to keep the frame index as the first column.
        config: Resolved run configuration, embedded as a ``# config=`` JSON
            comment line after the ``# schema=1`` line.

    Returns:
        The path written.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_SCHEMA)
        if config is not None:
            fh.write(f"# config={json.dumps(config, sort_keys=True)}\n")
        frame.to_csv(fh, index=index, float_format="%.17g")
    return path


def integrated_signal(record: MeasurementRecord) -> float:
    """Time-averaged current Y = sum(dy) / T."""
    if record.n_steps == 0:
        raise RecordError("cannot integrate an empty record")
    return float(record.dy.sum() / record.duration)


def _bin_factor(record: MeasurementRecord, dtau: float) -> int:
    factor = int(round(dtau / record.dt))
    if factor < 1 or abs(factor * record.dt - dtau) > 1e-9 * dtau:
        raise ConfigError(f"lag spacing {dtau} is not an integer multiple of the record step {record.dt}")
    return factor


def _record_correlations(record: MeasurementRecord, dtau: float, n_lags: int) -> tuple[float, np.ndarray]:
    if record.n_steps == 0:
        raise RecordError("empty record")
    if n_lags * dtau >= record.duration / 2:
        raise ConfigError(f"lag {n_lags * dtau} exceeds half the record duration {record.duration}")
    factor = _bin_factor(record, dtau)
    binned = record.coarsened(factor) if factor > 1 else record
    J = binned.current()
    C = np.array([np.mean(J[:-l] * J[l:]) for l in range(1, n_lags + 1)])
    return integrated_signal(record), C


def empirical_correlation(
    records: Iterable[MeasurementRecord],
    dtau: float,
    n_lags: int,
    mean_subtract: bool = False,
) -> CorrelationEstimate:
    """Ensemble-averaged two-time correlation C(l dtau), l = 1..n_lags.

    With ``mean_subtract`` each record's C_l is reduced by its own Y**2.
    A single record gets the white-noise standard error 1/sqrt(T dtau).
    """
    rows = []
    duration = None
    for record in records:
        Y, C = _record_correlations(record, dtau, n_lags)
        rows.append(C - Y**2 if mean_subtract else C)
        duration = record.duration if duration is None else duration
    if not rows:
        raise RecordError("no records given")
    rows = np.asarray(rows)
    n = rows.shape[0]
    values = rows.mean(axis=0)
    if n > 1:
        stderr = rows.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        stderr = np.full(n_lags, 1.0 / np.sqrt(duration * dtau))
    return CorrelationEstimate(
        lags=dtau * np.arange(1, n_lags + 1),
        values=values,
        stderr=stderr,
        n_records=n,
        dtau=dtau,
        mean_subtracted=mean_subtract,
        duration=duration,
    )


def empirical_covariance(records: Iterable[MeasurementRecord], dtau: float, n_lags: int) -> GaussianStatVector:
    """Sample covariance of (Y, C_1 - Y**2, ..., C_L - Y**2) across records."""
    rows = []
    duration = None
    for record in records:
        Y, C = _record_correlations(record, dtau, n_lags)
        rows.append(np.concatenate(([Y], C - Y**2)))
        duration = record.duration if duration is None else duration
    if len(rows) < 2:
        raise RecordError(f"covariance needs at least 2 records, got {len(rows)}")
    if len(rows) < 100:
        logger.warning(f"⚠️  covariance from only {len(rows)} records is poorly conditioned")
    rows = np.asarray(rows)
    return GaussianStatVector(
        mean=rows.mean(axis=0),
        covariance=np.cov(rows, rowvar=False, ddof=1),
        n_records=rows.shape[0],
        lags=dtau * np.arange(1, n_lags + 1),
        dtau=dtau,
        duration=duration,
    )


def connected_correlation_integral(model: SystemModel, theta: float) -> float:
    """int_0^inf (F1(tau) - I**2) d tau, from the Liouvillian's inverse on traceless operators."""
    L = model.liouvillian(theta)
    X = model.measurement(theta)
    rho_ss = vectorize(model.steady_state(theta))
    t = trace_row(model.dim)
    fluctuation = X @ rho_ss - (t @ X @ rho_ss) * rho_ss
    x, *_ = scipy.linalg.lstsq(L, -fluctuation)
    x = x - (t @ x) * rho_ss
    return float(model.eta * (t @ X @ x).real)


def signal_variance(model: SystemModel, theta: float, T: float) -> float:
    """Predicted var(Y) = [1 + 2 int (F1 - I**2) d tau] / T for a stationary record."""
    return (1.0 + 2.0 * connected_correlation_integral(model, theta)) / T


def expected_correlation(
    model: SystemModel,
    theta: float,
    dtau: float,
    n_lags: int,
    T: float | None = None,
    mean_subtract: bool = False,
    bin_average: bool = True,
    nodes: int = 8,
) -> np.ndarray:
    """Expectation of :func:`empirical_correlation` for records of duration T.

    ``bin_average`` applies the triangular lag kernel of dtau-binned
    currents. Mean subtraction removes E[Y**2] = I**2 + var(Y), which
    needs ``T``.
    """
    lags = dtau * np.arange(1, n_lags + 1)
    if bin_average:
        u, w = np.polynomial.legendre.leggauss(nodes)
        u = 0.5 * (u + 1.0)
        w = 0.5 * w * (1.0 - u)
        shifted = np.concatenate([lags[:, None] + dtau * u[None, :], lags[:, None] - dtau * u[None, :]], axis=1)
        grid, inverse = np.unique(shifted.ravel(), return_inverse=True)
        F = qrt_two_time(model, theta, grid)[inverse].reshape(shifted.shape)
        values = F @ np.concatenate([w, w])
    else:
        values = qrt_two_time(model, theta, lags)
    if mean_subtract:
        if T is None:
            raise ValueError("mean subtraction needs the record duration T")
        values = values - mean_signal(model, theta) ** 2 - signal_variance(model, theta, T)
    return values


def fisher_mean_signal(model: SystemModel, theta: float, dtheta: float = DEFAULT_DTHETA) -> float:
    """Fisher information per unit time of the integrated signal, (dI/dtheta)**2."""
    slope = (mean_signal(model, theta + dtheta) - mean_signal(model, theta - dtheta)) / (2 * dtheta)
    return slope**2


def _lag_grid(dtau: float, tau_max: float) -> np.ndarray:
    if dtau <= 0 or tau_max <= dtau:
        raise ValueError(f"need 0 < dtau < tau_max, got dtau={dtau}, tau_max={tau_max}")
    return dtau * np.arange(1, int(round(tau_max / dtau)) + 1)


def _correlation_slope(model: SystemModel, theta: float, dtheta: float, taus: np.ndarray) -> np.ndarray:
    upper = qrt_two_time(model, theta + dtheta, taus, mean_subtract=True)
    lower = qrt_two_time(model, theta - dtheta, taus, mean_subtract=True)
    return (upper - lower) / (2 * dtheta)


def _check_decay(integrand: np.ndarray, what: str) -> None:
    peak = np.max(integrand)
    if peak < 1e-20:
        return
    tail = np.max(integrand[-max(integrand.size // 20, 1) :])
    if tail > DECAY_TOL * peak:
        raise InsufficientDecayError(f"{what} has not decayed at tau_max (ratio {tail / peak:.2e})")


def fisher_two_time(
    model: SystemModel,
    theta: float,
    dtheta: float = DEFAULT_DTHETA,
    dtau: float = DEFAULT_DTAU,
    tau_max: float = DEFAULT_TAU_MAX,
    check_halving: bool = False,
) -> float:
    """Fisher information per unit time of the mean-subtracted two-time correlation.

    int_{dtau}^{tau_max} (dF1/dtheta)**2 d tau, central difference in theta
    and trapezoid in tau.
    """
    taus = _lag_grid(dtau, tau_max)
    integrand = _correlation_slope(model, theta, dtheta, taus) ** 2
    _check_decay(integrand, "(dF1/dtheta)^2")
    value = float(trapezoid(integrand, taus))
    if check_halving:
        finer = fisher_two_time(model, theta, dtheta, dtau / 2, tau_max)
        drift = abs(finer - value) / max(abs(finer), 1e-300)
        if drift > HALVING_TOL:
            logger.warning(f"⚠️  halving dtau={dtau} changes I2 by {drift:.2%}")
        else:
            logger.debug(f"dtau halving drift {drift:.2e}")
    return value


def correlation_spectrum(
    model: SystemModel,
    theta: float,
    dtau: float = DEFAULT_DTAU,
    tau_max: float = DEFAULT_TAU_MAX,
    omega: Sequence[float] | None = None,
    mean_subtract: bool = True,
    include_shot_floor: bool = False,
) -> Spectrum:
    """Power spectrum of the homodyne current from its QRT correlation."""
    taus = _lag_grid(dtau, tau_max)
    f1 = qrt_two_time(model, theta, taus, mean_subtract=mean_subtract)
    f0 = qrt_zero_lag(model, theta) - (mean_signal(model, theta) ** 2 if mean_subtract else 0.0)
    return power_spectrum(f1, dtau, f0=f0, include_shot_floor=include_shot_floor, omega=omega)


def fisher_spectral(
    model: SystemModel,
    theta: float,
    dtheta: float = DEFAULT_DTHETA,
    omega: Sequence[float] | None = None,
    dtau: float = DEFAULT_DTAU,
    tau_max: float = DEFAULT_TAU_MAX,
) -> float:
    """Fisher information per unit time of the spectrum, (1/4pi) int (dS/dtheta)**2 d omega.

    S carries no 1/2pi, so Plancherel on the even extension gives
    int_0^inf (dF1/dtheta)**2 d tau = (1/4pi) int (dS/dtheta)**2 d omega.
    A grid with omega >= 0 only is doubled using S(omega) = S(-omega).
    """
    if omega is None:
        omega = np.linspace(0.0, 60.0 + abs(theta), 12001)
    omega = np.asarray(omega, dtype=float)
    taus = _lag_grid(dtau, tau_max)
    slope = _correlation_slope(model, theta, dtheta, taus)

    def zero_lag(th):
        return qrt_zero_lag(model, th) - mean_signal(model, th) ** 2

    slope0 = (zero_lag(theta + dtheta) - zero_lag(theta - dtheta)) / (2 * dtheta)
    dS = power_spectrum(slope, dtau, f0=slope0, omega=omega).values
    integrand = dS**2
    peak = np.max(integrand)
    edge = max(integrand[0], integrand[-1]) if omega.min() < 0 else integrand[-1]
    if peak > 1e-20 and edge > SPECTRAL_TAIL_TOL * peak:
        raise NumericalError(f"omega grid truncates the support of dS/dtheta (edge ratio {edge / peak:.2e})")
    value = trapezoid(integrand, omega)
    if omega.min() >= 0:
        value *= 2.0
    return float(value / (4 * np.pi))


def fit_decay_rate(lags: Sequence[float], values: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Exponential decay rate from a weighted log-linear least-squares fit of positive values."""
    lags = np.asarray(lags, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        raise NumericalError("need at least two positive values to fit a decay rate")
    w = None if weights is None else np.asarray(weights, dtype=float)[keep]
    slope, _ = np.polyfit(lags[keep], np.log(values[keep]), 1, w=w)
    return float(-slope)


@dataclass(frozen=True)
class FisherSweep:
    phis: np.ndarray
    thetas: np.ndarray
    i1: np.ndarray
    i2: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return self.i1 + self.i2

    def best_phase(self) -> np.ndarray:
        """Phase maximizing I1 + I2 for each theta."""
        return self.phis[np.argmax(self.combined, axis=0)]

    def to_frame(self) -> pd.DataFrame:
        P, Th = np.meshgrid(self.phis, self.thetas, indexing="ij")
        return pd.DataFrame(
            {
                "phi": P.ravel(),
                "theta": Th.ravel(),
                "i1_per_T": self.i1.ravel(),
                "i2_per_T": self.i2.ravel(),
                "combined_per_T": self.combined.ravel(),
            }
        )


def fisher_sweep(
    model_factory: Callable[[float], SystemModel],
    phis: Sequence[float],
    thetas: Sequence[float],
    dtheta: float = DEFAULT_DTHETA,
    dtau: float = DEFAULT_DTAU,
    tau_max: float = DEFAULT_TAU_MAX,
) -> FisherSweep:
    """I1/T and I2/T over a (phi, theta) grid; ``model_factory`` maps phi to a model."""
    phis = np.asarray(phis, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    i1 = np.empty((phis.size, thetas.size))
    i2 = np.empty_like(i1)
    for a, phi in enumerate(phis):
        model = model_factory(phi)
        for b, theta in enumerate(thetas):
            i1[a, b] = fisher_mean_signal(model, theta, dtheta)
            i2[a, b] = fisher_two_time(model, theta, dtheta, dtau, tau_max)
        logger.debug(f"sweep phi={phi:.4f} done")
    return FisherSweep(phis=phis, thetas=thetas, i1=i1, i2=i2)
