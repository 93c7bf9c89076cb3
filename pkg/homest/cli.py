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
"""Command line entry point: ``homest <subcommand> --config FILE [--set k=v ...] --out DIR``."""

import argparse
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from .config import ExperimentConfig, Settings, configure_logging, dump_config, load_config
from .correlations import (
    correlation_spectrum,
    empirical_correlation,
    empirical_covariance,
    expected_correlation,
    fisher_mean_signal,
    fisher_sweep,
    fisher_two_time,
    fit_decay_rate,
    integrated_signal,
    write_frame,
)
from .errors import ConfigError, DimensionError, HomestError, NonHermitianError, NumericalError, RecordError
from .inference import ParameterGrid, bayes_posterior, fisher_mc, posterior_statistics
from .qops import mean_signal
from .trajectory import RngSpec, iter_ensemble, simulate_homodyne, write_record

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

PROJECT_ROOT = Path(__file__).resolve().parent.parent

SUBCOMMANDS = ("simulate", "bayes", "fisher", "correlate", "spectrum", "sweep")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _write_table(out: Path, stem: str, frame: pd.DataFrame, config: ExperimentConfig, index: bool = False) -> None:
    if config.output.format == "json":
        payload = json.loads(frame.to_json(orient="split", index=index, double_precision=15))
        _write_json(out / f"{stem}.json", {"schema": 1, "config": config.resolved(), "data": payload})
    else:
        write_frame(out / f"{stem}.csv", frame, index=index, config=config.resolved())


def run_simulate(config: ExperimentConfig, out: Path, workers: int | None) -> dict:
    m, s = config.model, config.simulation
    model = m.build()
    records_dir = out / "records"
    records_dir.mkdir()
    suffix = "csv" if config.output.record_format == "csv" else "bin"
    resolved = config.resolved()
    ys = []
    for record in iter_ensemble(model, m.theta, s.T, s.dt, s.n_traj, s.base_seed, workers=workers, initial=s.initial):
        write_record(
            records_dir / f"record_{record.stream_index:05d}.{suffix}", record, fmt=config.output.record_format, config=resolved
        )
        ys.append(integrated_signal(record))
    ys = np.asarray(ys)
    logger.info(f"✅ wrote {s.n_traj} records to {records_dir.name}/")
    return {
        "n_records": s.n_traj,
        "mean_Y": float(ys.mean()),
        "stderr_Y": float(ys.std(ddof=1) / np.sqrt(ys.size)) if ys.size > 1 else None,
        "mean_signal": mean_signal(model, m.theta),
        "fingerprint": model.fingerprint(),
    }


def run_bayes(config: ExperimentConfig, out: Path, workers: int | None) -> dict:
    m, s, a = config.model, config.simulation, config.analysis
    model = m.build()
    grid = ParameterGrid.uniform(a.grid_min, a.grid_max, a.grid_points)
    times = config.checkpoint_times()
    finals = []
    for index in range(s.n_traj):
        record = simulate_homodyne(model, m.theta, s.T, s.dt, RngSpec(s.base_seed, index), initial=s.initial).record
        trace = bayes_posterior(record, model, grid, times, workers=workers)
        stats = posterior_statistics(trace)
        _write_table(out, f"posterior_{index:05d}", trace.to_frame(), config)
        _write_table(out, f"posterior_stats_{index:05d}", stats, config)
        finals.append(stats.iloc[-1].to_dict() | {"stream_index": index})
    final = pd.DataFrame(finals)
    covered = np.abs(final["map"] - m.theta) <= 3 * final["std"]
    logger.info(f"✅ posterior for {s.n_traj} record(s); MAP within 3 std in {covered.mean():.0%}")
    return {
        "checkpoints": times.tolist(),
        "final": finals,
        "map_within_3std_fraction": float(covered.mean()),
    }


def run_fisher(config: ExperimentConfig, out: Path, workers: int | None) -> dict:
    m, s, a = config.model, config.simulation, config.analysis
    model = m.build()
    checkpoints = config.analysis.checkpoints
    reports = fisher_mc(
        model,
        m.theta,
        s.T,
        s.dt,
        s.n_traj,
        s.base_seed,
        checkpoints=checkpoints,
        workers=workers,
        zeta_init=a.zeta_init,
        initial=s.initial,
        dtheta=a.dtheta,
    )
    frame = pd.DataFrame(
        [
            {
                "T": r.T,
                "estimate": r.estimate,
                "stderr": r.stderr,
                "per_T": r.per_time,
                "qfi_reference": r.qfi_reference,
                "mean_score": r.mean_score,
                "mean_score_stderr": r.mean_score_stderr,
            }
            for r in reports
        ]
    )
    _write_table(out, "fisher", frame, config)
    i1 = fisher_mean_signal(model, m.theta, a.dtheta)
    i2 = fisher_two_time(model, m.theta, a.dtheta, a.tau_step, a.tau_max)
    last = reports[-1]
    return {
        "estimate": last.estimate,
        "stderr": last.stderr,
        "per_T": last.per_time,
        "qfi_reference": last.qfi_reference,
        "n_traj": last.n_traj,
        "mean_score": last.mean_score,
        "mean_score_stderr": last.mean_score_stderr,
        "i1_per_T": i1,
        "i2_per_T": i2,
        "combined_per_T": i1 + i2,
    }


def run_correlate(config: ExperimentConfig, out: Path, workers: int | None) -> dict:
    m, s, a = config.model, config.simulation, config.analysis
    model = m.build()
    factor = int(round(a.dtau / s.dt))
    if factor < 1 or abs(factor * s.dt - a.dtau) > 1e-9 * a.dtau:
        raise ConfigError(f"analysis.dtau={a.dtau} must be an integer multiple of simulation.dt={s.dt}")
    if a.n_lags * a.dtau >= s.T / 2:
        raise ConfigError(f"analysis.n_lags * analysis.dtau = {a.n_lags * a.dtau} must stay below half of simulation.T={s.T}")
    records = list(
        iter_ensemble(model, m.theta, s.T, s.dt, s.n_traj, s.base_seed, workers=workers, initial=s.initial, coarsen=factor)
    )
    estimate = empirical_correlation(records, a.dtau, a.n_lags, mean_subtract=a.mean_subtract)
    expected = expected_correlation(model, m.theta, a.dtau, a.n_lags, T=s.T, mean_subtract=a.mean_subtract)
    frame = estimate.to_frame().assign(expected=expected)
    within = np.abs(estimate.values - expected) <= 3 * estimate.stderr
    _write_table(out, "correlation", frame, config)

    summary = {
        "n_records": estimate.n_records,
        "within_3_stderr_fraction": float(within.mean()),
        "chi2_per_lag": float(np.mean(((estimate.values - expected) / estimate.stderr) ** 2)),
    }
    if not a.mean_subtract:
        try:
            summary["decay_rate"] = fit_decay_rate(estimate.lags, estimate.values)
        except NumericalError as exc:
            logger.warning(f"⚠️  no decay rate: {exc}")
    if estimate.n_records >= 2:
        stats = empirical_covariance(records, a.dtau, a.n_lags)
        _write_table(out, "covariance", stats.to_frame(), config, index=True)
        diag = np.diag(stats.covariance)
        off = stats.covariance[1:, 1:][~np.eye(a.n_lags, dtype=bool)]
        off_err = stats.sampling_stderr()[1:, 1:][~np.eye(a.n_lags, dtype=bool)]
        summary |= {
            "sigma_00_times_T": float(diag[0] * s.T),
            "mean_lag_variance_times_T_dtau": float(diag[1:].mean() * s.T * a.dtau),
            "off_diagonal_within_4_stderr_fraction": float(np.mean(np.abs(off) <= 4 * off_err)) if off.size else 1.0,
        }
    logger.info(f"✅ correlations from {estimate.n_records} records; {within.mean():.0%} of lags within 3 stderr")
    return summary


def run_spectrum(config: ExperimentConfig, out: Path, workers: int | None) -> dict:
    m, a = config.model, config.analysis
    model = m.build()
    omega = np.linspace(-a.omega_max, a.omega_max, a.omega_points)
    spectrum = correlation_spectrum(
        model,
        m.theta,
        dtau=a.tau_step,
        tau_max=a.tau_max,
        omega=omega,
        mean_subtract=a.mean_subtract,
        include_shot_floor=a.include_shot_floor,
    )
    _write_table(out, "spectrum", pd.DataFrame({"omega": spectrum.omega, "S": spectrum.values}), config)
    return {"n_points": int(omega.size), "peak_omega": float(omega[np.argmax(spectrum.values)])}


def run_sweep(config: ExperimentConfig, out: Path, workers: int | None) -> dict:
    m, a = config.model, config.analysis
    sweep = fisher_sweep(m.build, a.phis, a.thetas, a.dtheta, a.tau_step, a.tau_max)
    _write_table(out, "sweep", sweep.to_frame(), config)
    track = pd.DataFrame(
        {"theta": sweep.thetas, "best_phi": sweep.best_phase(), "combined_per_T": sweep.combined.max(axis=0)}
    )
    _write_table(out, "phase_track", track, config)
    return {"best_phi": dict(zip(map(str, sweep.thetas), sweep.best_phase().tolist()))}


RUNNERS: dict[str, Callable[[ExperimentConfig, Path, int | None], dict]] = {
    "simulate": run_simulate,
    "bayes": run_bayes,
    "fisher": run_fisher,
    "correlate": run_correlate,
    "spectrum": run_spectrum,
    "sweep": run_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homest", description="Homodyne parameter estimation experiments.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="YAML experiment config")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--out", type=Path, help="output directory (default: output.directory)")
    parser.add_argument("--log-level", help="overrides HOMEST_LOG_LEVEL")
    parser.add_argument("--workers", type=int, help="overrides HOMEST_WORKERS")
    return parser


def _publish(staging: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for item in sorted(staging.iterdir()):
        target = out / item.name
        if target.is_dir():
            shutil.rmtree(target)
        elif target.exists():
            target.unlink()
        shutil.move(str(item), str(target))


def run(subcommand: str, config: ExperimentConfig, out: Path, workers: int | None = None) -> int:
    """Run one subcommand, staging outputs so a failure leaves ``out`` untouched."""
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".homest-", dir=out.parent))
    try:
        dump_config(config, staging / "resolved_config.yaml")
        summary = RUNNERS[subcommand](config, staging, workers)
        _write_json(staging / "summary.json", {"subcommand": subcommand, "config": config.resolved(), **summary})
        _publish(staging, out)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    logger.info(f"✅ {subcommand} finished, outputs in {out}")
    return EXIT_OK


def _load_env() -> None:
    env_path = PROJECT_ROOT / ".env"
    if env_path.exists():
        load_dotenv(env_path)
        logger.debug(f"loaded environment from {env_path}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _load_env()
    try:
        settings = Settings()
    except ValidationError as exc:
        configure_logging("INFO")
        logger.error(f"❌ invalid environment settings: {exc}")
        return EXIT_CONFIG
    configure_logging(args.log_level or settings.LOG_LEVEL)
    workers = args.workers or settings.WORKERS
    try:
        config = load_config(args.config, args.overrides)
        out = args.out or (Path(config.output.directory) if config.output.directory else None)
        if out is None:
            raise ConfigError("no output directory: pass --out or set output.directory")
        if workers is not None and workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        return run(args.subcommand, config, out, workers)
    except (ConfigError, DimensionError, NonHermitianError) as exc:
        logger.error(f"❌ configuration error: {exc}")
        return EXIT_CONFIG
    except NumericalError as exc:
        logger.error(f"❌ numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (OSError, RecordError) as exc:
        logger.error(f"❌ I/O failure: {exc}")
        return EXIT_IO
    except ValueError as exc:
        logger.error(f"❌ invalid value: {exc}")
        return EXIT_CONFIG
    except HomestError as exc:
        logger.error(f"❌ {exc}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
