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
"""Linear-filter likelihoods, posteriors, Monte-Carlo Fisher information and the correlation estimator."""

import numpy as np
import pytest

from homest.correlations import (
    CorrelationEstimate,
    empirical_correlation,
    expected_correlation,
    fisher_mean_signal,
    fisher_two_time,
    integrated_signal,
)
from homest.errors import DimensionError, NumericalError, RecordError
from homest.inference import (
    ParameterGrid,
    bayes_posterior,
    fisher_mc,
    fisher_phase_scan,
    fisher_rabi_scan,
    linear_filter_estimate,
    loglik,
    loglik_bank,
    posterior_statistics,
)
from homest.qops import mean_signal, qubit_model, vectorize
from homest.trajectory import RngSpec, iter_ensemble, simulate_homodyne

HALF_PI = np.pi / 2


@pytest.fixture
def short_record(quadrature_model):
    return simulate_homodyne(quadrature_model, 2.0, T=0.5, dt=1e-3, rng=RngSpec(11)).record


def _reference_loglik(record, model, theta):
    """Plain numpy propagation of the un-normalized filter."""
    L = model.liouvillian(theta)
    X = model.measurement(theta)
    rho = vectorize(model.steady_state(theta))
    for dy in record.dy:
        rho = rho + (L @ rho) * record.dt + np.sqrt(model.eta) * dy * (X @ rho)
    return np.log(np.real(rho[0] + rho[3]))


class TestParameterGrid:
    def test_prior_is_normalized(self):
        grid = ParameterGrid(np.array([0.0, 1.0, 2.0]), np.log([1.0, 2.0, 1.0]))
        assert np.allclose(np.exp(grid.log_prior), [0.25, 0.5, 0.25])

    def test_uniform(self):
        grid = ParameterGrid.uniform(0.0, 4.0, 201)
        assert grid.size == 201
        assert np.allclose(np.exp(grid.log_prior).sum(), 1.0)

    def test_must_increase(self):
        with pytest.raises(ValueError):
            ParameterGrid(np.array([1.0, 0.5]), np.zeros(2))

    def test_prior_shape(self):
        with pytest.raises(DimensionError):
            ParameterGrid(np.linspace(0, 1, 3), np.zeros(4))

    def test_empty_prior(self):
        with pytest.raises(NumericalError):
            ParameterGrid(np.linspace(0, 1, 3), np.full(3, -np.inf))


class TestLikelihood:
    def test_matches_plain_propagation(self, short_record, quadrature_model):
        for theta in (1.0, 2.0, 3.0):
            assert loglik(short_record, quadrature_model, theta) == pytest.approx(
                _reference_loglik(short_record, quadrature_model, theta), abs=1e-9
            )

    def test_renormalization_schedule_is_invisible(self, short_record, quadrature_model):
        thetas = [0.5, 2.0, 3.5]
        every_step = loglik_bank(short_record, quadrature_model, thetas, renorm_every=1)
        sparse = loglik_bank(short_record, quadrature_model, thetas, renorm_every=10)
        assert np.allclose(every_step, sparse, atol=1e-8)

    def test_blind_detector_is_uninformative(self, blind_model):
        record = simulate_homodyne(blind_model, 1.0, T=0.5, dt=1e-3, rng=RngSpec(2)).record
        assert np.all(loglik_bank(record, blind_model, [0.5, 1.0, 3.0], checkpoints=[0.0, 0.5]) == 0.0)

    def test_checkpoints(self, short_record, quadrature_model):
        bank = loglik_bank(short_record, quadrature_model, [2.0], checkpoints=[0.0, 0.25, 0.5])
        assert bank.shape == (3, 1)
        assert bank[0, 0] == pytest.approx(0.0, abs=1e-14)
        assert bank[-1, 0] == pytest.approx(loglik(short_record, quadrature_model, 2.0), abs=1e-12)

    def test_checkpoint_outside_record(self, short_record, quadrature_model):
        with pytest.raises(RecordError):
            loglik_bank(short_record, quadrature_model, [2.0], checkpoints=[1.0])

    def test_step_mismatch(self, short_record, quadrature_model):
        with pytest.raises(RecordError):
            loglik(short_record, quadrature_model, 2.0, dt=2e-3)

class TestStrongSignalFilter:
    """Long quadrature records at Omega = 2."""

    @pytest.fixture(scope="class")
    def long_record(self):
        model = qubit_model(phi=HALF_PI)
        return simulate_homodyne(model, 2.0, T=50.0, dt=1e-3, rng=RngSpec(100, 0)).record

    def test_filter_stays_finite(self, long_record, quadrature_model):
        thetas = np.linspace(1.0, 3.0, 21)
        bank = loglik_bank(long_record, quadrature_model, thetas, checkpoints=[12.5, 25.0, 50.0])
        assert np.all(np.isfinite(bank))

    def test_posterior_is_normalized(self, long_record, quadrature_model):
        grid = ParameterGrid.uniform(0.0, 4.0, 101)
        trace = bayes_posterior(long_record, quadrature_model, grid, [12.5, 50.0], workers=2)
        assert np.all(np.isfinite(trace.log_posterior))
        assert np.allclose(trace.posterior().sum(axis=1), 1.0, atol=1e-12)
        assert 1.0 <= trace.map_path[-1] <= 3.0



class TestPosterior:
    def test_prior_at_time_zero(self, short_record, quadrature_model):
        grid = ParameterGrid(np.linspace(0.5, 3.5, 7), np.log(np.arange(1.0, 8.0)))
        trace = bayes_posterior(short_record, quadrature_model, grid, [0.0, 0.5], workers=2)
        assert np.allclose(trace.log_posterior[0], grid.log_prior, atol=1e-12)
        assert np.allclose(trace.posterior().sum(axis=1), 1.0)

    def test_worker_count_does_not_change_posterior(self, short_record, quadrature_model):
        grid = ParameterGrid.uniform(0.0, 4.0, 21)
        one = bayes_posterior(short_record, quadrature_model, grid, [0.25, 0.5], workers=1)
        many = bayes_posterior(short_record, quadrature_model, grid, [0.25, 0.5], workers=4)
        assert np.array_equal(one.log_posterior, many.log_posterior)

    def test_statistics_of_known_posterior(self, short_record, quadrature_model):
        grid = ParameterGrid.uniform(0.0, 4.0, 401)
        trace = bayes_posterior(short_record, quadrature_model, grid, [0.0], workers=1)
        flat = posterior_statistics(trace).iloc[0]
        assert flat["mean"] == pytest.approx(2.0)
        assert flat["std"] == pytest.approx(4.0 / np.sqrt(12), rel=0.01)
        assert flat["fwhm"] == pytest.approx(4.0)

    def test_gaussian_width(self, short_record, quadrature_model):
        values = np.linspace(-5.0, 5.0, 2001)
        grid = ParameterGrid(values, -0.5 * values**2)
        trace = bayes_posterior(short_record, qubit_model(phi=HALF_PI, eta=0.0), grid, [0.5], workers=1)
        assert trace.fwhm_path[0] == pytest.approx(2 * np.sqrt(2 * np.log(2)), rel=1e-3)
        assert trace.map_path[0] == pytest.approx(0.0)


class TestFisherMonteCarlo:
    def test_blind_detector_carries_no_information(self, blind_model):
        report = fisher_mc(blind_model, 1.0, T=1.0, dt=1e-3, n_traj=8, base_seed=0, workers=2)[-1]
        assert report.estimate == pytest.approx(0.0, abs=1e-15)

    def test_score_has_zero_mean(self, quadrature_model, workers):
        report = fisher_mc(quadrature_model, 1.0, T=2.0, dt=1e-3, n_traj=300, base_seed=4, workers=workers)[-1]
        assert abs(report.mean_score) <= 4 * report.mean_score_stderr
        assert report.qfi_reference == pytest.approx(8.0)

    def test_worker_count_does_not_change_estimate(self, quadrature_model):
        one = fisher_mc(quadrature_model, 1.0, T=0.5, dt=1e-3, n_traj=6, base_seed=1, workers=1)
        many = fisher_mc(quadrature_model, 1.0, T=0.5, dt=1e-3, n_traj=6, base_seed=1, workers=3)
        assert [r.estimate for r in one] == [r.estimate for r in many]

    def test_checkpoints_report_growing_information(self, quadrature_model, workers):
        reports = fisher_mc(
            quadrature_model, 1.0, T=4.0, dt=1e-3, n_traj=200, base_seed=3,
            checkpoints=[0.0, 2.0, 4.0], workers=workers,
        )
        assert [r.T for r in reports] == [0.0, 2.0, 4.0]
        assert reports[0].estimate == pytest.approx(0.0, abs=1e-15)
        assert reports[2].estimate > reports[1].estimate
        assert np.isnan(reports[0].per_time)

    def test_needs_two_trajectories(self, quadrature_model):
        with pytest.raises(ValueError):
            fisher_mc(quadrature_model, 1.0, T=1.0, dt=1e-3, n_traj=1, base_seed=0)

    def test_unknown_score_start(self, quadrature_model):
        with pytest.raises(ValueError):
            fisher_mc(quadrature_model, 1.0, T=1.0, dt=1e-3, n_traj=4, base_seed=0, zeta_init="random")

    def test_report_serializes(self, quadrature_model):
        report = fisher_mc(quadrature_model, 1.0, T=0.2, dt=1e-3, n_traj=4, base_seed=0, workers=1)[-1]
        data = report.to_dict()
        assert data["n_traj"] == 4
        assert data["config"]["zeta_init"] == "steady_derivative"

    def test_rabi_scan_columns(self, quadrature_model):
        scan = fisher_rabi_scan(quadrature_model, [0.5, 1.0], T=0.5, dt=1e-3, n_traj=4, base_seed=0, workers=2)
        assert list(scan["theta"]) == [0.5, 1.0]
        assert np.allclose(scan["qfi_per_T"], 4.0)
        assert np.allclose(scan["combined_per_T"], scan["i1_per_T"] + scan["i2_per_T"])


class TestLinearFilterEstimate:
    def _expected_estimate(self, model, theta, T, dtau=0.05, n_lags=40):
        lags = dtau * np.arange(1, n_lags + 1)
        values = expected_correlation(model, theta, dtau, n_lags, T=T, mean_subtract=True)
        C = CorrelationEstimate(lags, values, np.ones(n_lags), 1, dtau, True, T)
        return mean_signal(model, theta), C

    def test_no_innovation_returns_reference(self, quadrature_model):
        Y, C = self._expected_estimate(quadrature_model, 2.0, T=100.0)
        assert linear_filter_estimate(Y, C, 2.0, quadrature_model) == pytest.approx(2.0, abs=1e-9)

    def test_moves_towards_truth(self, quadrature_model):
        Y, C = self._expected_estimate(quadrature_model, 2.1, T=100.0)
        estimate = linear_filter_estimate(Y, C, 2.0, quadrature_model)
        assert abs(estimate - 2.1) < 0.02

    def test_raw_correlations_are_mean_subtracted(self, quadrature_model):
        Y, C = self._expected_estimate(quadrature_model, 2.0, T=100.0)
        raw = CorrelationEstimate(C.lags, C.values + Y**2, C.stderr, 1, C.dtau, False, C.duration)
        assert linear_filter_estimate(Y, raw, 2.0, quadrature_model) == pytest.approx(2.0, abs=1e-9)

    def test_uninformative_reference(self, blind_model):
        Y, C = self._expected_estimate(blind_model, 1.0, T=100.0)
        with pytest.raises(NumericalError):
            linear_filter_estimate(Y, C, 1.0, blind_model)


@pytest.mark.slow
class TestEnsembleInference:
    """Desk-scale Monte-Carlo checks of the inference layer."""

    @pytest.mark.parametrize("omega", [0.5, 1.0, 2.0, 4.0])
    def test_full_record_reaches_qfi(self, quadrature_model, workers, omega):
        report = fisher_mc(quadrature_model, omega, T=20.0, dt=1e-3, n_traj=2000, base_seed=10, workers=workers)[-1]
        assert abs(report.per_time - 4.0) <= max(0.4, 3 * report.stderr / report.T)
        assert report.estimate <= report.qfi_reference + 3 * report.stderr

    def test_low_efficiency_is_captured_by_low_orders(self, workers):
        model = qubit_model(phi=HALF_PI, eta=0.1)
        report = fisher_mc(model, 1.0, T=20.0, dt=1e-3, n_traj=2000, base_seed=12, workers=workers)[-1]
        reduced = fisher_mean_signal(model, 1.0) + fisher_two_time(model, 1.0)
        assert abs(report.per_time - reduced) <= max(0.15 * reduced, 3 * report.stderr / report.T)

    def test_phase_scan_ordering(self, quadrature_model, workers):
        scan = fisher_phase_scan(quadrature_model, 1.0, [0.0, HALF_PI], T=10.0, dt=1e-3, n_traj=400, base_seed=2, workers=workers)
        assert scan["full_per_T"].iloc[1] > scan["full_per_T"].iloc[0]
        assert np.all(scan["full_per_T"] + 3 * scan["full_stderr_per_T"] >= scan["combined_per_T"] * 0.9)

    def test_information_grows_linearly(self, quadrature_model, workers):
        early, late = fisher_mc(
            quadrature_model, 1.0, T=20.0, dt=1e-3, n_traj=2000, base_seed=14, checkpoints=[10.0, 20.0], workers=workers
        )
        assert 1.8 <= late.estimate / early.estimate <= 2.2

    def test_expected_loglik_peaks_at_truth(self, quadrature_model, workers):
        grid = ParameterGrid.uniform(0.0, 4.0, 41)
        total = np.zeros(grid.size)
        for record in iter_ensemble(quadrature_model, 2.0, 50.0, 1e-3, 200, base_seed=40, workers=workers):
            total += loglik_bank(record, quadrature_model, grid.values)[-1]
        cell = grid.values[1] - grid.values[0]
        assert abs(grid.values[np.argmax(total)] - 2.0) <= cell + 1e-12

    def test_posterior_concentrates(self, quadrature_model, in_phase_model, workers):
        grid = ParameterGrid.uniform(0.0, 4.0, 201)
        cell = grid.values[1] - grid.values[0]
        n_seeds = 100
        hits = narrower = shrinks = 0
        variances = []
        for index in range(n_seeds):
            stats = {}
            for name, model in (("quadrature", quadrature_model), ("in_phase", in_phase_model)):
                record = simulate_homodyne(model, 2.0, T=50.0, dt=1e-3, rng=RngSpec(30, index)).record
                stats[name] = posterior_statistics(bayes_posterior(record, model, grid, [12.5, 50.0], workers=workers))
            final = stats["quadrature"].iloc[-1]
            hits += abs(final["map"] - 2.0) <= 3 * max(final["std"], cell)
            narrower += stats["in_phase"]["fwhm"].iloc[-1] > final["fwhm"]
            shrinks += final["fwhm"] < stats["quadrature"]["fwhm"].iloc[0] / 1.7
            variances.append(final["std"] ** 2)
        assert hits >= 0.9 * n_seeds
        assert narrower >= 0.9 * n_seeds
        assert shrinks >= 0.9 * n_seeds

        # mean posterior variance cannot beat the Cramer-Rao bound of the same streams
        report = fisher_mc(quadrature_model, 2.0, T=50.0, dt=1e-3, n_traj=n_seeds, base_seed=30, workers=workers)[-1]
        variances = np.asarray(variances)
        bound = 1.0 / report.estimate
        stderr = np.hypot(variances.std(ddof=1) / np.sqrt(n_seeds), report.stderr / report.estimate**2)
        assert variances.mean() >= bound - 3 * stderr

    def test_correlation_estimator_approaches_bound(self, quadrature_model, workers):
        T, dt, dtau, n_lags = 100.0, 1e-3, 0.05, 200
        records = iter_ensemble(quadrature_model, 2.0, T, dt, 500, base_seed=20, workers=workers, coarsen=int(round(dtau / dt)))
        estimates = []
        for record in records:
            C = empirical_correlation([record], dtau, n_lags, mean_subtract=True)
            estimates.append(linear_filter_estimate(integrated_signal(record), C, 2.0, quadrature_model))
        estimates = np.asarray(estimates)
        bound = 1.0 / (T * (fisher_mean_signal(quadrature_model, 2.0) + fisher_two_time(quadrature_model, 2.0)))
        assert np.var(estimates, ddof=1) <= 1.25 * bound
        assert abs(estimates.mean() - 2.0) <= 3 * estimates.std(ddof=1) / np.sqrt(estimates.size)
