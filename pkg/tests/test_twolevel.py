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
"""Closed forms of the driven two-level emitter against the numerical paths."""

import logging
import math

import numpy as np
import pytest
from pydantic import ValidationError

from homest.correlations import fisher_mean_signal, fisher_two_time
from homest.errors import ConfigError
from homest.qops import bloch_vector, mean_signal, qrt_two_time, qubit_model
from homest.twolevel import (
    QubitParams,
    f1_phi0,
    i1_closed,
    i2_limits,
    i2_strong_closed,
    mean_signal_closed,
    qfi_reference,
    steady_bloch,
)

HALF_PI = np.pi / 2


class TestQubitParams:
    def test_gamma_must_be_positive(self):
        with pytest.raises(ValidationError):
            QubitParams(gamma=0.0)

    def test_efficiency_range(self):
        with pytest.raises(ValidationError):
            QubitParams(eta=1.2)

    def test_detuned_closed_form_rejected(self):
        with pytest.raises(ConfigError):
            steady_bloch(QubitParams(omega=1.0, delta=0.3))


class TestSteadyBloch:
    @pytest.mark.parametrize(
        "omega, expected",
        [(0.0, (0.0, 0.0, -1.0)), (1.0, (0.0, 2 / 3, -1 / 3))],
    )
    def test_values(self, omega, expected):
        assert np.allclose(steady_bloch(QubitParams(omega=omega)), expected)

    def test_saturation(self):
        assert np.allclose(steady_bloch(QubitParams(omega=1e6)), (0.0, 0.0, 0.0), atol=1e-5)

    @pytest.mark.parametrize("omega", [0.3, 1.0, 2.5])
    def test_matches_null_space(self, omega):
        model = qubit_model(omega=omega)
        assert np.allclose(bloch_vector(model.steady_state(omega)), steady_bloch(QubitParams(omega=omega)), atol=1e-12)

    @pytest.mark.parametrize("phi", [0.0, 0.4, HALF_PI, 2.0])
    def test_mean_signal(self, phi):
        p = QubitParams(omega=1.3, phi=phi, eta=0.6)
        assert mean_signal_closed(p) == pytest.approx(mean_signal(qubit_model(phi=phi, eta=0.6), 1.3), abs=1e-12)


class TestCorrelationClosedForm:
    def test_zero_lag_value(self):
        assert f1_phi0(QubitParams(omega=1.0), 1e-12) == pytest.approx(2 / 3, rel=1e-9)

    def test_half_life(self):
        p = QubitParams(omega=0.8)
        assert f1_phi0(p, 2 * math.log(2)) == pytest.approx(0.5 * f1_phi0(p, 1e-12), rel=1e-9)

    def test_matches_regression(self):
        p = QubitParams(omega=1.7, eta=0.8)
        taus = np.linspace(0.05, 12.0, 50)
        numeric = qrt_two_time(qubit_model(phi=0.0, eta=0.8), 1.7, taus)
        assert np.allclose(f1_phi0(p, taus), numeric, atol=1e-8)

    def test_rejects_zero_lag(self):
        with pytest.raises(ValueError):
            f1_phi0(QubitParams(), 0.0)


class TestMeanSignalFisher:
    def test_weak_drive_reaches_qfi_rate(self):
        assert i1_closed(QubitParams(omega=0.0, phi=HALF_PI)) == pytest.approx(4.0)

    def test_zero_at_inflection(self):
        assert i1_closed(QubitParams(omega=1 / math.sqrt(2), phi=HALF_PI)) == pytest.approx(0.0, abs=1e-15)

    def test_zero_in_phase(self):
        assert i1_closed(QubitParams(omega=1.3, phi=0.0)) == 0.0

    @pytest.mark.parametrize("omega, phi, eta", [(0.4, HALF_PI, 1.0), (1.5, 1.0, 0.5), (3.0, 2.2, 0.1)])
    def test_matches_finite_difference(self, omega, phi, eta):
        numeric = fisher_mean_signal(qubit_model(phi=phi, eta=eta), omega)
        assert numeric == pytest.approx(i1_closed(QubitParams(omega=omega, phi=phi, eta=eta)), rel=1e-3)

    def test_even_in_omega(self):
        assert i1_closed(QubitParams(omega=-1.3, phi=1.0)) == i1_closed(QubitParams(omega=1.3, phi=1.0))


class TestCorrelationFisherLimits:
    def test_saturated_asymptote(self):
        assert i2_limits(QubitParams(omega=1e4, phi=HALF_PI), "strong") == pytest.approx(8 / 27, rel=1e-6)

    def test_weak_value(self):
        assert i2_limits(QubitParams(omega=0.05, phi=HALF_PI), "weak") == pytest.approx(0.04)

    def test_strong_plateau(self):
        low = i2_limits(QubitParams(omega=30.0, phi=HALF_PI), "strong")
        high = i2_limits(QubitParams(omega=100.0, phi=HALF_PI), "strong")
        assert abs(low - high) / high < 0.02

    def test_regime_mismatch_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="homest.twolevel"):
            i2_limits(QubitParams(omega=2.0, phi=HALF_PI), "weak")
        assert "weak-driving" in caplog.text

    def test_unknown_regime(self):
        with pytest.raises(ValueError):
            i2_limits(QubitParams(), "moderate")

    def test_in_phase_matches_numerical_integral(self):
        closed = i2_limits(QubitParams(omega=1.0, phi=0.0), "phi0")
        assert fisher_two_time(qubit_model(phi=0.0), 1.0) == pytest.approx(closed, rel=5e-3)

    @pytest.mark.parametrize("eta", [0.1, 0.5, 1.0])
    def test_efficiency_scaling(self, eta):
        full_1 = i1_closed(QubitParams(omega=0.5, phi=1.1))
        full_2 = i2_limits(QubitParams(omega=1.0, phi=0.0), "phi0")
        assert i1_closed(QubitParams(omega=0.5, phi=1.1, eta=eta)) == pytest.approx(eta * full_1, rel=1e-14)
        assert i2_limits(QubitParams(omega=1.0, phi=0.0, eta=eta), "phi0") == pytest.approx(eta**2 * full_2, rel=1e-14)

    def test_closed_forms_even_in_omega(self):
        for regime in ("weak", "strong", "phi0"):
            assert i2_limits(QubitParams(omega=-0.07), regime) == i2_limits(QubitParams(omega=0.07), regime)
        assert i2_strong_closed(QubitParams(omega=-20.0)) == i2_strong_closed(QubitParams(omega=20.0))


class TestQfiReference:
    def test_value(self):
        assert qfi_reference(1.0, 20.0) == 80.0

    def test_linear_in_duration(self):
        assert qfi_reference(0.5, 40.0) == 2 * qfi_reference(0.5, 20.0)
