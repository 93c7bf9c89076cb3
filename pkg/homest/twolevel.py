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
"""Closed forms for the resonantly driven two-level emitter.

All Fisher rates are per unit record time. The mean-signal rate uses
4 eta gamma^3 (2 Omega^2 - gamma^2)^2 / (2 Omega^2 + gamma^2)^4 sin^2 phi, and
the phi = 0 correlation rate uses 16 eta^2 Omega^2 gamma^5 / (2 Omega^2 + gamma^2)^4;
both follow from differentiating the steady state and the phi = 0 correlation
directly.
"""

import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import ConfigError

logger = logging.getLogger(__name__)

WEAK_MAX_OMEGA = 0.1
STRONG_MIN_OMEGA = 10.0


class QubitParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    omega: float = Field(default=1.0, description="Rabi frequency")
    gamma: float = Field(default=1.0, gt=0, description="decay rate, fixes the unit system")
    phi: float = Field(default=0.0, description="local oscillator phase (rad)")
    eta: float = Field(default=1.0, ge=0, le=1, description="detection efficiency")
    delta: float = Field(default=0.0, description="detuning")


def _resonant(p: QubitParams) -> None:
    if p.delta != 0:
        raise ConfigError(f"closed forms require zero detuning, got delta={p.delta}")


def steady_bloch(p: QubitParams) -> tuple[float, float, float]:
    """Resonant steady-state Bloch vector (0, 2 Omega gamma, -gamma^2) / (gamma^2 + 2 Omega^2)."""
    _resonant(p)
    denom = p.gamma**2 + 2 * p.omega**2
    return 0.0, 2 * p.omega * p.gamma / denom, -(p.gamma**2) / denom


def mean_signal_closed(p: QubitParams) -> float:
    s_x, s_y, _ = steady_bloch(p)
    return math.sqrt(p.eta * p.gamma) * (math.cos(p.phi) * s_x - math.sin(p.phi) * s_y)


def f1_phi0(p: QubitParams, tau):
    """Two-time correlation at phi = 0 for tau > 0."""
    _resonant(p)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("f1_phi0 is defined for tau > 0 only")
    value = p.eta * 2 * p.omega**2 * p.gamma * np.exp(-p.gamma * tau / 2) / (2 * p.omega**2 + p.gamma**2)
    return float(value) if value.ndim == 0 else value


def i1_closed(p: QubitParams) -> float:
    """Fisher information rate of the time-averaged signal on resonance.

    Args:
        p: Emitter parameters; ``delta`` must be zero.

    Returns:
        4 eta gamma^3 (2 Omega^2 - gamma^2)^2 sin^2(phi) / (2 Omega^2 + gamma^2)^4.
    """
    _resonant(p)
    g, w2 = p.gamma, p.omega**2
    return 4 * p.eta * g**3 * (2 * w2 - g**2) ** 2 / (2 * w2 + g**2) ** 4 * math.sin(p.phi) ** 2


def i2_strong_closed(p: QubitParams) -> float:
    """Correlation Fisher rate at phi = pi/2 for strong driving; tends to 8/(27 gamma)."""
    _resonant(p)
    g, w2 = p.gamma, p.omega**2
    numerator = 256 * w2 * (243 * g**4 + 216 * g**2 * w2 + 128 * w2**2)
    return p.eta**2 * numerator / (27 * g * (9 * g**2 + 16 * w2) ** 3)


def i2_limits(p: QubitParams, regime: Literal["weak", "strong", "phi0"]) -> float:
    _resonant(p)
    ratio = abs(p.omega) / p.gamma
    if regime == "weak":
        if ratio > WEAK_MAX_OMEGA:
            logger.warning(f"⚠️  weak-driving form used at Omega/gamma={ratio:.3g} > {WEAK_MAX_OMEGA}")
        return 16 * p.eta**2 * p.omega**2 / p.gamma**3
    if regime == "strong":
        if ratio < STRONG_MIN_OMEGA:
            logger.warning(f"⚠️  strong-driving form used at Omega/gamma={ratio:.3g} < {STRONG_MIN_OMEGA}")
        return i2_strong_closed(p)
    if regime == "phi0":
        if not math.isclose(math.cos(p.phi) ** 2, 1.0, abs_tol=1e-12):
            logger.warning(f"⚠️  phi=0 form used at phi={p.phi}")
        g, w2 = p.gamma, p.omega**2
        return 16 * p.eta**2 * w2 * g**5 / (2 * w2 + g**2) ** 4
    raise ValueError(f"unknown regime {regime!r} (expected weak, strong or phi0)")


def qfi_reference(gamma: float, T: float) -> float:
    """Quantum Fisher information 4T/gamma of the resonant Rabi frequency."""
    return 4.0 * T / gamma
