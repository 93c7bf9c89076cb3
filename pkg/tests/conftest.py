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
"""Shared fixtures for the homest test suite."""

import numpy as np
import pytest

from homest.qops import qubit_model

HALF_PI = np.pi / 2


@pytest.fixture
def quadrature_model():
    """Rabi-frequency model measured in the phi = pi/2 quadrature."""
    return qubit_model(param="omega", phi=HALF_PI)


@pytest.fixture
def in_phase_model():
    return qubit_model(param="omega", phi=0.0)


@pytest.fixture
def blind_model():
    """Zero detection efficiency: the record is pure white noise."""
    return qubit_model(param="omega", phi=HALF_PI, eta=0.0)


@pytest.fixture
def workers():
    return 4
