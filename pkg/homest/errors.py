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
"""Exception hierarchy for homest."""


class HomestError(Exception):
    """Base class for all homest errors."""


class ConfigError(HomestError, ValueError):
    """Invalid or unknown configuration value."""


class DimensionError(HomestError, ValueError):
    """Operators or derivatives with mismatched dimensions."""


class NonHermitianError(HomestError, ValueError):
    """A Hamiltonian that is not Hermitian within tolerance."""


class RecordError(HomestError, ValueError):
    """Malformed measurement record or incompatible record settings."""


class NumericalError(HomestError, RuntimeError):
    """Non-finite values or a singular quantity during a computation."""


class DegenerateSteadyStateError(NumericalError):
    """The Liouvillian has more than one stationary state."""


class InsufficientDecayError(NumericalError):
    """A correlation integrand has not decayed at the end of the lag grid."""
