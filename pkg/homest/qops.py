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
"""Dense operator and superoperator algebra for small open quantum systems.

Operators are plain ``numpy`` complex arrays. Superoperators act on
column-stacked operators: ``vec(rho) = rho.reshape(-1, order="F")``, so that
``vec(A rho B) = kron(B.T, A) @ vec(rho)``.

Qubit basis: index 0 is the ground state |g>, index 1 the excited state |e>,
and sigma_minus = |g><e|. The Pauli operators follow the standard algebra,
sigma_x = sigma_minus + sigma_plus, sigma_y = i (sigma_minus - sigma_plus),
sigma_z = |e><e| - |g><g|, and the homodyne phase selects
sigma_phi = cos(phi) sigma_x - sin(phi) sigma_y.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.fft
import scipy.linalg
from scipy.integrate import solve_ivp

from .errors import (
    DegenerateSteadyStateError,
    DimensionError,
    NonHermitianError,
    NumericalError,
)

logger = logging.getLogger(__name__)

HERMITIAN_RTOL = 1e-12
DEGENERACY_RTOL = 1e-8
STEADY_RESIDUAL_TOL = 1e-10

SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T
SIGMA_X = SIGMA_MINUS + SIGMA_PLUS
SIGMA_Y = 1j * (SIGMA_MINUS - SIGMA_PLUS)
SIGMA_Z = np.diag([-1.0, 1.0]).astype(complex)
GROUND = np.diag([1.0, 0.0]).astype(complex)
EXCITED = np.diag([0.0, 1.0]).astype(complex)


def vectorize(rho: np.ndarray) -> np.ndarray:
    """Column-stack an operator."""
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def unvectorize(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    vec = np.asarray(vec, dtype=complex)
    dim = int(round(np.sqrt(vec.shape[0])))
    if dim * dim != vec.shape[0]:
        raise DimensionError(f"Vector of length {vec.shape[0]} is not a vectorized square matrix")
    return vec.reshape((dim, dim), order="F")


def trace_row(dim: int) -> np.ndarray:
    """Row vector ``t`` with ``t @ vec(rho) == Tr(rho)``."""
    return vectorize(np.eye(dim))


def spre(op: np.ndarray) -> np.ndarray:
    """Superoperator of left multiplication, rho -> op rho."""
    op = np.asarray(op, dtype=complex)
    return np.kron(np.eye(op.shape[0]), op)


def spost(op: np.ndarray) -> np.ndarray:
    """Superoperator of right multiplication, rho -> rho op."""
    op = np.asarray(op, dtype=complex)
    return np.kron(op.T, np.eye(op.shape[0]))


def _as_square(op, name: str) -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {op.shape}")
    return op


def check_hermitian(op: np.ndarray, name: str = "Hamiltonian") -> None:
    """Raise NonHermitianError when ``op`` differs from its adjoint beyond a relative tolerance.

    Args:
        op: Square operator to check.
        name: Label used in the error message.

    Raises:
        NonHermitianError: If ||op - op^+|| exceeds HERMITIAN_RTOL max(||op||, 1).
    """
    scale = max(np.linalg.norm(op), 1.0)
    deviation = np.linalg.norm(op - op.conj().T)
    if deviation > HERMITIAN_RTOL * scale:
        raise NonHermitianError(f"{name} is not Hermitian (deviation {deviation:.3e})")


def build_liouvillian(H: np.ndarray, cs: Sequence[np.ndarray]) -> np.ndarray:
    """Matrix of rho -> -i[H, rho] + sum_k (c_k rho c_k^+ - {c_k^+ c_k, rho}/2)."""
    H = _as_square(H, "H")
    check_hermitian(H)
    dim = H.shape[0]
    L = -1j * (spre(H) - spost(H))
    for k, c in enumerate(cs):
        c = _as_square(c, f"collapse operator {k}")
        if c.shape[0] != dim:
            raise DimensionError(f"collapse operator {k} has dim {c.shape[0]}, H has dim {dim}")
        cdc = c.conj().T @ c
        L += np.kron(c.conj(), c) - 0.5 * spre(cdc) - 0.5 * spost(cdc)
    return L


def measurement_superop(c: np.ndarray, phi: float) -> np.ndarray:
    """Homodyne map rho -> c rho e^{-i phi} + rho c^+ e^{i phi} (efficiency not included)."""
    c = _as_square(c, "monitored operator")
    return np.exp(-1j * phi) * spre(c) + np.exp(1j * phi) * spost(c.conj().T)


def _sandwich(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> P rho Q^+."""
    return np.kron(Q.conj(), P)


def measurement_step(
    H: np.ndarray,
    cs: Sequence[np.ndarray],
    monitored_index: int,
    phi: float,
    eta: float,
    dt: float,
) -> np.ndarray:
    """Superoperators (K0, K1, K2) of one completely positive measurement step.

    With s = sqrt(eta) dy the un-normalized state moves as
    rho -> (K0 + s K1 + s**2 K2) rho = M rho M^+ + (1 - eta) dt c rho c^+
    + dt sum_k c_k rho c_k^+ over unmonitored channels, where
    M = A + s e^{-i phi} c, A = 1 - i H dt - G dt / 2 and G = sum_k c_k^+ c_k.
    Every Kraus operator is right-multiplied by S^{-1/2},
    S = A^+ A + G dt, so the step preserves the trace on average over
    dy ~ N(0, dt). To first order in dt this is the Ito update
    rho + L rho dt + s X_phi rho, and every step keeps rho positive.

    Args:
        H: Hamiltonian.
        cs: Collapse operators.
        monitored_index: Which of ``cs`` is homodyned.
        phi: Local oscillator phase.
        eta: Detection efficiency.
        dt: Step length.

    Returns:
        Array of shape (3, dim**2, dim**2).
    """
    H = _as_square(H, "H")
    check_hermitian(H)
    dim = H.shape[0]
    cs = [_as_square(c, f"collapse operator {k}") for k, c in enumerate(cs)]
    if any(c.shape[0] != dim for c in cs):
        raise DimensionError(f"collapse operators must have dim {dim}")
    G = sum((c.conj().T @ c for c in cs), np.zeros((dim, dim), dtype=complex))
    A = np.eye(dim) - 1j * H * dt - 0.5 * G * dt
    w, V = np.linalg.eigh(A.conj().T @ A + G * dt)
    S_inv_sqrt = (V * w**-0.5) @ V.conj().T
    A = A @ S_inv_sqrt
    cs = [c @ S_inv_sqrt for c in cs]
    c = cs[monitored_index]
    B = np.exp(-1j * phi) * c
    K0 = _sandwich(A, A) + (1.0 - eta) * dt * _sandwich(c, c)
    for k, other in enumerate(cs):
        if k != monitored_index:
            K0 += dt * _sandwich(other, other)
    K1 = _sandwich(B, A) + _sandwich(A, B)
    K2 = _sandwich(B, B)
    return np.stack([K0, K1, K2])


def steady_state(L: np.ndarray) -> np.ndarray:
    """Unique normalized null vector of ``L``, as a density matrix.

    Solved directly by replacing the first (redundant) row of ``L`` with the
    trace condition.
    """
    L = np.asarray(L, dtype=complex)
    n = L.shape[0]
    dim = int(round(np.sqrt(n)))
    singular_values = scipy.linalg.svdvals(L)
    norm = singular_values[0]
    if n > 1 and singular_values[-2] < DEGENERACY_RTOL * norm:
        raise DegenerateSteadyStateError(
            f"Liouvillian null space is degenerate (second smallest singular value "
            f"{singular_values[-2]:.3e}, norm {norm:.3e})"
        )
    A = L.copy()
    A[0, :] = trace_row(dim)
    b = np.zeros(n, dtype=complex)
    b[0] = 1.0
    vec = scipy.linalg.solve(A, b)
    residual = np.linalg.norm(L @ vec)
    logger.debug(f"steady state residual {residual:.3e}")
    if not np.isfinite(residual) or residual > STEADY_RESIDUAL_TOL * max(norm, 1.0):
        raise NumericalError(f"steady state residual {residual:.3e} above tolerance")
    rho = unvectorize(vec)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def propagator(L: np.ndarray, tau: float) -> np.ndarray:
    """exp(L tau) for tau >= 0."""
    if tau < 0:
        raise ValueError(f"propagation time must be non-negative, got {tau}")
    return scipy.linalg.expm(np.asarray(L, dtype=complex) * tau)


def evolve_unconditional(L: np.ndarray, rho0: np.ndarray, times: Sequence[float]) -> list[np.ndarray]:
    """Adaptive ODE integration of d rho/dt = L rho, sampled at ``times``."""
    L = np.asarray(L, dtype=complex)
    times = np.asarray(times, dtype=float)
    sol = solve_ivp(
        lambda _t, y: L @ y,
        (0.0, float(times[-1])),
        vectorize(rho0),
        method="DOP853",
        t_eval=times,
        rtol=1e-11,
        atol=1e-13,
    )
    if not sol.success:
        raise NumericalError(f"unconditional evolution failed: {sol.message}")
    return [unvectorize(sol.y[:, k]) for k in range(len(times))]


def bloch_vector(rho: np.ndarray) -> tuple[float, float, float]:
    """(<sx>, <sy>, <sz>) of a qubit density matrix."""
    rho = np.asarray(rho, dtype=complex)
    return tuple(float(np.trace(s @ rho).real) for s in (SIGMA_X, SIGMA_Y, SIGMA_Z))


@dataclass(frozen=True)
class SystemModel:
    """An open system with one homodyned decay channel and an unknown parameter.

    ``hamiltonian`` and ``collapse_ops`` are factories of the parameter value.
    ``hamiltonian_derivative`` gives dH/dtheta in closed form when the
    parameter enters only through the Hamiltonian. ``qfi_rate`` is the quantum
    Fisher information per unit time, when known for the preset.
    """

    dim: int
    hamiltonian: Callable[[float], np.ndarray]
    collapse_ops: Callable[[float], Sequence[np.ndarray]]
    monitored_index: int = 0
    phi: float = 0.0
    eta: float = 1.0
    parameter: str = "theta"
    units: str = "gamma"
    hamiltonian_derivative: Callable[[float], np.ndarray] | None = field(default=None, compare=False)
    collapse_depends_on_theta: bool = False
    qfi_rate: float | None = None

    def __post_init__(self):
        if self.dim < 2:
            raise DimensionError(f"Hilbert space dimension must be >= 2, got {self.dim}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"detection efficiency must lie in [0, 1], got {self.eta}")
        if self.monitored_index < 0:
            raise ValueError("monitored_index must be non-negative")

    def operators(self, theta: float) -> tuple[np.ndarray, list[np.ndarray]]:
        H = _as_square(self.hamiltonian(theta), "H")
        cs = [_as_square(c, "collapse operator") for c in self.collapse_ops(theta)]
        if H.shape[0] != self.dim:
            raise DimensionError(f"H has dim {H.shape[0]}, model declares {self.dim}")
        if self.monitored_index >= len(cs):
            raise DimensionError(
                f"monitored_index {self.monitored_index} out of range for {len(cs)} collapse operators"
            )
        return H, cs

    def liouvillian(self, theta: float) -> np.ndarray:
        H, cs = self.operators(theta)
        return build_liouvillian(H, cs)

    def measurement(self, theta: float) -> np.ndarray:
        _, cs = self.operators(theta)
        return measurement_superop(cs[self.monitored_index], self.phi)

    def steady_state(self, theta: float) -> np.ndarray:
        return steady_state(self.liouvillian(theta))

    def step_superops(self, theta: float, dt: float) -> np.ndarray:
        H, cs = self.operators(theta)
        return measurement_step(H, cs, self.monitored_index, self.phi, self.eta, dt)

    def with_channel(self, phi: float | None = None, eta: float | None = None) -> "SystemModel":
        return replace(
            self,
            phi=self.phi if phi is None else phi,
            eta=self.eta if eta is None else eta,
        )

    def fingerprint(self, sample_thetas: Sequence[float] = (0.7, 1.3)) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.dim}|{self.monitored_index}|{self.phi!r}|{self.eta!r}|{self.parameter}".encode())
        for theta in sample_thetas:
            H, cs = self.operators(theta)
            digest.update(np.ascontiguousarray(H).tobytes())
            for c in cs:
                digest.update(np.ascontiguousarray(c).tobytes())
        return digest.hexdigest()[:16]


def qubit_model(
    param: str = "omega",
    omega: float = 1.0,
    delta: float = 0.0,
    gamma: float = 1.0,
    phi: float = 0.0,
    eta: float = 1.0,
) -> SystemModel:
    """Driven two-level emitter H = -delta s+s- + (Omega/2)(s- + s+), c = sqrt(gamma) s-.

    ``param`` selects which of omega, delta or gamma is the unknown; the other
    two are fixed at the given values.
    """
    if gamma <= 0:
        raise ValueError(f"decay rate must be positive, got {gamma}")
    excited = SIGMA_PLUS @ SIGMA_MINUS

    if param == "omega":
        return SystemModel(
            dim=2,
            hamiltonian=lambda th: -delta * excited + 0.5 * th * SIGMA_X,
            collapse_ops=lambda th: [np.sqrt(gamma) * SIGMA_MINUS],
            phi=phi,
            eta=eta,
            parameter="omega",
            hamiltonian_derivative=lambda th: 0.5 * SIGMA_X,
            qfi_rate=4.0 / gamma if delta == 0 else None,
        )
    if param == "delta":
        return SystemModel(
            dim=2,
            hamiltonian=lambda th: -th * excited + 0.5 * omega * SIGMA_X,
            collapse_ops=lambda th: [np.sqrt(gamma) * SIGMA_MINUS],
            phi=phi,
            eta=eta,
            parameter="delta",
            hamiltonian_derivative=lambda th: -excited,
        )
    if param == "gamma":
        return SystemModel(
            dim=2,
            hamiltonian=lambda th: -delta * excited + 0.5 * omega * SIGMA_X,
            collapse_ops=lambda th: [np.sqrt(th) * SIGMA_MINUS],
            phi=phi,
            eta=eta,
            parameter="gamma",
            collapse_depends_on_theta=True,
        )
    raise ValueError(f"unknown qubit parameter {param!r} (expected omega, delta or gamma)")


def liouvillian_derivative(model: SystemModel, theta: float, dtheta: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """(dL/dtheta, dX_phi/dtheta) at ``theta``."""
    if model.hamiltonian_derivative is not None and not model.collapse_depends_on_theta:
        dH = _as_square(model.hamiltonian_derivative(theta), "dH/dtheta")
        if dH.shape[0] != model.dim:
            raise DimensionError(f"dH/dtheta has dim {dH.shape[0]}, model declares {model.dim}")
        dL = -1j * (spre(dH) - spost(dH))
        return dL, np.zeros_like(dL)
    dL = (model.liouvillian(theta + dtheta) - model.liouvillian(theta - dtheta)) / (2 * dtheta)
    dX = (model.measurement(theta + dtheta) - model.measurement(theta - dtheta)) / (2 * dtheta)
    return dL, dX


def step_derivative(model: SystemModel, theta: float, dt: float, dtheta: float = 1e-4) -> np.ndarray:
    """d(K0, K1, K2)/dtheta of :func:`measurement_step` by central difference."""
    return (model.step_superops(theta + dtheta, dt) - model.step_superops(theta - dtheta, dt)) / (2 * dtheta)


def mean_signal(model: SystemModel, theta: float) -> float:
    """Stationary mean homodyne current I = sqrt(eta) Tr[X_phi rho_st], in units sqrt(gamma)."""
    X = model.measurement(theta)
    rho_ss = model.steady_state(theta)
    return float(np.sqrt(model.eta) * (trace_row(model.dim) @ X @ vectorize(rho_ss)).real)


def qrt_zero_lag(model: SystemModel, theta: float) -> float:
    """tau -> 0+ limit of the smooth two-time correlation, eta Tr[X X rho_st]."""
    X = model.measurement(theta)
    rho_ss = model.steady_state(theta)
    return float(model.eta * (trace_row(model.dim) @ X @ X @ vectorize(rho_ss)).real)


def _validate_lags(taus: np.ndarray) -> None:
    if taus.ndim != 1 or taus.size == 0:
        raise ValueError("lag grid must be a non-empty 1-d array")
    if np.any(taus <= 0):
        raise ValueError("lags must be strictly positive (the delta(tau) shot-noise term is excluded)")
    if np.any(np.diff(taus) <= 0):
        raise ValueError("lag grid must be strictly increasing")


def qrt_two_time(
    model: SystemModel,
    theta: float,
    taus: Sequence[float],
    mean_subtract: bool = False,
) -> np.ndarray:
    """Smooth part of F1(tau) = eta Tr[X e^{L tau} X rho_st] on a positive lag grid.

    The shot-noise term delta(tau) is never represented. Uniform grids are
    propagated with a single step propagator.
    """
    taus = np.asarray(taus, dtype=float)
    _validate_lags(taus)
    L = model.liouvillian(theta)
    X = model.measurement(theta)
    rho_ss = steady_state(L)
    readout = trace_row(model.dim) @ X
    state = X @ vectorize(rho_ss)

    steps = np.diff(np.concatenate(([0.0], taus)))
    uniform = steps.size > 2 and np.allclose(steps[1:], steps[1], rtol=1e-9, atol=0.0)
    step_propagator = propagator(L, steps[1]) if uniform else None

    out = np.empty(taus.size)
    for k, step in enumerate(steps):
        P = step_propagator if (uniform and k > 0) else propagator(L, step)
        state = P @ state
        out[k] = (readout @ state).real
    out *= model.eta
    if mean_subtract:
        out -= mean_signal(model, theta) ** 2
    return out


def multi_time(model: SystemModel, theta: float, lags: Sequence[float], n: int) -> float:
    """n-point current correlation eta^{n/2} Tr[X e^{L tau_{n-1}} X ... e^{L tau_1} X rho_st].

    ``lags`` holds the n - 1 positive intervals between successive readouts,
    earliest first.
    """
    lags = np.asarray(lags, dtype=float)
    if n < 2 or n % 2:
        raise ValueError(f"correlation order n must be even and >= 2, got {n}")
    if lags.size != n - 1:
        raise ValueError(f"expected {n - 1} lag intervals for n = {n}, got {lags.size}")
    if np.any(lags <= 0):
        raise ValueError("lag intervals must be strictly positive")
    L = model.liouvillian(theta)
    X = model.measurement(theta)
    state = X @ vectorize(steady_state(L))
    for tau in lags:
        state = X @ (propagator(L, tau) @ state)
    return float(model.eta ** (n // 2) * (trace_row(model.dim) @ state).real)


@dataclass(frozen=True)
class Spectrum:
    omega: np.ndarray
    values: np.ndarray
    shot_floor: bool


SPECTRUM_DECAY_TOL = 1e-6


def _even_cosine_transform(g: np.ndarray, dtau: float, omega: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Trapezoid rule for 2 * int_0^{tau_max} g(tau) cos(omega tau) d tau, with g[0] at tau = 0."""
    taus = dtau * np.arange(g.size)
    weights = np.full(g.size, 2.0 * dtau)
    weights[0] = dtau
    weights[-1] = dtau
    wg = weights * g
    out = np.empty(omega.size)
    for start in range(0, omega.size, chunk):
        block = omega[start : start + chunk]
        out[start : start + chunk] = np.cos(np.outer(block, taus)) @ wg
    return out


def power_spectrum(
    f1: Sequence[float],
    dtau: float,
    f0: float | None = None,
    include_shot_floor: bool = False,
    omega: Sequence[float] | None = None,
) -> Spectrum:
    """S(omega) = int F1(tau) e^{-i omega tau} d tau from F1 sampled at tau = dtau, 2 dtau, ...

    F1 is extended evenly, F1(-tau) = F1(tau), which stationarity justifies.
    ``f0`` is the tau -> 0+ value (linear extrapolation when omitted). Without
    ``omega`` the transform is a DFT of the even sequence on its natural
    frequency grid 2 pi fftfreq(2K, dtau); with ``omega`` the same trapezoid
    rule is evaluated directly on the requested frequencies. No 1/2pi factor
    is applied, so int S d omega / 2 pi = F1(0+).
    """
    f1 = np.asarray(f1, dtype=float)
    if f1.ndim != 1 or f1.size < 2:
        raise ValueError("need at least two correlation samples")
    if dtau <= 0:
        raise ValueError(f"lag spacing must be positive, got {dtau}")
    peak = np.max(np.abs(f1))
    ratio = abs(f1[-1]) / peak if peak > 0 else 0.0
    if ratio > SPECTRUM_DECAY_TOL:
        logger.warning(f"⚠️  correlation has not decayed at tau_max (decay ratio {ratio:.2e}); spectrum will show truncation ripple")
    if f0 is None:
        f0 = 2.0 * f1[0] - f1[1]
    g = np.concatenate(([f0], f1))

    if omega is None:
        K = f1.size
        sequence = np.concatenate((g, g[-2:0:-1]))
        transform = scipy.fft.fft(sequence) * dtau
        imag = np.max(np.abs(transform.imag))
        if imag > 1e-10 * max(np.max(np.abs(transform.real)), 1.0):
            raise NumericalError(f"spectrum has an imaginary part {imag:.3e}")
        omega_grid = 2 * np.pi * scipy.fft.fftfreq(2 * K, dtau)
        order = np.argsort(omega_grid, kind="stable")
        omega_out, values = omega_grid[order], transform.real[order]
    else:
        omega_out = np.asarray(omega, dtype=float)
        values = _even_cosine_transform(g, dtau, omega_out)

    if include_shot_floor:
        values = values + 1.0
    return Spectrum(omega=omega_out, values=values, shot_floor=include_shot_floor)
