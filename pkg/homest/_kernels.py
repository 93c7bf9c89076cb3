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
"""Compiled per-step loops for trajectories, filters and Fisher scores.

All states are column-stacked vectors of length dim**2 (see ``homest.qops``).
Each step applies the completely positive map of
``homest.qops.measurement_step``. Kernels release the GIL so ensembles can
run on a thread pool. Sums are accumulated in a fixed order, so a
trajectory's output does not depend on which thread ran it.
"""

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_NON_FINITE = 1

NEGATIVE_EIG_TOL = 1e-9


@njit(nogil=True)
def _matvec(A, v, out):
    n = v.shape[0]
    for r in range(n):
        acc = 0j
        for c in range(n):
            acc += A[r, c] * v[c]
        out[r] = acc


@njit(nogil=True)
def _kraus_apply(K, s, v, out):
    """out = (K[0] + s K[1] + s**2 K[2]) v."""
    n = v.shape[0]
    s2 = s * s
    for r in range(n):
        acc = 0j
        for c in range(n):
            acc += (K[0, r, c] + s * K[1, r, c] + s2 * K[2, r, c]) * v[c]
        out[r] = acc


@njit(nogil=True)
def _trace(v, dim):
    acc = 0.0
    for k in range(dim):
        acc += v[k * (dim + 1)].real
    return acc


@njit(nogil=True)
def _hermitize(v, dim):
    for c in range(dim):
        for r in range(c, dim):
            h = 0.5 * (v[c * dim + r] + v[r * dim + c].conjugate())
            v[c * dim + r] = h
            v[r * dim + c] = h.conjugate()


@njit(nogil=True)
def _repair(rho, dim):
    """Symmetrize, clip negative eigenvalues at zero and renormalize, in place.

    Returns the smallest eigenvalue before clipping, or nan when the state
    is no longer finite.
    """
    _hermitize(rho, dim)
    if dim == 2:
        a = rho[0].real
        d = rho[3].real
        b = rho[2]
        radius = math.sqrt(0.25 * (a - d) ** 2 + b.real**2 + b.imag**2)
        min_eig = 0.5 * (a + d) - radius
        if not math.isfinite(min_eig):
            return math.nan
        if min_eig < 0.0:
            # rank-one projection lambda_max (rho - lambda_min) / (lambda_max - lambda_min)
            max_eig = min_eig + 2.0 * radius
            scale = max_eig / (2.0 * radius) if radius > 0.0 else 0.0
            rho[0] = scale * (rho[0] - min_eig)
            rho[3] = scale * (rho[3] - min_eig)
            rho[1] = scale * rho[1]
            rho[2] = scale * rho[2]
    else:
        M = np.empty((dim, dim), dtype=np.complex128)
        for c in range(dim):
            for r in range(dim):
                M[r, c] = rho[c * dim + r]
        w, V = np.linalg.eigh(M)
        min_eig = w[0]
        if not math.isfinite(min_eig):
            return math.nan
        if min_eig < 0.0:
            for c in range(dim):
                for r in range(dim):
                    acc = 0j
                    for k in range(dim):
                        if w[k] > 0.0:
                            acc += w[k] * V[r, k] * V[c, k].conjugate()
                    rho[c * dim + r] = acc
    tr = _trace(rho, dim)
    if not (tr > 0.0 and math.isfinite(tr)):
        return math.nan
    for k in range(rho.shape[0]):
        rho[k] = rho[k] / tr
    return min_eig


@njit(nogil=True)
def sme_trajectory(K, X, rho0, noise, dt, sqrt_eta, dim, stride):
    """Integrate the homodyne stochastic master equation with the Kraus step ``K``.

    ``noise`` holds the Wiener increments. The record increment of step i is
    produced from the pre-update state. ``stride`` > 0 keeps every
    stride-th state (including the initial one).
    """
    n = noise.shape[0]
    d2 = dim * dim
    dy = np.zeros(n)
    n_keep = n // stride + 1 if stride > 0 else 0
    states = np.empty((n_keep, d2), dtype=np.complex128)
    rho = rho0.copy()
    nxt = np.empty(d2, dtype=np.complex128)
    Xrho = np.empty(d2, dtype=np.complex128)
    if n_keep > 0:
        states[0] = rho
    n_clipped = 0
    n_negative = 0
    worst = np.inf
    for i in range(n):
        _matvec(X, rho, Xrho)
        ex = _trace(Xrho, dim)
        dy[i] = sqrt_eta * ex * dt + noise[i]
        _kraus_apply(K, sqrt_eta * dy[i], rho, nxt)
        rho, nxt = nxt, rho
        min_eig = _repair(rho, dim)
        if math.isnan(min_eig):
            return dy, states, n_clipped, n_negative, worst, STATUS_NON_FINITE
        if min_eig < worst:
            worst = min_eig
        if min_eig < 0.0:
            n_clipped += 1
        if min_eig < -NEGATIVE_EIG_TOL:
            n_negative += 1
        if stride > 0 and (i + 1) % stride == 0:
            states[(i + 1) // stride] = rho
    return dy, states, n_clipped, n_negative, worst, STATUS_OK


@njit(nogil=True)
def filter_loglik(Ks, rho0s, dy, sqrt_eta, dim, checkpoints, renorm_every):
    """Linear (un-normalized) filter for each candidate, log Tr at each checkpoint.

    ``Ks`` stacks the Kraus step of every candidate. ``checkpoints`` are
    sorted step counts in [0, len(dy)].
    """
    n = dy.shape[0]
    n_cand = Ks.shape[0]
    n_ck = checkpoints.shape[0]
    d2 = dim * dim
    out = np.zeros((n_ck, n_cand))
    nxt = np.empty(d2, dtype=np.complex128)
    for c in range(n_cand):
        rho = rho0s[c].copy()
        K = Ks[c]
        log_norm = 0.0
        ck = 0
        while ck < n_ck and checkpoints[ck] == 0:
            out[ck, c] = math.log(_trace(rho, dim))
            ck += 1
        for i in range(n):
            _kraus_apply(K, sqrt_eta * dy[i], rho, nxt)
            rho, nxt = nxt, rho
            if (i + 1) % renorm_every == 0:
                tr = _trace(rho, dim)
                if not (tr > 0.0 and math.isfinite(tr)):
                    return out, STATUS_NON_FINITE
                log_norm += math.log(tr)
                for k in range(d2):
                    rho[k] = rho[k] / tr
            while ck < n_ck and checkpoints[ck] == i + 1:
                tr = _trace(rho, dim)
                if not (tr > 0.0 and math.isfinite(tr)):
                    return out, STATUS_NON_FINITE
                out[ck, c] = log_norm + math.log(tr)
                ck += 1
    return out, STATUS_OK


@njit(nogil=True)
def score_trajectory(K, dK, X, rho0, zeta0, noise, dt, sqrt_eta, dim, checkpoints):
    """Co-integrate the conditional state and the score operator zeta.

    zeta is the theta-derivative of the un-normalized filter state divided by
    its trace, so Tr zeta is the derivative of the log-likelihood. Returns
    Tr zeta at each checkpoint (sorted step counts).
    """
    n = noise.shape[0]
    d2 = dim * dim
    n_ck = checkpoints.shape[0]
    scores = np.zeros(n_ck)
    rho = rho0.copy()
    zeta = zeta0.copy()
    Xrho = np.empty(d2, dtype=np.complex128)
    rho_next = np.empty(d2, dtype=np.complex128)
    zeta_next = np.empty(d2, dtype=np.complex128)
    source = np.empty(d2, dtype=np.complex128)
    ck = 0
    while ck < n_ck and checkpoints[ck] == 0:
        scores[ck] = _trace(zeta, dim)
        ck += 1
    for i in range(n):
        _matvec(X, rho, Xrho)
        s = sqrt_eta * (sqrt_eta * _trace(Xrho, dim) * dt + noise[i])
        _kraus_apply(K, s, rho, rho_next)
        _kraus_apply(K, s, zeta, zeta_next)
        _kraus_apply(dK, s, rho, source)
        tr = _trace(rho_next, dim)
        if not (tr > 0.0 and math.isfinite(tr)):
            return scores, STATUS_NON_FINITE
        for k in range(d2):
            zeta[k] = (zeta_next[k] + source[k]) / tr
            rho[k] = rho_next[k]
        _hermitize(zeta, dim)
        if math.isnan(_repair(rho, dim)):
            return scores, STATUS_NON_FINITE
        while ck < n_ck and checkpoints[ck] == i + 1:
            tr = _trace(zeta, dim)
            if not math.isfinite(tr):
                return scores, STATUS_NON_FINITE
            scores[ck] = tr
            ck += 1
    return scores, STATUS_OK
