"""Closed-form link model: INI, ICI, SINR, rates and latency.

Tensors are indexed ``[..., k, m, i, n]`` (BS, user, numerology, subcarrier),
all 0-based. Numerology 0 is the narrow one (N1 subcarriers), numerology 1
the wide one (N2 subcarriers, spacing ratio Q). Powers are in watts and
rates in b/s/Hz.

The scalar functions (``ini_term``, ``ici_term``, ``sinr``, ``link_rate``)
evaluate one index tuple by direct summation. ``LinkModel`` evaluates the
same quantities for whole tensors and provides reverse-mode gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scenario import NumerologyGrid

LN2 = math.log(2.0)
SINGULAR_TOL = 1e-12


def ini_kernel(u, shift: int, Q: int, N1: int):
    """Squared sine-ratio ``|sin(pi u/Q) / sin(pi (u+shift) / (2 N1))|^2``.

    Where the denominator vanishes the numerator vanishes too (Q divides N1)
    and the ratio is replaced by its limit, the ratio of derivatives.
    """
    u = np.asarray(u, dtype=float)
    num = np.sin(np.pi * u / Q)
    # integer multiples of Q are exact zeros (sin(k pi) would leave ~1e-16)
    num = np.where((u == np.round(u)) & (np.mod(np.round(u), Q) == 0), 0.0, num)
    den = np.sin(np.pi * (u + shift) / (2 * N1))
    singular = np.abs(den) < SINGULAR_TOL
    if np.any(singular & (np.abs(num) > 1e-9)):
        raise ValueError(f"INI kernel has a pole for Q={Q}, N1={N1}; Q must divide N1")
    safe_den = np.where(singular, 1.0, den)
    ratio = np.where(
        singular,
        (2 * N1 / Q) * np.cos(np.pi * u / Q) / np.cos(np.pi * (u + shift) / (2 * N1)),
        num / safe_den,
    )
    return ratio**2


@lru_cache(maxsize=64)
def _ini_weights(counts: tuple[int, ...], Q: int):
    N1, N2 = counts
    n = np.arange(N1)[:, None]
    v = np.arange(N2)[None, :]
    narrow = ini_kernel(Q * v - n, N1, Q, N1) / N1**2  # victim narrow n, source wide v
    n = np.arange(N2)[:, None]
    v = np.arange(N1)[None, :]
    wide = ini_kernel(v - Q * n, -N1, Q, N1) / (2 * N1**2)  # victim wide n, source narrow v
    narrow.setflags(write=False)
    wide.setflags(write=False)
    return narrow, wide


def ini_weights(grid: NumerologyGrid):
    """INI weight matrices ``(W_narrow[N1, N2], W_wide[N2, N1])``, or None for one numerology."""
    if grid.num == 1:
        return None
    if grid.num != 2:
        raise ValueError("the INI model is defined for one or two numerologies only")
    return _ini_weights(grid.counts, grid.ratio)


def ini_coupling(n: int, n_victim: int, i_victim: int, grid: NumerologyGrid) -> float:
    """d INI[i_victim, n_victim] / d p[other numerology, n] for one BS-user pair.

    ``n`` is the subcarrier of the power variable on the numerology other than
    ``i_victim``. Indices on the wide numerology are reduced modulo N2.
    """
    W = ini_weights(grid)
    if W is None:
        return 0.0
    N2 = grid.counts[1]
    if i_victim == 0:
        return float(W[0][n_victim, n % N2])
    return float(W[1][n_victim % N2, n])


def ini_term(p: np.ndarray, k: int, m: int, n: int, i: int, grid: NumerologyGrid) -> float:
    """INI on subcarrier ``n`` of numerology ``i`` seen by user ``m`` from BS ``k``.

    For the wide numerology ``n`` may run over Q*N2 positions; it is reduced
    to ``n mod N2`` (the INI pattern repeats every N2 subcarriers).
    """
    if grid.num == 1:
        return 0.0
    N1, N2 = grid.counts
    Q = grid.ratio
    if i == 0:
        if not 0 <= n < N1:
            raise IndexError(f"subcarrier {n} out of range for numerology 0")
        total = 0.0
        for v in range(N2):
            total += p[k, m, 1, v] / N1**2 * float(ini_kernel(Q * v - n, N1, Q, N1))
        return total
    if i == 1:
        if not 0 <= n < Q * N2:
            raise IndexError(f"subcarrier {n} out of range for numerology 1")
        n = n % N2
        total = 0.0
        for v in range(N1):
            total += p[k, m, 0, v] / (2 * N1**2) * float(ini_kernel(v - Q * n, -N1, Q, N1))
        return total
    raise IndexError(f"numerology {i} out of range")


def ici_term(p, x, gain_sq, k, m, n, i) -> float:
    """Interference from the other BSs' transmissions to the other users."""
    K, M = gain_sq.shape[:2]
    total = 0.0
    for kk in range(K):
        if kk == k:
            continue
        for mm in range(M):
            if mm == m:
                continue
            total += p[kk, mm, i, n] * x[kk, mm, i, n] * gain_sq[kk, mm, i, n]
    return total


def sinr(p, x, gain_sq, k, m, n, i, noise: float, grid: NumerologyGrid) -> float:
    """Joint-transmission SINR of user ``m`` on ``(i, n)`` as seen at BS ``k``'s link."""
    K = gain_sq.shape[0]
    signal = sum(p[kk, m, i, n] * x[kk, m, i, n] * gain_sq[kk, m, i, n] for kk in range(K))
    ini = ini_term(p, k, m, n, i, grid)
    coupled = sum(x[j, m, i, n] * gain_sq[j, m, i, n] * ini for j in range(K) if j != k)
    return signal / (coupled + ici_term(p, x, gain_sq, k, m, n, i) + noise)


def link_rate(p, x, gain_sq, k, m, n, i, noise: float, grid: NumerologyGrid) -> float:
    return math.log2(1.0 + sinr(p, x, gain_sq, k, m, n, i, noise, grid))


def avg_latency(x: np.ndarray, grid: NumerologyGrid, m: int) -> float:
    """Assignment-weighted mean numerology latency of user ``m`` in ms.

    Returns NaN when the user holds no subcarrier.
    """
    per_num = x[:, m].sum(axis=(0, 2))
    total = per_num.sum()
    if total <= 0:
        return math.nan
    return float(per_num @ grid.latencies / total)


def user_latencies(x: np.ndarray, grid: NumerologyGrid) -> np.ndarray:
    per_num = x.sum(axis=(-4, -1))  # (..., M, I)
    total = per_num.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        lat = per_num @ grid.latencies / total
    return np.where(total > 0, lat, np.nan)


@dataclass
class Fields:
    """Intermediate quantities of one forward evaluation."""

    num: np.ndarray  # (..., M, I, N) joint received signal
    coupling: np.ndarray  # (..., K, M, I, N) sum_{j != k} x_j |h_j|^2
    ini: np.ndarray  # (..., K, M, I, N)
    ici: np.ndarray  # (..., K, M, I, N)
    psi1: np.ndarray  # (..., K, M, I, N) signal + interference + noise
    psi2: np.ndarray  # (..., K, M, I, N) interference + noise


class LinkModel:
    """Vectorised evaluation of the rate model for a fixed channel draw."""

    def __init__(self, gain_sq: np.ndarray, noise: float, grid: NumerologyGrid):
        self.grid = grid
        self.valid = grid.valid
        self.gain = np.where(self.valid, gain_sq, 0.0)
        self.noise = float(noise)
        self.weights = ini_weights(grid)
        self.shape = self.gain.shape

    def ini(self, p: np.ndarray) -> np.ndarray:
        out = np.zeros(np.broadcast_shapes(p.shape, self.shape))
        if self.weights is None:
            return out
        W_narrow, W_wide = self.weights
        N1, N2 = self.grid.counts
        out[..., 0, :N1] = np.einsum("...v,nv->...n", p[..., 1, :N2], W_narrow)
        out[..., 1, :N2] = np.einsum("...v,nv->...n", p[..., 0, :N1], W_wide)
        return out

    def forward(self, p: np.ndarray, x: np.ndarray) -> Fields:
        G = self.gain
        S = p * x * G
        num = S.sum(axis=-4)
        xg = x * G
        coupling = xg.sum(axis=-4, keepdims=True) - xg
        ini = self.ini(p)
        ici = (S.sum(axis=(-4, -3), keepdims=True) - S.sum(axis=-3, keepdims=True)
               - num[..., None, :, :, :] + S)
        # inclusion-exclusion can leave -1e-30 style residue
        ici = np.maximum(ici, 0.0)
        psi2 = coupling * ini + ici + self.noise
        psi1 = psi2 + num[..., None, :, :, :]
        return Fields(num, coupling, ini, ici, psi1, psi2)

    def rates(self, p, x, fields: Fields | None = None) -> np.ndarray:
        f = fields or self.forward(p, x)
        return np.where(self.valid, (np.log(f.psi1) - np.log(f.psi2)) / LN2, 0.0)

    def sum_rate(self, p, x) -> np.ndarray:
        return self.rates(p, x).sum(axis=(-4, -3, -2, -1))

    def user_rates(self, p, x) -> np.ndarray:
        return self.rates(p, x).sum(axis=(-4, -2, -1))

    def log_terms(self, fields: Fields):
        """Per-entry ``log2 psi1`` and ``log2 psi2`` (zero on missing subcarriers)."""
        return (np.where(self.valid, np.log(fields.psi1) / LN2, 0.0),
                np.where(self.valid, np.log(fields.psi2) / LN2, 0.0))

    def backprop(self, p, x, fields: Fields, d1, d2):
        """Gradients w.r.t. ``p`` and ``x`` of ``F`` given ``dF/dpsi1`` and ``dF/dpsi2``.

        ``d1``/``d2`` may carry extra leading batch axes (e.g. one row per
        user constraint); ``p``, ``x`` and ``fields`` broadcast against them.
        """
        G = self.gain
        d1 = np.where(self.valid, d1, 0.0)
        d2 = np.where(self.valid, d2, 0.0)
        d1, d2 = np.broadcast_arrays(d1, d2, np.empty(self.shape))[:2]
        D2 = d1 + d2
        dnum = d1.sum(axis=-4, keepdims=True)
        d_coupling = D2 * fields.ini
        d_ini = D2 * fields.coupling
        dS = (D2.sum(axis=(-4, -3), keepdims=True) - D2.sum(axis=-3, keepdims=True)
              - D2.sum(axis=-4, keepdims=True) + D2) + dnum
        d_xg = d_coupling.sum(axis=-4, keepdims=True) - d_coupling
        dp = dS * x * G
        dx = dS * p * G + d_xg * G
        if self.weights is not None:
            W_narrow, W_wide = self.weights
            N1, N2 = self.grid.counts
            dp = np.array(dp, copy=True)
            dp[..., 1, :N2] += np.einsum("...n,nv->...v", d_ini[..., 0, :N1], W_narrow)
            dp[..., 0, :N1] += np.einsum("...n,nv->...v", d_ini[..., 1, :N2], W_wide)
        return np.where(self.valid, dp, 0.0), np.where(self.valid, dx, 0.0)
