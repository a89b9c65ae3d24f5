"""Observable gains and error-gains of phase-randomised weak coherent pulses
sent by two users through lossy fibres to an untrusted Bell-state relay.

All model functions broadcast over numpy arrays, so a whole batch of
candidate parameter sets can be evaluated with a single call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from ._validation import check_nonnegative, check_positive


@dataclass(frozen=True)
class DeviceParams:
    """Detector and system constants shared by both users.

    Defaults are the usual simulation values: 8e-7 dark counts, 65 %
    detection efficiency, 0.5 % misalignment, f = 1.16, eps = 1e-7 and
    0.2 dB/km fibre.
    """

    dark_count_rate: float = 8e-7
    detector_efficiency: float = 0.65
    misalignment: float = 0.005
    error_correction_efficiency: float = 1.16
    failure_probability: float = 1e-7
    fibre_loss_alpha: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.dark_count_rate < 1.0:
            raise ValueError(f"dark_count_rate must be in [0, 1), got {self.dark_count_rate}")
        if not 0.0 < self.detector_efficiency <= 1.0:
            raise ValueError(f"detector_efficiency must be in (0, 1], got {self.detector_efficiency}")
        if not 0.0 <= self.misalignment < 0.5:
            raise ValueError(f"misalignment must be in [0, 0.5), got {self.misalignment}")
        if not self.error_correction_efficiency >= 1.0:
            raise ValueError("error_correction_efficiency must be >= 1")
        if not 0.0 < self.failure_probability < 1.0:
            raise ValueError(f"failure_probability must be in (0, 1), got {self.failure_probability}")
        check_positive("fibre_loss_alpha", self.fibre_loss_alpha)


@dataclass(frozen=True)
class ChannelPair:
    """Fibre lengths (km) from Alice and from Bob to the relay.

    Transmittances exclude the detector efficiency.
    """

    L_A: float
    L_B: float
    alpha: float = 0.2

    def __post_init__(self):
        check_nonnegative("L_A", self.L_A)
        check_nonnegative("L_B", self.L_B)
        check_positive("alpha", self.alpha)

    @classmethod
    def for_device(cls, L_A: float, L_B: float, dev: DeviceParams) -> "ChannelPair":
        return cls(float(L_A), float(L_B), dev.fibre_loss_alpha)

    @property
    def eta_A(self) -> float:
        return transmittance(self.L_A, self.alpha)

    @property
    def eta_B(self) -> float:
        return transmittance(self.L_B, self.alpha)

    @property
    def mismatch(self) -> float:
        return self.eta_A / self.eta_B

    def swapped(self) -> "ChannelPair":
        return ChannelPair(self.L_B, self.L_A, self.alpha)


def transmittance(L, alpha: float = 0.2):
    """Fibre transmittance for length ``L`` km at ``alpha`` dB/km."""
    return 10.0 ** (-alpha * np.asarray(L, dtype=float) / 10.0)


# ---------------------------------------------------------------------------
# Z basis
#
# Misalignment is modelled as a small polarisation rotation by t on each
# photon with sin^2 t = e_d / 2, so a single-photon pair is flipped with
# probability e_d - e_d^2 / 2.  For each of the four bit combinations the
# relay sees two coherent modes per polarisation whose relative phase is
# random; averaging the click patterns of the four threshold detectors over
# that phase gives Bessel-function terms.  A successful event is exactly one
# H click and one V click.

@njit(cache=True)
def _i0_minus_one(z2):
    """I0(sqrt(z2)) - 1 by its power series; every term is positive."""
    q = z2 / 4.0
    term = 1.0
    total = 0.0
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        total += term
        if term <= 1e-17 * total:
            return total


@njit(cache=True)
def _bessel_i(n, x):
    """Modified Bessel function I_n(x) for integer n >= 0 and x >= 0."""
    if x == 0.0:
        return 1.0 if n == 0 else 0.0
    half = x / 2.0
    term = 1.0
    for k in range(1, n + 1):
        term *= half / k
    total = term
    q = half * half
    j = 0
    while True:
        j += 1
        term *= q / (j * (j + n))
        total += term
        if term <= 1e-17 * total:
            return total


@njit(cache=True)
def _z_combination(A_H, B_H, A_V, B_V, Y0):
    """Success probability for one bit combination.

    ``A_H`` etc. are the mean photon numbers reaching the beam splitter from
    each user in each polarisation; below ``q = 1 - Y0``.  The phase average of
    the four click patterns is

        2q^2 e_H e_V [I0(kH+kV) + I0(kH-kV)] - 4q^3 (e_H e_V^2 I0(kH) + e_V e_H^2 I0(kV))
        + 4q^4 e_H^2 e_V^2,    e_P = exp(-S_P / 2),

    and Graf's addition theorem turns it into the cancellation-free product
    4q^2 e_H e_V [(I0(kH) - q e_H)(I0(kV) - q e_V) + 2 sum_{even n>=2} In(kH) In(kV)].
    """
    q = 1.0 - Y0
    S_H = A_H + B_H
    S_V = A_V + B_V
    k_H = math.sqrt(A_H * B_H)
    k_V = math.sqrt(A_V * B_V)
    e_H = math.exp(-S_H / 2.0)
    e_V = math.exp(-S_V / 2.0)
    # I0(k) - q e^{-S/2}, as a sum of non-negative pieces
    gap_H = _i0_minus_one(k_H * k_H) - math.expm1(-S_H / 2.0) + Y0 * e_H
    gap_V = _i0_minus_one(k_V * k_V) - math.expm1(-S_V / 2.0) + Y0 * e_V
    extra = 0.0
    n = 2
    while n < 400:
        term = _bessel_i(n, k_H) * _bessel_i(n, k_V)
        extra += term
        if term <= 1e-17 * extra:
            break
        n += 2
    return 4.0 * q * q * e_H * e_V * (gap_H * gap_V + 2.0 * extra)


@njit(cache=True)
def _z_kernel(a, b, Y0, e_d, Q, T):
    s2 = e_d / 2.0
    c2 = 1.0 - s2
    for i in range(a.size):
        x, y = a[i], b[i]
        # Alice H / Bob V and the reverse are the correct (anti-correlated) outcomes
        hv = _z_combination(x * c2, y * s2, x * s2, y * c2, Y0)
        vh = _z_combination(x * s2, y * c2, x * c2, y * s2, Y0)
        hh = _z_combination(x * c2, y * c2, x * s2, y * s2, Y0)
        vv = _z_combination(x * s2, y * s2, x * c2, y * c2, Y0)
        Q[i] = (hv + vh + hh + vv) / 4.0
        T[i] = (hh + vv) / 4.0


def _z_model(a, b, Y0: float, e_d: float):
    """Gain and error-gain for arriving intensities ``a`` and ``b``."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    a = np.ascontiguousarray(a).ravel()
    b = np.ascontiguousarray(b).ravel()
    Q = np.empty(a.size)
    T = np.empty(a.size)
    _z_kernel(a, b, float(Y0), float(e_d), Q, T)
    return Q.reshape(shape), T.reshape(shape)


def _i0_series(z2, start: int):
    """Sum over k >= start of (z2/4)**k / (k!)**2, i.e. the tail of the I0
    power series at argument sqrt(z2).  All terms are positive, so tails of
    small arguments keep full relative precision."""
    q = np.asarray(z2, dtype=float) / 4.0
    term = np.ones_like(q)
    for k in range(1, start + 1):
        term = term * q / (k * k)
    total = term.copy()
    k = start
    while True:
        k += 1
        term = term * q / (k * k)
        total = total + term
        if np.all(term <= 1e-17 * total):
            return total


def _x_model(a, b, Y0: float, e_d: float):
    # Written as a sum of non-negative pieces: with y = (1-Y0) exp(-(a+b)/4)
    # and x = sqrt(ab)/2 the gain is
    #   2 y^2 [2 (1-y)^2 + 4 (1-y) (I0(x)-1) + (I0(2x) - 4 I0(x) + 3)]
    # which is the textbook form 2y^2 [1 + 2y^2 - 4y I0(x) + I0(2x)] without
    # its catastrophic cancellation at weak intensities.
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = (a + b) / 4.0
    y = (1.0 - Y0) * np.exp(-t)
    one_minus_y = -np.expm1(-t) + Y0 * np.exp(-t)
    x2 = a * b / 4.0
    d1 = _i0_series(x2, 1)                      # I0(x) - 1
    d2 = _i0_series(4.0 * x2, 1)                # I0(2x) - 1
    # I0(2x) - 4 I0(x) + 3 = sum_{k>=2} (x^2/4)^k (4^k - 4) / (k!)^2
    q = x2 / 4.0
    term = q * q / 4.0
    D = term * 12.0
    k = 2
    while True:
        k += 1
        term = term * q / (k * k)
        inc = term * (4.0**k - 4.0)
        D = D + inc
        if np.all(inc <= 1e-17 * np.maximum(D, 1e-300)):
            break
    Q = 2.0 * y**2 * (2.0 * one_minus_y**2 + 4.0 * one_minus_y * d1 + D)
    T = 0.5 * Q - (1.0 - 2.0 * e_d) * y**2 * d2
    return Q, np.clip(T, 0.0, Q)


def _safe_ratio(T, Q):
    Q = np.asarray(Q, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(Q > 0, np.asarray(T) / np.where(Q > 0, Q, 1.0), 0.0)


def _arriving(mu, eta, dev: DeviceParams):
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("intensities must be non-negative")
    return mu * eta * dev.detector_efficiency


def gain_qber_z(s_A, s_B, channel: ChannelPair, dev: DeviceParams):
    """Z-basis (signal) gain and QBER.

    >>> dev = DeviceParams(dark_count_rate=0.0)
    >>> gain_qber_z(0.0, 0.0, ChannelPair(10, 10), dev)
    (0.0, 0.0)
    """
    a = _arriving(s_A, channel.eta_A, dev)
    b = _arriving(s_B, channel.eta_B, dev)
    Q, T = _z_model(a, b, dev.dark_count_rate, dev.misalignment)
    return _out(Q), _out(_safe_ratio(T, Q))


def gain_qber_x(mu_A, mu_B, channel: ChannelPair, dev: DeviceParams):
    """X-basis (decoy) gain and QBER, including the finite interference
    visibility of two independent coherent states."""
    a = _arriving(mu_A, channel.eta_A, dev)
    b = _arriving(mu_B, channel.eta_B, dev)
    Q, T = _x_model(a, b, dev.dark_count_rate, dev.misalignment)
    return _out(Q), _out(_safe_ratio(T, Q))


def single_photon_pair(eta_A, eta_B, dev: DeviceParams):
    """Yield and X-basis error rate when each user emits exactly one photon.

    These are the (1, 1) coefficients of the photon-number expansion of the
    X-basis gain model above.
    """
    tA = np.asarray(eta_A, dtype=float) * dev.detector_efficiency
    tB = np.asarray(eta_B, dtype=float) * dev.detector_efficiency
    pd = dev.dark_count_rate
    q2 = (1.0 - pd) ** 2
    Y = q2 * (tA * tB / 2.0 + (2 * tA + 2 * tB - 3 * tA * tB) * pd
              + 4 * (1 - tA) * (1 - tB) * pd**2)
    T = 0.5 * Y - (0.5 - dev.misalignment) * q2 * tA * tB / 2.0
    return _out(Y), _out(_safe_ratio(T, Y))


def _out(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


# ---------------------------------------------------------------------------
# statistics tables

@dataclass
class ObservedStatistics:
    """Gains and error-gains for every same-basis intensity pairing.

    X-basis arrays have shape ``(..., kA, kB)``, indexed by position in
    ``labels_A``/``labels_B``; leading axes are batch axes.  ``pair_counts``
    is N * P_i * P_j when a data size ``total_pulses`` is attached.
    """

    labels_A: tuple
    labels_B: tuple
    x_gain: np.ndarray
    x_error_gain: np.ndarray
    z_gain: np.ndarray
    z_qber: np.ndarray
    pair_probabilities: Optional[np.ndarray] = None
    total_pulses: Optional[float] = None

    @property
    def pair_counts(self):
        if self.total_pulses is None or self.pair_probabilities is None:
            return None
        return self.total_pulses * self.pair_probabilities

    def index(self, label, side: str) -> int:
        labels = self.labels_A if side == "A" else self.labels_B
        if isinstance(label, (int, np.integer)):
            return int(label)
        return labels.index(label)

    def entry(self, a, b, basis: str = "X"):
        """(Q, T, N_ij) for one pairing.  The Z table has a single entry."""
        if basis == "Z":
            Qz = self.z_gain
            return Qz, Qz * self.z_qber, None
        i, j = self.index(a, "A"), self.index(b, "B")
        n = None if self.pair_counts is None else self.pair_counts[..., i, j]
        return self.x_gain[..., i, j], self.x_error_gain[..., i, j], n

    def __len__(self):
        return 1 + len(self.labels_A) * len(self.labels_B)

    # point-valued bounds so that decoy estimators accept either table type
    def gain_bounds(self):
        return self.x_gain, self.x_gain

    def error_gain_bounds(self):
        return self.x_error_gain, self.x_error_gain


def simulate_arrays(sA, sB, decA, decB, eta_A, eta_B, dev: DeviceParams):
    """Batched statistics.  ``decA``/``decB`` have shape (n, k) and include
    the vacuum column where the protocol has one."""
    ed = dev.detector_efficiency
    a = np.asarray(decA, dtype=float)[..., :, None] * (eta_A * ed)
    b = np.asarray(decB, dtype=float)[..., None, :] * (eta_B * ed)
    Qx, Tx = _x_model(a, b, dev.dark_count_rate, dev.misalignment)
    Qz, Tz = _z_model(np.asarray(sA) * eta_A * ed, np.asarray(sB) * eta_B * ed,
                      dev.dark_count_rate, dev.misalignment)
    return Qx, Tx, Qz, _safe_ratio(Tz, Qz)


def simulate_statistics(params, channel: ChannelPair, dev: DeviceParams,
                        N: Optional[float] = None) -> ObservedStatistics:
    """Fill the statistics table for a :class:`ProtocolParams`."""
    decA, pA = params.A.decoy_table(params.variant)
    decB, pB = params.B.decoy_table(params.variant)
    Qx, Tx, Qz, Ez = simulate_arrays(params.A.signal, params.B.signal, decA, decB,
                                     channel.eta_A, channel.eta_B, dev)
    if N is not None:
        N = check_positive("N", N)
    bA = params.A.basis_x_probability(params.variant)
    bB = params.B.basis_x_probability(params.variant)
    probs = np.outer(np.asarray(pA) * bA, np.asarray(pB) * bB)
    labels_A = params.A.labels(params.variant)
    labels_B = params.B.labels(params.variant)
    return ObservedStatistics(labels_A, labels_B, Qx, Tx, np.asarray(Qz), np.asarray(Ez), probs, N)
