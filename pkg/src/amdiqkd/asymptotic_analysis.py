"""Scaling of the asymptotic, infinite-decoy key rate with channel mismatch.

Dark counts are ignored and the signal-state gain and QBER are expanded to
second order in the arriving intensities, which leaves

    R = eta_B**2 * eta_d**2 / 2 * G(x, s_A, s_B),    x = eta_A / eta_B.

Only the mismatch enters G, so cutoffs and optimal intensities are
properties of ``x`` alone.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .channel_model import DeviceParams
from .key_rate import _h2
from .optimizer import line_search

# searched range of log(s); s spans roughly 1e-9 .. 1
LOG_S_MIN = math.log(1e-9)
LOG_S_MAX = 0.0
BRACKET_LIMIT = 1e6


def signal_qber(x, s_A, s_B, e_d: float):
    """Second-order signal-basis QBER."""
    x, s_A, s_B = (np.asarray(v, dtype=float) for v in (x, s_A, s_B))
    c = 2 * e_d - e_d**2
    den = 2 * (2 * x * s_A * s_B + (s_B**2 + x**2 * s_A**2) * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        E = (s_B + x * s_A) ** 2 * c / den
    return np.where(den > 0, E, 0.0)


def g_function(x, s_A, s_B, e_d: float, f: float):
    """Rate factor G(x, s_A, s_B); negative values are returned unclamped.

    >>> round(float(g_function(1.0, 0.5, 0.5, 0.0, 1.16)), 6)
    0.09197
    """
    x, s_A, s_B = (np.asarray(v, dtype=float) for v in (x, s_A, s_B))
    c = 2 * e_d - e_d**2
    e11 = e_d - e_d**2 / 2
    pa = x * s_A * s_B * np.exp(-(s_A + s_B)) * (1 - _h2(e11))
    ec = (2 * x * s_A * s_B + (s_B**2 + x**2 * s_A**2) * c) / 2 * f * _h2(signal_qber(x, s_A, s_B, e_d))
    return pa - ec


def _maximise_log(fun, u0: float):
    """Maximise ``fun`` over log-intensity: sampled line search, then a
    bounded Brent polish on the bracket around the sampled maximum."""
    obj = lambda us: fun(np.asarray(us, dtype=float))
    u, val, _ = line_search(obj, 0, np.array([u0]), (LOG_S_MIN, LOG_S_MAX))
    step = (LOG_S_MAX - LOG_S_MIN) / 99 * (0.2**4)
    a, b = max(LOG_S_MIN, u - 2 * step), min(LOG_S_MAX, u + 2 * step)
    if val > 0 and b > a:
        res = minimize_scalar(lambda t: -float(obj([t])[0]), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12})
        if -res.fun > val:
            u, val = float(res.x), float(-res.fun)
    return u, val


def max_g_symmetric(x: float, dev: DeviceParams):
    """``(s, max_s G(x, s, s))`` for equal intensities."""
    e_d, f = dev.misalignment, dev.error_correction_efficiency
    u, val = _maximise_log(lambda us: g_function(x, np.exp(us), np.exp(us), e_d, f), math.log(0.4))
    return math.exp(u), val


def max_g_optimal(x: float, dev: DeviceParams, max_cycles: int = 500, tol: float = 1e-13):
    """``(s_A, s_B, max G)`` by coordinate descent over the two intensities."""
    e_d, f = dev.misalignment, dev.error_correction_efficiency
    uA = uB = math.log(0.4)
    best = float(g_function(x, 0.4, 0.4, e_d, f))
    for _ in range(max_cycles):
        before = best
        uA, best = _maximise_log(lambda us: g_function(x, np.exp(us), math.exp(uB), e_d, f), uA)
        uB, best = _maximise_log(lambda us: g_function(x, math.exp(uA), np.exp(us), e_d, f), uB)
        if best - before <= tol * abs(best):
            break
    return math.exp(uA), math.exp(uB), best


def _eta_d(eta_d: Optional[float], dev: DeviceParams) -> float:
    return dev.detector_efficiency if eta_d is None else float(eta_d)


def asymptotic_rate_symmetric(eta_A: float, eta_B: float, eta_d: Optional[float] = None,
                              dev: DeviceParams = DeviceParams()) -> float:
    """Best rate when both users must send the same signal intensity."""
    x = eta_A / eta_B
    _, g = max_g_symmetric(x, dev)
    return max(g, 0.0) * eta_B**2 * _eta_d(eta_d, dev) ** 2 / 2


def asymptotic_rate_optimal(eta_A: float, eta_B: float, eta_d: Optional[float] = None,
                            dev: DeviceParams = DeviceParams()) -> float:
    """Best rate with independent signal intensities.

    The model is invariant under exchanging the users, so the search runs
    with the better channel in the role of B and ``x >= 1``; this keeps the
    optimal intensities below one.
    """
    lo, hi = sorted((eta_A, eta_B))
    _, _, g = max_g_optimal(hi / lo, dev)
    return max(g, 0.0) * lo**2 * _eta_d(eta_d, dev) ** 2 / 2


def cutoff_mismatch(dev: DeviceParams, rtol: float = 1e-4):
    """Mismatches ``(x_min, x_max)`` beyond which equal intensities give no key.

    Brackets expand geometrically from ``x = 1``; a side with no sign change
    up to a factor 1e6 reports 0 or infinity.
    """
    positive = lambda x: max_g_symmetric(x, dev)[1] > 0
    if not positive(1.0):
        raise ValueError("no cutoff: equal intensities give no key even for matched channels")

    def root(direction):
        inside = 1.0
        outside = 2.0 ** direction
        while positive(outside):
            inside = outside
            outside *= 2.0 ** direction
            if outside > BRACKET_LIMIT or outside < 1 / BRACKET_LIMIT:
                return None
        # bisect in log space so the tolerance is relative
        while abs(outside / inside - 1) > rtol:
            mid = math.sqrt(inside * outside)
            if positive(mid):
                inside = mid
            else:
                outside = mid
        return math.sqrt(inside * outside)

    x_max = root(1)
    x_min = root(-1)
    return (0.0 if x_min is None else x_min), (math.inf if x_max is None else x_max)


def single_photon_rate(eta_A, eta_B, e11, pair_probability):
    """Key rate from single-photon pairs only; negative values clamp to zero.

    >>> single_photon_rate(0.5, 0.5, 0.0, 0.1)
    0.025
    """
    e11 = np.asarray(e11, dtype=float)
    if np.any((e11 < 0) | (e11 > 0.5)):
        raise ValueError("e11 must lie in [0, 0.5]")
    r = pair_probability * np.asarray(eta_A) * np.asarray(eta_B) * np.maximum(1 - 2 * _h2(e11), 0.0)
    return float(r) if np.ndim(r) == 0 else r
