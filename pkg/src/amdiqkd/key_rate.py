"""Secret key rate per pulse for the asymmetric MDI-QKD protocol family."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel_model import ChannelPair, DeviceParams, simulate_arrays
from .decoy_analysis import (PRIOR_ART, SEVEN, DecoyBounds, ProtocolParams,
                             _analytic_arrays, _e11_arrays, lp_bounds_arrays)
from .finite_size import bound_pair, gamma_from_epsilon


def binary_entropy(p):
    """h2(p) in bits, with h2(0) = h2(1) = 0.

    >>> round(binary_entropy(0.25), 6)
    0.811278
    """
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("binary entropy needs 0 <= p <= 1")
    return _h2(p)


def _h2(p):
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -p * np.log2(p) - (1 - p) * np.log2(1 - p)
    out = np.where((p <= 0) | (p >= 1), 0.0, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Analysis:
    """Asymptotic, or finite-size with N pulses and a confidence width gamma.

    A finite analysis without explicit gamma derives it from the device's
    failure probability.
    """

    mode: str = "asymptotic"
    N: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("asymptotic", "finite"):
            raise ValueError(f"analysis mode must be 'asymptotic' or 'finite', got {self.mode!r}")
        if self.mode == "finite" and not (self.N is not None and self.N > 0):
            raise ValueError("finite analysis needs a positive data size N")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @classmethod
    def asymptotic(cls) -> "Analysis":
        return cls("asymptotic")

    @classmethod
    def finite(cls, N: float, gamma: Optional[float] = None) -> "Analysis":
        return cls("finite", float(N), gamma)

    @property
    def is_finite(self) -> bool:
        return self.mode == "finite"

    def resolved_gamma(self, dev: DeviceParams) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return gamma_from_epsilon(dev.failure_probability)

    def describe(self, dev: DeviceParams) -> dict:
        if not self.is_finite:
            return {"mode": "asymptotic"}
        return {"mode": "finite", "N": self.N, "gamma": self.resolved_gamma(dev)}


@dataclass(frozen=True)
class KeyRateResult:
    rate: float
    pa_term: float
    ec_term: float
    bounds: DecoyBounds
    Q_ss_Z: float
    E_ss_Z: float
    analysis: Analysis
    params: Optional[ProtocolParams] = None


def default_method(variant: str) -> str:
    return "analytic" if variant in (SEVEN, PRIOR_ART) else "lp"


def rate_arrays(variant: str, sA, sB, intsA, intsB, pX_A, pX_B, keyA, keyB,
                eta_A: float, eta_B: float, dev: DeviceParams, analysis: Analysis,
                method: Optional[str] = None):
    """Key rate for a whole batch of parameter sets in one pass.

    ``intsA`` (b, kA) are the X-basis intensities with vacuum last (when
    present); ``pX_A`` (b, kA) the probability that a pulse is sent in X with
    that intensity; ``keyA`` (b,) the probability of a key-generating pulse.
    Returns a dict of arrays.
    """
    method = method or default_method(variant)
    Qx, Tx, Qz, Ez = simulate_arrays(sA, sB, intsA, intsB, eta_A, eta_B, dev)
    if analysis.is_finite:
        gamma = analysis.resolved_gamma(dev)
        counts = analysis.N * pX_A[..., :, None] * pX_B[..., None, :]
        Ql, Qu = bound_pair(Qx, counts, gamma)
        Tl, Tu = bound_pair(Tx, counts, gamma)
    else:
        Ql = Qu = Qx
        Tl = Tu = Tx
    if method == "analytic":
        muA, nuA = intsA[..., 0], intsA[..., 1]
        muB, nuB = intsB[..., 0], intsB[..., 1]
        Y_raw = _analytic_arrays(muA, muB, nuA, nuB, Ql, Qu, raw=True)
        e_raw = _e11_arrays(nuA, nuB, Y_raw, Tl, Tu, raw=True)
        feasible = np.ones(Y_raw.shape, dtype=bool)
    elif method == "lp":
        Y_raw, e_raw, feasible = lp_bounds_arrays(intsA, intsB, Ql, Qu, Tl, Tu, raw=True)
    else:
        raise ValueError(f"unknown decoy method {method!r}")
    Y = np.clip(Y_raw, 0.0, 1.0)
    with np.errstate(invalid="ignore"):
        e = np.where(Y > 0, np.clip(e_raw, 0.0, 0.5), 0.5)
    sA = np.asarray(sA, dtype=float)
    sB = np.asarray(sB, dtype=float)
    pref = keyA * keyB
    p11 = pref * sA * np.exp(-sA) * sB * np.exp(-sB)
    pa = p11 * Y * (1.0 - _h2(e))
    ec = pref * dev.error_correction_efficiency * Qz * _h2(Ez)
    R = np.where(Y > 0, np.maximum(pa - ec, 0.0), 0.0)
    return {"rate": R, "pa": pa, "ec": ec, "Y11": Y, "e11": e, "Qz": Qz, "Ez": Ez,
            "feasible": feasible, "surrogate": _continuation(R, p11, Y_raw, e_raw, ec, feasible)}


def _continuation(R, p11, Y_raw, e_raw, ec, feasible):
    """Search objective equal to the rate where it is positive and negative
    elsewhere, still ranking zero-rate points by how far they are from
    producing key: a negative yield bound counts as is, and 1 - h2(e) is
    extended linearly beyond e = 1/2."""
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.where(np.isfinite(e_raw), e_raw, 1e6)
        g = np.where(e <= 0.5, 1.0 - _h2(np.clip(e, 0.0, 0.5)), -(e - 0.5))
        S = np.where(Y_raw > 0, p11 * np.minimum(Y_raw, 1.0) * g - ec, p11 * Y_raw - ec)
        S = np.where(feasible, S, -p11 - ec)
        S = np.where(R > 0, R, np.minimum(S, 0.0))
    return np.where(np.isfinite(S), S, -np.inf)


def params_to_arrays(params: ProtocolParams):
    """Single parameter set -> the batched argument tuple of :func:`rate_arrays`."""
    v = params.variant
    iA, pA = params.A.decoy_table(v)
    iB, pB = params.B.decoy_table(v)
    return (np.array([params.A.signal]), np.array([params.B.signal]),
            iA[None], iB[None],
            (pA * params.A.basis_x_probability(v))[None], (pB * params.B.basis_x_probability(v))[None],
            np.array([params.A.key_probability(v)]), np.array([params.B.key_probability(v)]))


def key_rate(params: ProtocolParams, channel: ChannelPair, dev: DeviceParams,
             analysis: Analysis = Analysis(), method: Optional[str] = None) -> KeyRateResult:
    """Key rate per pulse with its privacy-amplification and error-correction
    terms.  Seven-intensity and prior-art protocols use the closed-form decoy
    bounds by default, the others the LP."""
    method = method or default_method(params.variant)
    out = rate_arrays(params.variant, *params_to_arrays(params), channel.eta_A, channel.eta_B,
                      dev, analysis, method)
    g = {k: (float(v[0]) if np.ndim(v) else float(v)) for k, v in out.items() if k != "feasible"}
    bounds = DecoyBounds(g["Y11"], g["e11"], method, bool(np.asarray(out["feasible"]).ravel()[0]))
    return KeyRateResult(g["rate"], g["pa"], g["ec"], bounds, g["Qz"], g["Ez"], analysis, params)
