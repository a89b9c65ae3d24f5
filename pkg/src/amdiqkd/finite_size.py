"""Standard-error finite-size bounds on decoy observables.

Every gain and error-gain is bounded independently as
``value +/- gamma * sqrt(value / N_ij)`` with ``N_ij = N * P_i * P_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcinv

from .channel_model import ObservedStatistics


def gamma_from_epsilon(eps: float) -> float:
    """Number of standard deviations whose two-sided Gaussian tail is ``eps``.

    >>> round(gamma_from_epsilon(0.3173), 3)
    1.0
    """
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    return float(np.sqrt(2.0) * erfcinv(eps))


def bound_pair(value, counts, gamma: float):
    """Lower and upper confidence bounds for an observed rate.

    Below one expected event the Gaussian approximation is meaningless, so
    the lower bound drops to zero and the upper bound is capped at
    ``(1 + gamma**2) / counts``.  With ``gamma = 0`` no confidence is asked
    for and every bound is the point value.
    """
    value = np.asarray(value, dtype=float)
    counts = np.asarray(counts, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        width = gamma * np.sqrt(np.maximum(value, 0.0) / counts)
        sparse = (counts * value < 1.0) & (gamma > 0)
        lower = np.where(sparse, 0.0, np.maximum(value - width, 0.0))
        upper = np.where(sparse, (1.0 + gamma**2) / counts, value + width)
    return lower, upper


@dataclass
class BoundedStatistics(ObservedStatistics):
    """Observed statistics together with their confidence intervals."""

    x_gain_lower: np.ndarray = None
    x_gain_upper: np.ndarray = None
    x_error_gain_lower: np.ndarray = None
    x_error_gain_upper: np.ndarray = None
    gamma: float = 0.0

    def gain_bounds(self):
        return self.x_gain_lower, self.x_gain_upper

    def error_gain_bounds(self):
        return self.x_error_gain_lower, self.x_error_gain_upper

    def entry_bounds(self, a, b):
        """(Q_lower, Q, Q_upper, T_lower, T, T_upper) for one X pairing."""
        i, j = self.index(a, "A"), self.index(b, "B")
        pick = lambda arr: arr[..., i, j]
        return (pick(self.x_gain_lower), pick(self.x_gain), pick(self.x_gain_upper),
                pick(self.x_error_gain_lower), pick(self.x_error_gain), pick(self.x_error_gain_upper))


def apply_bounds(stats: ObservedStatistics, N: float | None = None,
                 gamma: float = 5.3) -> BoundedStatistics:
    """Attach confidence bounds to every X-basis entry.

    ``N`` overrides the data size stored on ``stats``; each entry uses its
    own pair count ``N * P_i * P_j``.
    """
    N = stats.total_pulses if N is None else N
    if N is None or not N > 0:
        raise ValueError("a positive data size N is required")
    if stats.pair_probabilities is None:
        raise ValueError("statistics carry no pair probabilities")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    counts = N * stats.pair_probabilities
    Ql, Qu = bound_pair(stats.x_gain, counts, gamma)
    Tl, Tu = bound_pair(stats.x_error_gain, counts, gamma)
    return BoundedStatistics(stats.labels_A, stats.labels_B, stats.x_gain, stats.x_error_gain,
                             stats.z_gain, stats.z_qber, stats.pair_probabilities, float(N),
                             Ql, Qu, Tl, Tu, float(gamma))
