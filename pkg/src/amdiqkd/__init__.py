"""Key rates and parameter optimisation for MDI-QKD over asymmetric channels."""
from .channel_model import (ChannelPair, DeviceParams, ObservedStatistics, gain_qber_x,
                            gain_qber_z, simulate_statistics, transmittance)
from .decoy_analysis import (NINE, PRIOR_ART, SEVEN, SIX, VARIANTS, DecoyBounds, ProtocolParams,
                             SideParams, analytic_bounds, decoy_bounds_lp, e11_upper_analytic,
                             y11_lower_analytic)
from .finite_size import BoundedStatistics, apply_bounds, gamma_from_epsilon
from .key_rate import Analysis, KeyRateResult, binary_entropy, key_rate
from .optimizer import (OptimizationReport, PolarParams, coordinate_descent, from_polar,
                        line_search, optimize, to_polar)
from .asymptotic_analysis import (asymptotic_rate_optimal, asymptotic_rate_symmetric,
                                  cutoff_mismatch, g_function, single_photon_rate)
from .network_planner import RateMatrix, StarNetwork, plan

__version__ = "0.1.0"

__all__ = [
    "ChannelPair", "DeviceParams", "ObservedStatistics", "gain_qber_x", "gain_qber_z",
    "simulate_statistics", "transmittance",
    "NINE", "PRIOR_ART", "SEVEN", "SIX", "VARIANTS", "DecoyBounds", "ProtocolParams", "SideParams",
    "analytic_bounds", "decoy_bounds_lp", "e11_upper_analytic", "y11_lower_analytic",
    "BoundedStatistics", "apply_bounds", "gamma_from_epsilon",
    "Analysis", "KeyRateResult", "binary_entropy", "key_rate",
    "OptimizationReport", "PolarParams", "coordinate_descent", "from_polar", "line_search",
    "optimize", "to_polar",
    "asymptotic_rate_optimal", "asymptotic_rate_symmetric", "cutoff_mismatch", "g_function",
    "single_photon_rate",
    "RateMatrix", "StarNetwork", "plan",
]
