"""Rate maximisation by coordinate descent in polar decoy coordinates.

Both users' decoy intensities share one polar angle, ``mu_A = r_mu sin(theta)``
and ``mu_B = r_mu cos(theta)`` (likewise for every other decoy), so every
point the search visits sits on the ridge ``mu_A/mu_B = nu_A/nu_B`` where the
optimum lies, and the objective is smooth along each search axis.

Coordinates are kept in one flat vector::

    [s_A, s_B, r_1..r_k, theta, pA_0..pA_k, pB_0..pB_k]

with ``r_1 > r_2 > ...`` the decoy radii (vacuum excluded) and ``p*_0`` the
signal probability (the Z-basis choice probability for ``prior_art``).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel_model import ChannelPair, DeviceParams
from .decoy_analysis import (NINE, PRIOR_ART, SIX, SEVEN, ProtocolParams, SideParams,
                             decoy_count, has_vacuum)
from .key_rate import Analysis, KeyRateResult, default_method, key_rate, rate_arrays

INTENSITY_MIN = 1e-4
INTENSITY_MAX = 1.0
THETA_MARGIN = 0.01
PROB_MIN = 1e-4
COARSE_SAMPLES = 100
FINE_SAMPLES = 10
MAX_DEPTH = 4
CYCLE_TOL = 1e-4
MAX_CYCLES = 50


@dataclass(frozen=True)
class PolarParams:
    """Polar form of a parameter set; ``radii`` are (r_mu, r_nu[, r_nu2])."""

    s_A: float
    s_B: float
    radii: tuple
    theta: float
    p_A: tuple
    p_B: tuple

    @property
    def r_mu(self) -> float:
        return self.radii[0]

    @property
    def r_nu(self) -> float:
        return self.radii[1]

    @property
    def theta_munu(self) -> float:
        return self.theta

    def as_vector(self) -> np.ndarray:
        return np.array([self.s_A, self.s_B, *self.radii, self.theta, *self.p_A, *self.p_B], dtype=float)

    @classmethod
    def from_vector(cls, z, k: int) -> "PolarParams":
        z = [float(v) for v in z]
        return cls(z[0], z[1], tuple(z[2:2 + k]), z[2 + k],
                   tuple(z[3 + k:4 + 2 * k]), tuple(z[4 + 2 * k:5 + 3 * k]))


def to_polar(params: ProtocolParams, rtol: float = 1e-9) -> PolarParams:
    """Polar form of ``params``; the decoy ratios must agree on both sides."""
    a, b = np.asarray(params.A.decoys, float), np.asarray(params.B.decoys, float)
    ratio = a / b
    if np.any(np.abs(ratio - ratio[0]) > rtol * abs(ratio[0])):
        raise ValueError(f"decoy ratios differ between intensities ({ratio}); "
                         "the polar form needs mu_A/mu_B = nu_A/nu_B")
    theta = math.atan2(a[0], b[0])
    radii = tuple(float(r) for r in np.hypot(a, b))
    p_A = (params.A.p_signal, *params.A.p_decoys)
    p_B = (params.B.p_signal, *params.B.p_decoys)
    return PolarParams(params.A.signal, params.B.signal, radii, theta, p_A, p_B)


def from_polar(pp: PolarParams, variant: str = SEVEN, symmetric_constraint: bool = False) -> ProtocolParams:
    """Cartesian protocol parameters for ``pp`` (exact trigonometric map)."""
    sin_t, cos_t = math.sin(pp.theta), math.cos(pp.theta)
    decA = tuple(r * sin_t for r in pp.radii)
    decB = tuple(r * cos_t for r in pp.radii)
    sA, sB = pp.s_A, pp.s_B
    if variant == PRIOR_ART:
        sA, sB = decA[0], decB[0]
    A = SideParams(sA, decA, pp.p_A[0], tuple(pp.p_A[1:]))
    B = SideParams(sB, decB, pp.p_B[0], tuple(pp.p_B[1:]))
    if symmetric_constraint:
        B = A
    return ProtocolParams(variant, A, B, symmetric_constraint)


@dataclass
class OptimizationReport:
    polar: PolarParams
    params: ProtocolParams
    rate: float
    result: KeyRateResult
    cycles: int
    evaluations: int
    converged: bool
    seconds: float = 0.0
    starts: int = 1


class SearchSpace:
    """Feasible coordinate domains and batched decoding for one protocol variant."""

    def __init__(self, variant: str, symmetric: bool = False):
        self.variant = variant
        self.symmetric = symmetric
        self.k = decoy_count(variant)
        self.vacuum = has_vacuum(variant)
        k = self.k
        self.i_theta = 2 + k
        self.pA = list(range(3 + k, 4 + 2 * k))
        self.pB = list(range(4 + 2 * k, 5 + 3 * k))
        self.dim = 5 + 3 * k
        axes = [0, 1, *range(2, 2 + k), self.i_theta, *self.pA, *self.pB]
        drop = set()
        if variant == SIX:
            drop |= {self.pA[-1], self.pB[-1]}
        if variant == PRIOR_ART:
            drop |= {0, 1}
        if symmetric:
            drop |= {1, self.i_theta, *self.pB}
        self.axes = [a for a in axes if a not in drop]

    # -- constraints -------------------------------------------------------
    def normalize(self, Z):
        """Fill derived coordinates in place for a (b, dim) array."""
        k = self.k
        if self.symmetric:
            Z[:, self.i_theta] = math.pi / 4
            Z[:, 1] = Z[:, 0]
            Z[:, self.pB] = Z[:, self.pA]
        if self.variant == SIX:
            for side in (self.pA, self.pB):
                Z[:, side[-1]] = 1.0 - Z[:, side[:-1]].sum(axis=1)
        if self.variant == PRIOR_ART:
            Z[:, 0] = Z[:, 2] * np.sin(Z[:, self.i_theta])
            Z[:, 1] = Z[:, 2] * np.cos(Z[:, self.i_theta])
        return Z

    def domain(self, axis: int, z: np.ndarray):
        k = self.k
        if axis in (0, 1):
            return INTENSITY_MIN, INTENSITY_MAX
        theta = z[self.i_theta]
        lo_trig = min(math.sin(theta), math.cos(theta))
        hi_trig = max(math.sin(theta), math.cos(theta))
        if 2 <= axis < 2 + k:
            j = axis - 2
            hi = INTENSITY_MAX / hi_trig
            lo = INTENSITY_MIN / lo_trig
            if j > 0:
                hi = min(hi, z[axis - 1] * (1 - 1e-6))
            if j < k - 1:
                lo = max(lo, z[axis + 1] * (1 + 1e-6))
            return lo, hi
        if axis == self.i_theta:
            lo, hi = THETA_MARGIN, math.pi / 2 - THETA_MARGIN
            r_top, r_bot = z[2], z[1 + k]
            if r_top > INTENSITY_MAX:
                lo = max(lo, math.acos(INTENSITY_MAX / r_top))
                hi = min(hi, math.asin(INTENSITY_MAX / r_top))
            if r_bot < INTENSITY_MIN * math.sqrt(2) * 1e6:
                m = INTENSITY_MIN / r_bot
                if m < 1:
                    lo = max(lo, math.asin(m))
                    hi = min(hi, math.acos(m))
            return lo, hi
        side = self.pA if axis in self.pA else self.pB
        if self.variant == PRIOR_ART and axis == side[0]:
            return PROB_MIN, 1.0 - PROB_MIN
        pool = side[1:] if self.variant == PRIOR_ART else side
        if self.variant == SIX:
            pool = side[:-1]
        others = sum(z[i] for i in pool if i != axis)
        # room left for the vacuum decoy (or the derived last probability)
        return PROB_MIN, 1.0 - others - PROB_MIN

    # -- starts ------------------------------------------------------------
    def heuristic_start(self, channel: ChannelPair) -> np.ndarray:
        """Balanced arriving decoy intensities, s = 0.4 on both sides and
        probabilities (0.5, 0.05, 0.3) for (signal, mu, nu)."""
        k = self.k
        z = np.zeros(self.dim)
        z[0] = z[1] = 0.4
        theta = math.pi / 4 if self.symmetric else math.atan2(channel.eta_B, channel.eta_A)
        theta = min(max(theta, THETA_MARGIN), math.pi / 2 - THETA_MARGIN)
        top = (0.4, 0.1, 0.02)[:k]
        scale = max(math.sin(theta), math.cos(theta))
        z[2:2 + k] = [t / scale for t in top]
        z[self.i_theta] = theta
        probs = {SIX: (0.5, 0.05, 0.45), SEVEN: (0.5, 0.05, 0.3),
                 NINE: (0.5, 0.05, 0.3, 0.05), PRIOR_ART: (0.5, 0.5, 0.3)}[self.variant]
        z[self.pA] = probs
        z[self.pB] = probs
        return self.normalize(z[None])[0]

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        k = self.k
        z = np.zeros(self.dim)
        z[0:2] = rng.uniform(INTENSITY_MIN, INTENSITY_MAX, 2)
        theta = rng.uniform(THETA_MARGIN, math.pi / 2 - THETA_MARGIN)
        z[self.i_theta] = theta
        top = np.sort(rng.uniform(0.001, 1.0, k))[::-1]
        scale = max(math.sin(theta), math.cos(theta))
        z[2:2 + k] = top / scale
        for side in (self.pA, self.pB):
            if self.variant == PRIOR_ART:
                z[side[0]] = rng.uniform(0.05, 0.95)
                w = rng.dirichlet(np.ones(k + 1))
                z[side[1:]] = np.maximum(w[:k], PROB_MIN)
            else:
                w = rng.dirichlet(np.ones(k + 1 + (1 if self.vacuum else 0)))
                z[side] = np.maximum(w[:k + 1], PROB_MIN)
        z = self.normalize(z[None])[0]
        if not self.feasible(z):
            return self.heuristic_start_like(z)
        return z

    def heuristic_start_like(self, z):
        # fall back to a safe probability split when the random draw is degenerate
        probs = {SIX: (0.5, 0.05, 0.45), SEVEN: (0.5, 0.05, 0.3),
                 NINE: (0.5, 0.05, 0.3, 0.05), PRIOR_ART: (0.5, 0.5, 0.3)}[self.variant]
        z = z.copy()
        z[self.pA] = probs
        z[self.pB] = probs
        return self.normalize(z[None])[0]

    def feasible(self, z) -> bool:
        try:
            from_polar(PolarParams.from_vector(z, self.k), self.variant, self.symmetric)
        except ValueError:
            return False
        return True

    # -- evaluation --------------------------------------------------------
    def decode(self, Z):
        """Arguments of :func:`rate_arrays` for a (b, dim) coordinate array."""
        k = self.k
        theta = Z[:, self.i_theta]
        R = Z[:, 2:2 + k]
        decA = R * np.sin(theta)[:, None]
        decB = R * np.cos(theta)[:, None]
        PA = Z[:, self.pA]
        PB = Z[:, self.pB]
        if self.variant == PRIOR_ART:
            def side(dec, P):
                pz = P[:, 0]
                pdec = P[:, 1:]
                pvac = 1.0 - pdec.sum(axis=1, keepdims=True)
                ints = np.concatenate([dec, np.zeros((len(dec), 1))], axis=1)
                pX = (1.0 - pz)[:, None] * np.concatenate([pdec, pvac], axis=1)
                return dec[:, 0], ints, pX, pz * pdec[:, 0]
        else:
            def side(dec, P):
                pdec = P[:, 1:]
                if self.vacuum:
                    pvac = 1.0 - P.sum(axis=1, keepdims=True)
                    ints = np.concatenate([dec, np.zeros((len(dec), 1))], axis=1)
                    pX = np.concatenate([pdec, pvac], axis=1)
                else:
                    ints, pX = dec, pdec
                return None, ints, pX, P[:, 0]
        sA, iA, xA, kA = side(decA, PA)
        sB, iB, xB, kB = side(decB, PB)
        if sA is None:
            sA, sB = Z[:, 0], Z[:, 1]
        return sA, sB, iA, iB, xA, xB, kA, kB


def line_search(objective: Callable[[np.ndarray], np.ndarray], axis: int, point: np.ndarray,
                domain, current_value: Optional[float] = None,
                coarse: int = COARSE_SAMPLES, fine: int = FINE_SAMPLES, depth: int = MAX_DEPTH):
    """Coarse-to-fine maximisation along one coordinate.

    ``objective`` maps a 1-D array of coordinate values to objective values
    (evaluated as one batch).  The coarse grid spans the domain; each
    refinement resamples the gap between the best sample's neighbours.  The
    first (smallest-coordinate) maximiser wins ties, and the current point is
    kept unless a sample beats it.  Returns ``(value, objective, n_evals)``.
    """
    lo, hi = float(domain[0]), float(domain[1])
    x0 = float(point[axis])
    f0 = float(objective(np.array([x0]))[0]) if current_value is None else float(current_value)
    evals = 0 if current_value is not None else 1
    if not hi > lo:
        return x0, f0, evals
    xs = np.linspace(lo, hi, coarse)
    fs = np.asarray(objective(xs), dtype=float)
    evals += len(xs)
    i = int(np.argmax(fs))
    best_x, best_f = xs[i], fs[i]
    step = xs[1] - xs[0]
    for _ in range(depth):
        a, b = max(lo, best_x - step), min(hi, best_x + step)
        cand = np.linspace(a, b, fine + 2)[1:-1]
        fc = np.asarray(objective(cand), dtype=float)
        evals += len(cand)
        j = int(np.argmax(fc))
        step = cand[1] - cand[0]
        if fc[j] > best_f:
            gain = fc[j] - best_f
            best_x, best_f = cand[j], fc[j]
            if gain <= 1e-12 * abs(best_f):
                break
    if best_f > f0:
        return float(best_x), float(best_f), evals
    return x0, f0, evals


def _axis_objective(space: SearchSpace, z: np.ndarray, axis: int, rate_fn):
    def f(values):
        Z = np.repeat(z[None], len(values), axis=0)
        Z[:, axis] = values
        space.normalize(Z)
        return rate_fn(Z)
    return f


def _rate_fn(space: SearchSpace, channel: ChannelPair, dev: DeviceParams,
             analysis: Analysis, method: Optional[str]):
    method = method or default_method(space.variant)
    eta_A, eta_B = channel.eta_A, channel.eta_B

    def f(Z):
        with np.errstate(all="ignore"):
            out = rate_arrays(space.variant, *space.decode(Z), eta_A, eta_B, dev, analysis, method)
        return out["surrogate"]
    return f


def coordinate_descent(channel: ChannelPair, dev: DeviceParams, analysis: Analysis,
                       variant: str = SEVEN, start: Optional[PolarParams] = None,
                       symmetric_constraint: bool = False, method: Optional[str] = None,
                       max_cycles: int = MAX_CYCLES, tol: float = CYCLE_TOL) -> OptimizationReport:
    """Cycle the search axes until a full cycle improves the rate by less than
    ``tol`` (relative) or ``max_cycles`` is reached."""
    t0 = time.perf_counter()
    space = SearchSpace(variant, symmetric_constraint)
    z = space.heuristic_start(channel) if start is None else start.as_vector()
    z = space.normalize(z.astype(float)[None])[0]
    f = _rate_fn(space, channel, dev, analysis, method)
    best = float(f(z[None])[0])
    evals = 1
    converged = False
    cycles = 0
    for cycles in range(1, max_cycles + 1):
        before = best
        for axis in space.axes:
            dom = space.domain(axis, z)
            obj = _axis_objective(space, z, axis, f)
            x, best, n = line_search(obj, axis, z, dom, current_value=best)
            evals += n
            z[axis] = x
            z = space.normalize(z[None])[0]
        if best - before <= tol * abs(before):
            converged = True
            break
    return _report(space, z, channel, dev, analysis, method, cycles, evals, converged, t0)


def _report(space, z, channel, dev, analysis, method, cycles, evals, converged, t0, starts=1):
    polar = PolarParams.from_vector(z, space.k)
    params = from_polar(polar, space.variant, space.symmetric)
    res = key_rate(params, channel, dev, analysis, method)
    return OptimizationReport(polar, params, res.rate, res, cycles, evals, converged,
                              time.perf_counter() - t0, starts)


def default_starts(variant: str) -> int:
    return 1 if variant in (SEVEN, PRIOR_ART) else 20


def optimize(channel: ChannelPair, dev: DeviceParams, analysis: Analysis,
             variant: str = SEVEN, strategy: Optional[str] = None, k: Optional[int] = None,
             symmetric_constraint: bool = False, seed: int = 0,
             method: Optional[str] = None) -> OptimizationReport:
    """Optimise from the heuristic start, or from it plus ``k - 1`` random
    starts (``strategy="multi_start"``), returning the best run.

    Without an explicit strategy the LP-based variants use multi-start with
    :func:`default_starts` runs and the others a single start.
    """
    if strategy is None:
        strategy = "single_start" if default_starts(variant) == 1 else "multi_start"
    if strategy not in ("single_start", "multi_start"):
        raise ValueError(f"unknown strategy {strategy!r}")
    t0 = time.perf_counter()
    space = SearchSpace(variant, symmetric_constraint)
    n = 1 if strategy == "single_start" else (k or default_starts(variant))
    rng = np.random.default_rng(seed)
    starts = [space.heuristic_start(channel)] + [space.random_start(rng) for _ in range(n - 1)]
    best = None
    cycles = evals = 0
    for z in starts:
        rep = coordinate_descent(channel, dev, analysis, variant,
                                 PolarParams.from_vector(z, space.k), symmetric_constraint, method)
        cycles += rep.cycles
        evals += rep.evaluations
        if best is None or rep.rate > best.rate:
            best = rep
    best.cycles, best.evaluations, best.starts = cycles, evals, n
    best.seconds = time.perf_counter() - t0
    return best
