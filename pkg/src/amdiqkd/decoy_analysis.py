"""Single-photon yield and error bounds from decoy-state observables.

Two estimators are provided: the closed form for three decoys per side
(two non-vacuum intensities plus vacuum), and a linear program over the
photon-number yields that works for any decoy set.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import poisson

from ._simplex import INFEASIBLE, OPTIMAL, linprog_box_batch

SIX = "six_intensity"
SEVEN = "seven_intensity"
NINE = "nine_intensity"
PRIOR_ART = "prior_art"
VARIANTS = (SIX, SEVEN, NINE, PRIOR_ART)

# number of non-vacuum decoys per side and whether a vacuum decoy exists
_LAYOUT = {SIX: (2, False), SEVEN: (2, True), NINE: (3, True), PRIOR_ART: (2, True)}
_DECOY_NAMES = ("mu", "nu", "nu2")


def decoy_count(variant: str) -> int:
    return _LAYOUT[_check_variant(variant)][0]


def has_vacuum(variant: str) -> bool:
    return _LAYOUT[_check_variant(variant)][1]


def _check_variant(variant: str) -> str:
    if variant not in _LAYOUT:
        raise ValueError(f"unknown protocol variant {variant!r}; expected one of {VARIANTS}")
    return variant


@dataclass(frozen=True)
class SideParams:
    """One user's intensities and sending probabilities.

    For the decoupled-basis variants ``signal`` is the Z-basis intensity and
    ``p_signal`` its probability; decoys are sent in X.  For ``prior_art``
    the same intensities serve both bases, key comes from the strongest one
    (so ``signal`` must equal ``decoys[0]``) and ``p_signal`` is the
    probability of choosing Z.
    """

    signal: float
    decoys: tuple
    p_signal: float
    p_decoys: tuple

    def validate(self, variant: str, side: str = "") -> "SideParams":
        k, vac = _LAYOUT[_check_variant(variant)]
        tag = f"{side} " if side else ""
        if len(self.decoys) != k or len(self.p_decoys) != k:
            raise ValueError(f"{tag}{variant} needs {k} decoy intensities and probabilities")
        ints = (self.signal,) + tuple(self.decoys)
        if any(not (0.0 < v <= 1.0) for v in ints):
            raise ValueError(f"{tag}intensities must lie in (0, 1], got {ints}")
        if any(self.decoys[i] <= self.decoys[i + 1] for i in range(k - 1)):
            raise ValueError(f"{tag}decoy intensities must be strictly decreasing, got {self.decoys}")
        probs = (self.p_signal,) + tuple(self.p_decoys)
        if any(not (0.0 < p < 1.0) for p in probs):
            raise ValueError(f"{tag}probabilities must lie in (0, 1), got {probs}")
        if variant == PRIOR_ART:
            if abs(self.signal - self.decoys[0]) > 1e-12:
                raise ValueError(f"{tag}prior_art key intensity must equal the first decoy")
            total = sum(self.p_decoys)
        else:
            total = sum(probs)
        if variant == SIX:
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"{tag}six_intensity probabilities must sum to 1, got {total}")
        elif total >= 1.0:
            raise ValueError(f"{tag}probabilities leave no room for the vacuum decoy (sum {total})")
        return self

    def labels(self, variant: str) -> tuple:
        k, vac = _LAYOUT[variant]
        return _DECOY_NAMES[:k] + (("omega",) if vac else ())

    def decoy_table(self, variant: str):
        """X-basis intensities and their sending probabilities, vacuum last."""
        k, vac = _LAYOUT[variant]
        ints = list(self.decoys)
        probs = list(self.p_decoys)
        if vac:
            ints.append(0.0)
            used = sum(self.p_decoys) + (0.0 if variant == PRIOR_ART else self.p_signal)
            probs.append(1.0 - used)
        return np.array(ints), np.array(probs)

    def basis_x_probability(self, variant: str) -> float:
        return 1.0 - self.p_signal if variant == PRIOR_ART else 1.0

    def key_probability(self, variant: str) -> float:
        if variant == PRIOR_ART:
            return self.p_signal * self.p_decoys[0]
        return self.p_signal


@dataclass(frozen=True)
class ProtocolParams:
    """Full parameter set for one protocol variant."""

    variant: str
    A: SideParams
    B: SideParams
    symmetric_constraint: bool = False

    def __post_init__(self):
        self.A.validate(self.variant, "Alice")
        self.B.validate(self.variant, "Bob")
        if self.symmetric_constraint and self.A != self.B:
            raise ValueError("symmetric_constraint requires identical parameters on both sides")

    def vector(self) -> np.ndarray:
        """Flat vector ``[s, decoys.., P_s, P_decoys..]`` for Alice then Bob."""
        def side(p: SideParams):
            return [p.signal, *p.decoys, p.p_signal, *p.p_decoys]
        return np.array(side(self.A) + side(self.B))

    @classmethod
    def from_vector(cls, variant: str, v: Sequence[float], symmetric_constraint: bool = False):
        k = decoy_count(variant)
        v = [float(t) for t in v]
        per = 2 * (k + 1)
        if len(v) != 2 * per:
            raise ValueError(f"{variant} vector needs {2 * per} entries, got {len(v)}")

        def side(u):
            return SideParams(u[0], tuple(u[1:k + 1]), u[k + 1], tuple(u[k + 2:per]))
        return cls(variant, side(v[:per]), side(v[per:]), symmetric_constraint)

    def swapped(self) -> "ProtocolParams":
        return replace(self, A=self.B, B=self.A)

    def rounded(self, decimals: int) -> "ProtocolParams":
        v = np.round(self.vector(), decimals)
        if self.variant == SIX:
            # keep the six-intensity probabilities normalised
            k = decoy_count(SIX)
            per = 2 * (k + 1)
            for off in (0, per):
                v[off + per - 1] = 1.0 - v[off + k + 1] - v[off + k + 2]
        return ProtocolParams.from_vector(self.variant, v, self.symmetric_constraint)


@dataclass(frozen=True)
class DecoyBounds:
    """Certified bounds on the single-photon-pair yield and error rate."""

    Y11_lower: float
    e11_upper: float
    method: str
    feasible: bool = True


# ---------------------------------------------------------------------------
# closed-form estimator

def _analytic_arrays(muA, muB, nuA, nuB, Ql, Qu, raw=False):
    """Y11 lower bound for stacked (..., 3, 3) gain bounds ordered
    ``(mu, nu, omega)`` on both axes; ``raw`` skips the clamp to [0, 1]."""
    M1 = (np.exp(nuA + nuB) * Ql[..., 1, 1] - np.exp(nuA) * Qu[..., 1, 2]
          - np.exp(nuB) * Qu[..., 2, 1] + Ql[..., 2, 2])
    M2 = (np.exp(muA + muB) * Qu[..., 0, 0] - np.exp(muA) * Ql[..., 0, 2]
          - np.exp(muB) * Ql[..., 2, 0] + Ql[..., 2, 2])
    case_a = (muA * M1 / (nuA * nuB) - nuA * M2 / (muA * muB)) / (muA - nuA)
    case_b = (muB * M1 / (nuA * nuB) - nuB * M2 / (muA * muB)) / (muB - nuB)
    Y = np.where(muA * nuB <= nuA * muB, case_a, case_b)
    return Y if raw else np.clip(Y, 0.0, 1.0)


def _e11_arrays(nuA, nuB, Y11, Tl, Tu, raw=False):
    num = (np.exp(nuA + nuB) * Tu[..., 1, 1] - np.exp(nuA) * Tl[..., 1, 2]
           - np.exp(nuB) * Tl[..., 2, 1] + Tu[..., 2, 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        e = num / (nuA * nuB * Y11)
    if raw:
        return e
    return np.where(Y11 > 0, np.clip(e, 0.0, 0.5), 0.5)


def _check_order(mu_A, mu_B, nu_A, nu_B):
    if not (np.all(np.asarray(mu_A) > np.asarray(nu_A)) and np.all(np.asarray(nu_A) > 0)
            and np.all(np.asarray(mu_B) > np.asarray(nu_B)) and np.all(np.asarray(nu_B) > 0)):
        raise ValueError("need mu > nu > 0 on both sides")


def _three_by_three(stats):
    labels = ("mu", "nu", "omega")
    if tuple(stats.labels_A) != labels or tuple(stats.labels_B) != labels:
        raise ValueError("closed-form bounds need the mu/nu/omega decoy set on both sides")


def y11_lower_analytic(mu_A, mu_B, nu_A, nu_B, stats) -> float:
    """Lower bound on the single-photon-pair yield.

    Uses the lower-bounded branch for ``mu_A/mu_B <= nu_A/nu_B`` and the
    other branch otherwise; both agree on the ridge where the ratios match.
    With finite-size statistics the gain combinations take whichever
    confidence bound makes the result conservative.
    """
    _check_order(mu_A, mu_B, nu_A, nu_B)
    _three_by_three(stats)
    Ql, Qu = stats.gain_bounds()
    return _scalar(_analytic_arrays(mu_A, mu_B, nu_A, nu_B, Ql, Qu))


def y11_branches(mu_A, mu_B, nu_A, nu_B, stats):
    """Both closed-form branches (a, b) before the case selection."""
    Ql, Qu = stats.gain_bounds()
    M1 = (np.exp(nu_A + nu_B) * Ql[..., 1, 1] - np.exp(nu_A) * Qu[..., 1, 2]
          - np.exp(nu_B) * Qu[..., 2, 1] + Ql[..., 2, 2])
    M2 = (np.exp(mu_A + mu_B) * Qu[..., 0, 0] - np.exp(mu_A) * Ql[..., 0, 2]
          - np.exp(mu_B) * Ql[..., 2, 0] + Ql[..., 2, 2])
    a = (mu_A * M1 / (nu_A * nu_B) - nu_A * M2 / (mu_A * mu_B)) / (mu_A - nu_A)
    b = (mu_B * M1 / (nu_A * nu_B) - nu_B * M2 / (mu_A * mu_B)) / (mu_B - nu_B)
    return _scalar(a), _scalar(b)


def e11_upper_analytic(nu_A, nu_B, Y11_lower, stats) -> float:
    """Upper bound on the single-photon-pair X-basis error rate, clamped to
    [0, 0.5].  A zero yield bound means no key; 0.5 is returned."""
    _three_by_three(stats)
    Tl, Tu = stats.error_gain_bounds()
    return _scalar(_e11_arrays(nu_A, nu_B, np.asarray(Y11_lower, dtype=float), Tl, Tu))


def analytic_bounds(mu_A, mu_B, nu_A, nu_B, stats) -> DecoyBounds:
    Y = y11_lower_analytic(mu_A, mu_B, nu_A, nu_B, stats)
    return DecoyBounds(Y, e11_upper_analytic(nu_A, nu_B, Y, stats), "analytic")


def _scalar(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


# ---------------------------------------------------------------------------
# linear-programming estimator
#
# Variables: a yield block indexed by (n, m) for n, m < cutoff, then
# error-yields t_nm for n, m >= 1.  For n, m >= 1 the yield-block entry is
# the error-free part w_nm = Y_nm - t_nm, which builds the requirement
# t_nm <= Y_nm into the variable bounds without extra rows; Y_nm <= 1 then
# loosens to Y_nm <= 2, a valid relaxation that never binds at these yields.
# Events with vacuum on one side are pure noise, so their error yield is
# Y_n0 / 2 and enters the error-gain rows through the yield block.  Every
# pairing contributes one ranged gain row and one ranged error row; lower
# limits are relaxed by the Poisson mass beyond the cutoff.

DEFAULT_CUTOFF = 10


def _lp_layout(cutoff: int):
    ny = cutoff * cutoff
    nt = (cutoff - 1) ** 2
    c_min = np.zeros(ny + nt)
    c_min[1 * cutoff + 1] = 1.0  # Y_11 = w_11 + t_11
    c_min[ny] = 1.0
    c_max = np.zeros(ny + nt)
    c_max[ny] = -1.0  # t_11 is the first error variable
    return ny, nt, c_min, c_max


def _lp_rows(intsA, intsB, cutoff: int):
    """Coefficient matrices (batch, 2*kA*kB, ny+nt) and tail masses."""
    n = np.arange(cutoff)
    PA = poisson.pmf(n, np.asarray(intsA, dtype=float)[..., None])  # (..., kA, c)
    PB = poisson.pmf(n, np.asarray(intsB, dtype=float)[..., None])
    outer = PA[..., :, None, :, None] * PB[..., None, :, None, :]      # (..., kA, kB, c, c)
    kA, kB = PA.shape[-2], PB.shape[-2]
    batch = outer.shape[:-4]
    gain_y = outer.reshape(batch + (kA * kB, cutoff * cutoff))
    multi = outer[..., 1:, 1:].reshape(batch + (kA * kB, (cutoff - 1) ** 2))
    err_y = np.zeros_like(outer)
    err_y[..., 0, :] = 0.5 * outer[..., 0, :]
    err_y[..., :, 0] = 0.5 * outer[..., :, 0]
    err_y = err_y.reshape(batch + (kA * kB, cutoff * cutoff))
    A = np.concatenate([np.concatenate([gain_y, multi], axis=-1),
                        np.concatenate([err_y, multi], axis=-1)], axis=-2)
    tail = 1.0 - gain_y.sum(axis=-1)
    return A, np.maximum(tail, 0.0)


def lp_bounds_arrays(intsA, intsB, Ql, Qu, Tl, Tu, cutoff: int = DEFAULT_CUTOFF, raw=False):
    """Batched LP bounds.

    ``intsA`` has shape (b, kA) and the statistics (b, kA, kB).  Returns
    arrays ``(Y11_lower, e11_upper, feasible)``; with ``raw`` the error bound
    is not clamped.
    """
    intsA = np.atleast_2d(intsA)
    intsB = np.atleast_2d(intsB)
    b = intsA.shape[0]
    A, tail = _lp_rows(intsA, intsB, cutoff)
    flat = lambda v: np.asarray(v, dtype=float).reshape(b, -1)
    tail = tail.reshape(b, -1)
    lo = np.concatenate([flat(Ql) - tail, flat(Tl) - tail], axis=1)
    hi = np.concatenate([flat(Qu), flat(Tu)], axis=1)
    # scale each row so its upper limit is O(1)
    scale = 1.0 / np.where(hi > 0, hi, 1.0)
    A = A * scale[..., None]
    lo = lo * scale
    hi = hi * scale
    ny, nt, c_min, c_max = _lp_layout(cutoff)
    lx = np.zeros(ny + nt)
    ux = np.ones(ny + nt)
    st1, y11 = linprog_box_batch(c_min, A, lo, hi, lx, ux)
    st2, neg_t11 = linprog_box_batch(c_max, A, lo, hi, lx, ux)
    feasible = (st1 == OPTIMAL) & (st2 == OPTIMAL)
    Y = np.where(feasible, np.clip(y11, 0.0, 1.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_raw = np.where(Y > 0, -neg_t11 / np.where(Y > 0, Y, 1.0), np.inf)
    if raw:
        return Y, e_raw, feasible
    return Y, np.where(Y > 0, np.clip(e_raw, 0.0, 0.5), 0.5), feasible


def decoy_bounds_lp(intensities_A: Sequence[float], intensities_B: Sequence[float], stats,
                    cutoff: int = DEFAULT_CUTOFF, variant: Optional[str] = None) -> DecoyBounds:
    """LP estimate of the single-photon bounds.

    ``intensities_A``/``intensities_B`` are the X-basis intensities in the
    same order as the statistics table (vacuum as 0).  An infeasible LP means
    the statistics cannot come from any photon-number mixture; it is reported
    with ``feasible=False`` and a zero yield.
    """
    if variant is not None:
        _check_variant(variant)
    Ql, Qu = stats.gain_bounds()
    Tl, Tu = stats.error_gain_bounds()
    Y, e, ok = lp_bounds_arrays(np.asarray(intensities_A)[None], np.asarray(intensities_B)[None],
                                np.asarray(Ql)[None], np.asarray(Qu)[None],
                                np.asarray(Tl)[None], np.asarray(Tu)[None], cutoff)
    return DecoyBounds(float(Y[0]), float(e[0]), "lp", bool(ok[0]))
