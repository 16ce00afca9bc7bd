"""Exact finite-horizon distribution of the population by truncated-pmf
propagation. This is the brute-force ground truth the other modules are
checked against; it favors auditability (plain windowed convolutions,
conservative tail accounting) over speed and targets horizons n <~ 20.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .environment import BpveiModel
from .laws import Law

__all__ = [
    "TruncatedPmf",
    "OracleMoments",
    "propagate",
    "exact_survival",
    "moments_from_pmf",
]

DEFAULT_CUTOFF = 2048
DEFAULT_TAIL_TOL = 1e-10
MAX_CUTOFF = 1 << 15

# Mass below this is dumped into the tail rather than tracked, bounding the
# number of convolution powers per compound step.
_NEGLECT = 1e-17


@dataclass(frozen=True)
class TruncatedPmf:
    """Probabilities on 0..cutoff plus the unplaced mass above/beyond them.

    ``tail`` is conservative: any mass that ever left the window stays in it.
    """

    probs: np.ndarray
    tail: float
    cutoff: int
    horizon: int
    tail_exceeded: bool = False

    def mass(self) -> float:
        return float(self.probs.sum()) + self.tail


def _law_pmf(law: Law, window: int) -> np.ndarray:
    """Law pmf on a window just wide enough for a tail below _NEGLECT."""
    cut = 8
    while True:
        cut = min(cut, window)
        probs, tail = law.pmf_vector(cut)
        if tail < _NEGLECT or cut >= window:
            break
        cut *= 2
    nonzero = np.nonzero(probs)[0]
    end = int(nonzero.max()) + 1 if len(nonzero) else 1
    return probs[:end]


def _compound_step(jpmf: np.ndarray, xpmf: np.ndarray, window: int) -> np.ndarray:
    """Distribution of the sum of J iid offspring draws, J ~ jpmf (truncated).

    Iterates windowed convolution powers of the offspring pmf; mass that
    leaves the window, sits past the negligible-suffix cut of J, or was
    missing from the truncated offspring pmf simply never lands in the
    output, so conservation accounting picks it up as tail.
    """
    suffix = jpmf[::-1].cumsum()[::-1]
    live = np.nonzero(suffix > _NEGLECT)[0]
    jmax = int(live.max()) if len(live) else 0
    out = np.zeros(window + 1)
    out[0] = jpmf[0]
    power = np.array([1.0])  # offspring sum over 0 individuals
    for j in range(1, jmax + 1):
        power = np.convolve(power, xpmf)[: window + 1]
        w = jpmf[j]
        if w > 0.0:
            out[: len(power)] += w * power
    return out


def _propagate_fixed(model: BpveiModel, horizon: int, window: int) -> TruncatedPmf:
    probs = np.zeros(window + 1)
    probs[0] = 1.0
    tail = 0.0
    for gen in range(horizon):
        # immigration phase: J = Z + I
        ipmf = _law_pmf(model.immigration_law(gen), window)
        jpmf = np.convolve(probs, ipmf)[: window + 1]
        # reproduction phase: sum of J offspring draws
        xpmf = _law_pmf(model.offspring_law(gen), window)
        probs = _compound_step(jpmf, xpmf, window)
        tail = max(tail, 1.0 - float(probs.sum()), 0.0)
    return TruncatedPmf(probs=probs, tail=tail, cutoff=window, horizon=horizon)


def propagate(model: BpveiModel, n: int, cutoff: int = DEFAULT_CUTOFF,
              tail_tol: float = DEFAULT_TAIL_TOL) -> TruncatedPmf:
    """Exact law of the generation-``n`` population on a truncated window.

    The window starts at ``cutoff`` states and doubles (up to a memory cap)
    while the conservative tail exceeds ``tail_tol``; if the cap is reached
    first, the result carries the ``tail_exceeded`` flag and the caller
    decides.
    """
    if n < 0:
        raise ValueError("horizon must be >= 0")
    window = max(1, cutoff)
    while True:
        pmf = _propagate_fixed(model, n, window)
        if pmf.tail <= tail_tol:
            return pmf
        if window >= MAX_CUTOFF:
            return TruncatedPmf(probs=pmf.probs, tail=pmf.tail, cutoff=pmf.cutoff,
                                horizon=n, tail_exceeded=True)
        window *= 2


def exact_survival(model: BpveiModel, n: int, cutoff: int = DEFAULT_CUTOFF,
                   tail_tol: float = DEFAULT_TAIL_TOL) -> tuple[float, float, TruncatedPmf]:
    """Bracket ``P[Z_n > 0]``: (lower, upper, pmf) with width at most the tail."""
    pmf = propagate(model, n, cutoff, tail_tol)
    p0 = float(pmf.probs[0])
    lower = max(0.0, 1.0 - p0 - pmf.tail)
    upper = min(1.0, 1.0 - p0)
    return lower, upper, pmf


@dataclass(frozen=True)
class OracleMoments:
    mean: float
    variance: float
    mean_interval: tuple[float, float]
    variance_interval: tuple[float, float]
    one_sided: bool  # no declared support bound: upper ends are +inf


def moments_from_pmf(pmf: TruncatedPmf, support_bound: Optional[float] = None) -> OracleMoments:
    """Truncated mean/variance plus intervals accounting for the tail mass.

    Tail mass is only known to sit somewhere in [0, support_bound]; without a
    declared bound the intervals are one-sided.
    """
    k = np.arange(pmf.cutoff + 1, dtype=float)
    m1 = float((k * pmf.probs).sum())
    m2 = float((k * k * pmf.probs).sum())
    if pmf.tail == 0.0:
        return OracleMoments(mean=m1, variance=m2 - m1 * m1,
                             mean_interval=(m1, m1), variance_interval=(m2 - m1 * m1,) * 2,
                             one_sided=False)
    if support_bound is None:
        hi1 = hi2 = math.inf
        one_sided = True
    else:
        hi1 = m1 + pmf.tail * support_bound
        hi2 = m2 + pmf.tail * support_bound ** 2
        one_sided = False
    var_lo = max(0.0, m2 - hi1 * hi1)
    var_hi = hi2 - m1 * m1
    return OracleMoments(mean=m1, variance=m2 - m1 * m1,
                         mean_interval=(m1, hi1), variance_interval=(var_lo, var_hi),
                         one_sided=one_sided)
