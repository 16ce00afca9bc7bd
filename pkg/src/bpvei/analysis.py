"""Closed-form moment sequences, criticality classification, the gamma-limit
normalizer, and the extinction-criterion evaluator.

The variance recursion Var[Z_{n+1}] = m_n^2 (Var[Z_n] + beta_n^2)
+ sigma_n^2 (E[Z_n] + alpha_n) is the implemented authority; the expanded
double-sum variance formula is evaluated alongside it and their deviation is
reported rather than reconciled (the expanded form disagrees, see the
moment-table fields).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .environment import BpveiModel
from .pgf import process_survival

__all__ = [
    "MomentTable",
    "NormalizerSequence",
    "CriticalityReport",
    "ExtinctionReport",
    "QLowerBounds",
    "mean_sequence",
    "mean_double_sum",
    "variance_sequence",
    "variance_expanded",
    "moment_table",
    "normalizer",
    "criticality_classify",
    "extinction_conditions",
    "q_lower_bounds",
    "no_return_terms",
]


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------

def mean_sequence(model: BpveiModel, horizon: int) -> np.ndarray:
    """E[Z_0..Z_horizon] via the one-step recursion E[Z_{n+1}] = m_n (E[Z_n] + a_n)."""
    out = np.zeros(horizon + 1)
    for n in range(horizon):
        m = model.offspring_law(n).mean
        a = model.immigration_law(n).mean
        out[n + 1] = m * (out[n] + a)
    return out


def mean_double_sum(model: BpveiModel, n: int) -> float:
    """E[Z_{n+1}] in the expanded form sum_i alpha_{n-i} prod_{j<=i} m_{n-j}."""
    means = [model.offspring_law(j).mean for j in range(n + 1)]
    alphas = [model.immigration_law(j).mean for j in range(n + 1)]
    total = 0.0
    prod = 1.0
    for i in range(n + 1):
        prod *= means[n - i]
        total += alphas[n - i] * prod
    return total


def variance_sequence(model: BpveiModel, horizon: int) -> np.ndarray:
    """Var[Z_0..Z_horizon] via the proof recursion (the implemented authority)."""
    means = mean_sequence(model, horizon)
    out = np.zeros(horizon + 1)
    for n in range(horizon):
        off = model.offspring_law(n)
        imm = model.immigration_law(n)
        out[n + 1] = off.mean ** 2 * (out[n] + imm.variance) \
            + off.variance * (means[n] + imm.mean)
    return out


def variance_expanded(model: BpveiModel, n: int) -> float:
    """Var[Z_{n+1}] evaluated literally from the expanded double-sum form.

    Known to exceed the recursion (its inner sum lands one generation ahead
    of the mean the recursion calls for); kept as a numerical exhibit.
    """
    m = [model.offspring_law(j).mean for j in range(n + 1)]
    s2 = [model.offspring_law(j).variance for j in range(n + 1)]
    a = [model.immigration_law(j).mean for j in range(n + 1)]
    b2 = [model.immigration_law(j).variance for j in range(n + 1)]
    first = sum(b2[i] * math.prod(m[j] ** 2 for j in range(i, n + 1)) for i in range(n + 1))
    second = 0.0
    for i in range(n + 1):
        inner = 0.0
        prod = 1.0
        for k in range(i + 1):
            prod *= m[i - k]
            inner += a[i - k] * prod
        second += math.prod(m[j] ** 2 for j in range(i + 1, n + 1)) * s2[i] * (a[i] + inner)
    return first + second


@dataclass(frozen=True)
class MomentTable:
    """Per-generation parameters and process moments up to a horizon."""

    horizon: int
    m: np.ndarray        # offspring means, generations 0..horizon-1
    sigma2: np.ndarray
    alpha: np.ndarray    # immigration means
    beta2: np.ndarray
    mu: np.ndarray       # cumulative offspring means, mu[n] = prod_{i<=n} m_i
    nu: np.ndarray       # normalized second factorial moments
    mean: np.ndarray     # E[Z_n], n = 0..horizon
    variance: np.ndarray             # recursion values (authoritative)
    variance_expanded: np.ndarray    # printed double-sum values
    overflowed: bool

    def expanded_deviation(self) -> np.ndarray:
        return self.variance_expanded - self.variance


def moment_table(model: BpveiModel, horizon: int) -> MomentTable:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    gens = range(horizon)
    off = [model.offspring_law(n) for n in gens]
    imm = [model.immigration_law(n) for n in gens]
    mean = mean_sequence(model, horizon)
    var = variance_sequence(model, horizon)
    var_printed = np.zeros(horizon + 1)
    for n in range(horizon):
        var_printed[n + 1] = variance_expanded(model, n)
    return MomentTable(
        horizon=horizon,
        m=np.array([o.mean for o in off]),
        sigma2=np.array([o.variance for o in off]),
        alpha=np.array([h.mean for h in imm]),
        beta2=np.array([h.variance for h in imm]),
        mu=np.cumprod([o.mean for o in off]),
        nu=np.array([o.nu for o in off]),
        mean=mean,
        variance=var,
        variance_expanded=var_printed,
        overflowed=not (np.isfinite(mean).all() and np.isfinite(var).all()),
    )


# ---------------------------------------------------------------------------
# Normalizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalizerSequence:
    """Partial sums S_n = sum_{k<=n} nu_k / mu_{k-1} and a_{n+1} = mu_n S_n / 2."""

    horizon: int
    partial_sums: np.ndarray  # S_n for n = 0..horizon-1
    a: np.ndarray             # a[n] for n = 0..horizon (a[0] = 0 by convention)
    vacuous: bool             # every nu_k is zero

    def a_of(self, n: int) -> float:
        return float(self.a[n])


def normalizer(model: BpveiModel, horizon: int) -> NormalizerSequence:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    laws = [model.offspring_law(n) for n in range(horizon)]
    mu = np.cumprod([law.mean for law in laws])
    nu = np.array([law.nu for law in laws])
    mu_prev = np.concatenate(([1.0], mu[:-1]))  # mu_{k-1} with mu_{-1} = 1
    partial = np.cumsum(nu / mu_prev)
    a = np.zeros(horizon + 1)
    a[1:] = mu * partial / 2.0
    return NormalizerSequence(horizon=horizon, partial_sums=partial, a=a,
                              vacuous=bool((nu == 0.0).all()))


# ---------------------------------------------------------------------------
# Criticality
# ---------------------------------------------------------------------------

def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 4:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


# Documented divergence heuristic: the partial sum must grow by at least this
# factor between the last two horizons, with increments whose fitted power-law
# exponent is not summable.
_GROWTH_DIVERGENT = 1.10
_GROWTH_STALLED = 1.01
_SUMMABILITY_EDGE = -1.05


@dataclass(frozen=True)
class CriticalityReport:
    horizons: tuple[int, ...]
    partial_sums: np.ndarray   # S at each horizon
    inv_mu: np.ndarray         # 1/mu at each horizon
    ratios: np.ndarray         # (1/mu) / S at each horizon
    growth_ratio: float        # S(last) / S(second to last)
    increment_exponent: float  # log-log slope of nu_n/mu_{n-1} over the last half
    verdict: str               # critical-evidence | not-critical | vacuous | inconclusive
    vacuous: bool


def criticality_classify(model: BpveiModel, horizons: Sequence[int]) -> CriticalityReport:
    """Judge the critical-regime conditions from partial-sum growth.

    Divergence of S_n = sum nu_k/mu_{k-1} is called when S grows by >= 10%
    between the last two horizons and the per-generation increments fit a
    non-summable power law; the o(.) condition is called when (1/mu_n)/S_n
    shrinks across the horizons. All evidence is returned, so every verdict
    is recomputable.
    """
    horizons = tuple(sorted(int(h) for h in horizons))
    if len(horizons) < 2 or horizons[0] < 1:
        raise ValueError("need at least two horizons >= 1")
    hmax = horizons[-1]
    laws = [model.offspring_law(n) for n in range(hmax)]
    mu = np.cumprod([law.mean for law in laws])
    nu = np.array([law.nu for law in laws])
    mu_prev = np.concatenate(([1.0], mu[:-1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        increments = np.where(nu == 0.0, 0.0, nu / mu_prev)
        partial = np.cumsum(increments)
        idx = np.array(horizons) - 1
        sums = partial[idx]
        inv_mu = 1.0 / mu[idx]
    vacuous = bool((nu == 0.0).all())
    if vacuous:
        return CriticalityReport(horizons=horizons, partial_sums=sums, inv_mu=inv_mu,
                                 ratios=np.full(len(horizons), math.nan),
                                 growth_ratio=math.nan, increment_exponent=math.nan,
                                 verdict="vacuous", vacuous=True)
    ratios = inv_mu / sums
    growth = float(sums[-1] / sums[-2]) if sums[-2] > 0 else math.inf
    n = np.arange(1, hmax + 1, dtype=float)
    half = hmax // 2
    exponent = _loglog_slope(n[half:], increments[half:])
    diverges = growth >= _GROWTH_DIVERGENT and (math.isnan(exponent) or exponent >= _SUMMABILITY_EDGE)
    stalls = growth <= _GROWTH_STALLED
    small_o = bool(ratios[-1] < ratios[0]) and float(ratios[-1]) <= 0.75 * float(ratios[0])
    if diverges and small_o:
        verdict = "critical-evidence"
    elif stalls:
        verdict = "not-critical"
    else:
        verdict = "inconclusive"
    return CriticalityReport(horizons=horizons, partial_sums=sums, inv_mu=inv_mu,
                             ratios=ratios, growth_ratio=growth, increment_exponent=exponent,
                             verdict=verdict, vacuous=False)


# ---------------------------------------------------------------------------
# Extinction criterion
# ---------------------------------------------------------------------------

def no_return_terms(model: BpveiModel, horizon: int) -> np.ndarray:
    """t_j = 1 - h_j(f_j(0)): chance that generation-j immigrants leave offspring."""
    out = np.empty(horizon + 1)
    for j in range(horizon + 1):
        off_gap = model.offspring_law(j).gap(1.0)  # 1 - f_j(0)
        out[j] = model.immigration_law(j).gap(off_gap)
    return out


def _power_like_mean(schedule_owner) -> Optional[tuple[float, float, int]]:
    """(coeff, exponent, offset) when the final-stage law's mean is its scheduled
    parameter and that schedule is a pure power; None otherwise."""
    last = schedule_owner.stages[-1].law
    if last.family == "bernoulli_shift":
        sched = last.p
    elif last.family == "poisson":
        sched = last.rate
    else:
        return None
    if sched.kind != "power":
        return None
    return sched.coeff, sched.exponent, sched.offset


def _integral_tail(coeff: float, exponent: float, offset: int, start: int) -> Optional[float]:
    """Upper bound on sum_{j>start} coeff (j+offset)^exponent by the integral test."""
    if exponent >= -1.0 or coeff <= 0.0:
        return None
    return coeff * (start + offset) ** (exponent + 1.0) / (-(exponent + 1.0))


def _analytic_tail(model: BpveiModel, horizon: int) -> tuple[Optional[float], Optional[str]]:
    """Certified bound on sum_{j>horizon} t_j when the schedules allow one.

    Two routes: t_j <= alpha_j (immigration mean power-decaying, exponent
    < -1), and t_j <= alpha_sup * m_j (bounded immigration mean with a
    power-decaying offspring mean). Other shapes yield no bound.
    """
    candidates = []
    imm_power = _power_like_mean(model.immigration)
    if imm_power is not None and horizon >= model.immigration.stages[-1].start:
        tail = _integral_tail(*imm_power, start=horizon)
        if tail is not None:
            candidates.append((tail, "immigration-mean-tail"))
    off_power = _power_like_mean(model.offspring)
    if off_power is not None and horizon >= model.offspring.stages[-1].start:
        probed = max(model.immigration_law(j).mean for j in range(min(horizon, 64) + 1))
        alpha_sup = max(probed, _mean_limit(model.immigration))
        if math.isfinite(alpha_sup):
            tail = _integral_tail(*off_power, start=horizon)
            if tail is not None:
                candidates.append((alpha_sup * tail, "offspring-mean-tail"))
    if not candidates:
        return None, None
    return min(candidates)


def _mean_limit(schedule) -> float:
    last = schedule.stages[-1].law
    if last.family == "bernoulli_shift":
        return last.p.limit()
    if last.family == "poisson":
        return last.rate.limit()
    if last.family == "geometric":
        p = last.p.limit()
        return (1.0 - p) / p if 0.0 < p < 1.0 else math.inf
    if last.family == "linear_fractional":
        return last.m.limit()
    if last.family == "finite_pmf":
        return float(sum(k * q for k, q in enumerate(last.probs)))
    return math.inf


def _dyadic(horizon: int) -> list[int]:
    ns = []
    n = 1
    while n < horizon:
        ns.append(n)
        n *= 2
    ns.append(horizon)
    return ns


@dataclass(frozen=True)
class QLowerBounds:
    ns: np.ndarray
    bounds: np.ndarray
    q_hat: float
    certified: bool           # an analytic tail factor backs the bounds
    tail_bound: Optional[float]
    tail_route: Optional[str]


def q_lower_bounds(model: BpveiModel, horizon: int) -> QLowerBounds:
    """Lower bounds F_n(0) * prod_{j=n..horizon}(1 - t_j) * (1 - tail) on the
    eventually-always-extinct probability, scanned over n <= horizon.

    Without an analytic tail for sum_{j>horizon} t_j the product is simply
    truncated and the bounds are reported as uncertified.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    terms = no_return_terms(model, horizon)
    tail, route = _analytic_tail(model, horizon)
    tail_factor = max(0.0, 1.0 - tail) if tail is not None else 1.0
    with np.errstate(divide="ignore"):
        logs = np.log1p(-np.minimum(terms, 1.0))
    suffix = np.concatenate((np.cumsum(logs[::-1])[::-1], [0.0]))
    ns = np.arange(horizon + 1)
    f0 = np.array([1.0 - process_survival(model, int(n)) for n in ns])
    bounds = f0 * np.exp(suffix[: horizon + 1]) * tail_factor
    return QLowerBounds(ns=ns, bounds=bounds, q_hat=float(bounds.max()),
                        certified=tail is not None, tail_bound=tail, tail_route=route)


@dataclass(frozen=True)
class ExtinctionReport:
    horizon: int
    dyadic_ns: tuple[int, ...]
    composite_gaps: np.ndarray     # 1 - f_{-1,n}(0) at the dyadic generations
    condition1: str                # holds-evidence | stalls | inconclusive
    partial_sums: np.ndarray       # sums of t_j at the dyadic generations
    partial_sum_total: float       # sum of t_j up to the horizon
    tail_bound: Optional[float]
    tail_route: Optional[str]
    increment_exponent: float      # log-log slope of t_j over the trailing half
    condition2: str                # convergent-evidence | divergent-evidence | inconclusive
    q: QLowerBounds
    verdict: str  # certain-extinction-evidence | positive-survival-evidence | inconclusive


def extinction_conditions(model: BpveiModel, horizon: int) -> ExtinctionReport:
    """Evaluate both extinction conditions with explicit numeric evidence.

    Condition 1 tracks the monotone gaps 1 - f_{-1,n}(0): dropping by a
    decade across the scan is taken as evidence for the limit 1, a trailing
    ratio above 0.99 as evidence it stalls below 1. Condition 2 combines the
    partial sums of t_j = 1 - h_j(f_j(0)) with an analytic tail where the
    schedules are power-type, falling back to a power-law fit of the
    increments.
    """
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    from .pgf import compose_gap  # local import to avoid cycle at module load

    ns = _dyadic(horizon)
    gaps = np.array([compose_gap(model, -1, n, 1.0) for n in ns])
    if gaps[-1] <= 1e-12 or (gaps[-1] <= 0.1 * gaps[0] and bool((np.diff(gaps) <= 0).all())):
        condition1 = "holds-evidence"
    elif gaps[-1] >= 0.99 * gaps[len(gaps) // 2]:
        condition1 = "stalls"
    else:
        condition1 = "inconclusive"

    terms = no_return_terms(model, horizon)
    csum = np.cumsum(terms)
    partial = csum[np.array(ns)]
    total = float(csum[-1])
    tail, route = _analytic_tail(model, horizon)
    j = np.arange(horizon + 1, dtype=float)
    half = horizon // 2
    exponent = _loglog_slope(j[half:], terms[half:])
    growth = float(partial[-1] / partial[len(partial) // 2]) if partial[len(partial) // 2] > 0 else math.inf
    if tail is not None:
        condition2 = "convergent-evidence"
    elif not math.isnan(exponent) and exponent >= _SUMMABILITY_EDGE and growth >= 1.02:
        condition2 = "divergent-evidence"
    else:
        condition2 = "inconclusive"

    if condition1 == "holds-evidence" and condition2 == "convergent-evidence":
        verdict = "certain-extinction-evidence"
    elif condition1 == "stalls" or condition2 == "divergent-evidence":
        verdict = "positive-survival-evidence"
    else:
        verdict = "inconclusive"
    return ExtinctionReport(
        horizon=horizon,
        dyadic_ns=tuple(ns),
        composite_gaps=gaps,
        condition1=condition1,
        partial_sums=partial,
        partial_sum_total=total,
        tail_bound=tail,
        tail_route=route,
        increment_exponent=exponent,
        condition2=condition2,
        q=q_lower_bounds(model, horizon),
        verdict=verdict,
    )
