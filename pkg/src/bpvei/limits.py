"""Numerical verification of the gamma limit law for critical models.

For a model whose offspring laws are critical (partial sums of
nu_k/mu_{k-1} diverging, 1/mu_n negligible against them) and whose
immigration means stabilize at alpha > 0 while nu_n -> nu > 0, the
normalized population Z_n / a_n converges to Gamma(2 alpha / nu, 1). This
module audits the hypotheses, normalizes endpoint samples, and compares
them against that target by Kolmogorov-Smirnov distance and by the Laplace
transform at probe points, where the target value is (1 + lambda)^(-shape).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import CriticalityReport, criticality_classify, normalizer
from .environment import BpveiModel
from .laws import RegularityReport, limit_law_of, moment_limits, regularity_check_laws
from .montecarlo import EmpiricalDistribution, checkpoint_samples
from .pgf import process_survival

__all__ = [
    "gamma_cdf",
    "gamma_ppf",
    "gamma_sample",
    "ks_statistic",
    "ks_two_sample",
    "ks_critical_value",
    "ks_two_sample_critical_value",
    "LaplaceProbe",
    "empirical_laplace",
    "AssumptionAudit",
    "assumption_audit",
    "GammaLimitReport",
    "verify_gamma_limit",
]

_EPS = 1e-16
_MAX_ITER = 600


# ---------------------------------------------------------------------------
# Regularized lower incomplete gamma
# ---------------------------------------------------------------------------

def _gamma_series(shape: float, x: float) -> float:
    term = 1.0 / shape
    total = term
    denom = shape
    for _ in range(_MAX_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + shape * math.log(x) - math.lgamma(shape))


def _gamma_continued_fraction(shape: float, x: float) -> float:
    # modified Lentz evaluation of the upper-tail continued fraction
    tiny = 1e-300
    b = x + 1.0 - shape
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - shape)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + shape * math.log(x) - math.lgamma(shape)) * h


def gamma_cdf(shape: float, x: float) -> float:
    """Regularized lower incomplete gamma P(shape, x): the cdf of Gamma(shape, 1).

    Power series for x < shape + 1, continued fraction beyond.
    """
    if not (shape > 0.0 and math.isfinite(shape)):
        raise ValueError(f"shape must be positive, got {shape!r}")
    if x <= 0.0:
        return 0.0
    if x < shape + 1.0:
        return min(1.0, _gamma_series(shape, x))
    return min(1.0, max(0.0, 1.0 - _gamma_continued_fraction(shape, x)))


def gamma_ppf(shape: float, p: float, tol: float = 1e-12) -> float:
    """Quantile of Gamma(shape, 1) by bisection on ``gamma_cdf``."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must be in [0, 1)")
    if p == 0.0:
        return 0.0
    hi = shape + 1.0
    while gamma_cdf(shape, hi) < p:
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError("gamma quantile bracket failed")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if gamma_cdf(shape, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gamma_sample(shape: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Gamma(shape, 1) draws through the module's own inverse cdf, so that
    self-tests exercise a single audited special-function path."""
    return np.array([gamma_ppf(shape, u) for u in rng.random(size)])


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------

def _as_values(sample) -> np.ndarray:
    if isinstance(sample, EmpiricalDistribution):
        return sample.values
    return np.asarray(sample, dtype=float)


def ks_statistic(sample, cdf: Callable[[float], float]) -> float:
    """sup-norm distance between the empirical cdf and ``cdf``, using both
    one-sided envelopes at the sample points."""
    v = np.sort(_as_values(sample))
    if len(v) == 0:
        raise ValueError("empty sample")
    f = np.array([cdf(x) for x in v])
    n = len(v)
    steps = np.arange(1, n + 1) / n
    d_plus = float((steps - f).max())
    d_minus = float((f - (steps - 1.0 / n)).max())
    return max(d_plus, d_minus, 0.0)


def ks_two_sample(first, second) -> float:
    a = np.sort(_as_values(first))
    b = np.sort(_as_values(second))
    everything = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, everything, side="right") / len(a)
    cdf_b = np.searchsorted(b, everything, side="right") / len(b)
    return float(np.abs(cdf_a - cdf_b).max())


def _ks_scale(alpha: float) -> float:
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


def ks_critical_value(alpha: float, n: int) -> float:
    """Large-sample one-sample rejection threshold (about 1.63/sqrt(n) at 1%)."""
    return _ks_scale(alpha) / math.sqrt(n)


def ks_two_sample_critical_value(alpha: float, n1: int, n2: int) -> float:
    return _ks_scale(alpha) * math.sqrt((n1 + n2) / (n1 * n2))


@dataclass(frozen=True)
class LaplaceProbe:
    lam: float
    value: float       # mean of exp(-lam * x) over the sample
    stderr: float
    target: Optional[float] = None

    def within(self, slack: float = 0.0) -> bool:
        return abs(self.value - self.target) <= max(4.0 * self.stderr, slack)


def empirical_laplace(sample, lam: float, target: Optional[float] = None) -> LaplaceProbe:
    """Sample Laplace transform at ``lam`` with its standard error."""
    if lam <= 0.0:
        raise ValueError("lambda must be positive")
    v = np.exp(-lam * _as_values(sample))
    n = len(v)
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return LaplaceProbe(lam=float(lam), value=float(v.mean()), stderr=se, target=target)


# ---------------------------------------------------------------------------
# Hypothesis audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionAudit:
    horizon: int
    nu_values: np.ndarray      # offspring nu_n at dyadic generations
    nu_limit: float
    nu_status: str             # pass | fail | inconclusive
    alpha_values: np.ndarray   # immigration means at dyadic generations
    alpha_limit: float
    alpha_status: str
    tau: float                 # inf over h_n(0)
    tau_status: str
    beta2_sup: float
    beta2_status: str
    criticality: CriticalityReport
    regularity: RegularityReport

    @property
    def all_pass(self) -> bool:
        return (
            self.nu_status == "pass"
            and self.alpha_status == "pass"
            and self.tau_status == "pass"
            and self.beta2_status == "pass"
            and self.criticality.verdict == "critical-evidence"
            and all(e.satisfied for e in self.regularity.entries)
        )

    def failures(self) -> list[str]:
        out = []
        if self.nu_status != "pass":
            out.append(f"nu limit ({self.nu_status})")
        if self.alpha_status != "pass":
            out.append(f"alpha limit ({self.alpha_status})")
        if self.tau_status != "pass":
            out.append("tau = inf h_n(0)")
        if self.beta2_status != "pass":
            out.append("sup beta_n^2")
        if self.criticality.verdict != "critical-evidence":
            out.append(f"criticality ({self.criticality.verdict})")
        if not all(e.satisfied for e in self.regularity.entries):
            out.append("regularity")
        return out


def _dyadic_upto(horizon: int) -> list[int]:
    ns = [0]
    n = 1
    while n < horizon:
        ns.append(n)
        n *= 2
    ns.append(horizon)
    return sorted(set(ns))


def _limit_status(values: np.ndarray, limit: float, positive_required: bool) -> str:
    if math.isnan(limit):
        return "inconclusive"
    if not math.isfinite(limit) or (positive_required and limit <= 0.0):
        return "fail"
    drift = abs(values[-1] - limit)
    scale = max(abs(limit), 1e-12)
    return "pass" if drift <= 0.05 * scale else "inconclusive"


def assumption_audit(model: BpveiModel, horizon: int) -> AssumptionAudit:
    """Schedule-aware check of the gamma-limit hypotheses up to ``horizon``.

    Parameter limits come from the schedule structure (exact for constant and
    power schedules), not from fitting the finite evidence.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    ns = _dyadic_upto(horizon)
    off_limit = limit_law_of(model.offspring.stages[-1].law)
    _, _, nu_limit, _ = moment_limits(model.offspring.stages[-1].law)
    alpha_limit, beta2_limit, _, h0_limit = moment_limits(model.immigration.stages[-1].law)

    nu_values = np.array([model.offspring_law(n).nu for n in ns])
    alpha_values = np.array([model.immigration_law(n).mean for n in ns])

    h0 = [model.immigration_law(n).mass_at_zero for n in ns] + [h0_limit]
    tau = float(min(h0))

    beta2_sup = max([model.immigration_law(n).variance for n in ns] + [beta2_limit])
    beta2_status = "pass" if math.isfinite(beta2_sup) else "fail"

    dyadic_horizons = [max(2, horizon // 8), max(3, horizon // 4), max(4, horizon // 2), horizon]
    crit = criticality_classify(model, sorted(set(dyadic_horizons)))
    reg_horizon = min(horizon, 64)
    reg = regularity_check_laws(
        [model.offspring_law(n) for n in range(reg_horizon + 1)],
        off_limit, epsilons=(0.1, 0.01), horizon=reg_horizon,
    )

    return AssumptionAudit(
        horizon=horizon,
        nu_values=nu_values,
        nu_limit=float(nu_limit),
        nu_status=_limit_status(nu_values, nu_limit, positive_required=True),
        alpha_values=alpha_values,
        alpha_limit=float(alpha_limit),
        alpha_status=_limit_status(alpha_values, alpha_limit, positive_required=True),
        tau=tau,
        tau_status="pass" if tau > 0.0 else "fail",
        beta2_sup=float(beta2_sup),
        beta2_status=beta2_status,
        criticality=crit,
        regularity=reg,
    )


# ---------------------------------------------------------------------------
# Gamma-limit verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaLimitReport:
    n: int
    reps: int
    a_n: float
    shape: float
    alpha_limit: float
    nu_limit: float
    applicable: bool
    ks: float
    probes: tuple[LaplaceProbe, ...]
    survival: float
    survival_stderr: float
    survival_exact: float
    audit: AssumptionAudit

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "reps": self.reps,
            "a_n": self.a_n,
            "shape": self.shape,
            "alpha_limit": self.alpha_limit,
            "nu_limit": self.nu_limit,
            "applicable": self.applicable,
            "ks": self.ks,
            "assumption_failures": self.audit.failures(),
            "probes": [
                {"lambda": p.lam, "empirical": p.value, "target": p.target, "stderr": p.stderr}
                for p in self.probes
            ],
            "survival": {
                "estimate": self.survival,
                "stderr": self.survival_stderr,
                "exact": self.survival_exact,
            },
        }


def verify_gamma_limit(model: BpveiModel, n_list: Sequence[int], reps: int, seed: int,
                       lambdas: Sequence[float] = (0.5, 1.0, 2.0),
                       threads: int = 1) -> list[GammaLimitReport]:
    """Sample the model at the requested generations, normalize by a_n, and
    compare against Gamma(2 alpha / nu, 1).

    The shape parameter comes from the schedules' limiting laws, not from the
    data. When the normalizer is vacuous (all nu zero) the reports are marked
    not applicable and carry no distances.
    """
    ns = sorted(set(int(n) for n in n_list))
    if not ns or ns[0] < 1:
        raise ValueError("generations must be >= 1")
    horizon = ns[-1]
    audit = assumption_audit(model, horizon)
    norm = normalizer(model, horizon)
    shape = 2.0 * audit.alpha_limit / audit.nu_limit if audit.nu_limit > 0 else math.nan
    applicable = not norm.vacuous and math.isfinite(shape) and shape > 0
    reports = []
    if not applicable:
        for n in ns:
            reports.append(GammaLimitReport(
                n=n, reps=reps, a_n=norm.a_of(n) if not norm.vacuous else 0.0,
                shape=shape, alpha_limit=audit.alpha_limit, nu_limit=audit.nu_limit,
                applicable=False, ks=math.nan, probes=(),
                survival=math.nan, survival_stderr=math.nan,
                survival_exact=process_survival(model, n), audit=audit,
            ))
        return reports
    samples = checkpoint_samples(model, ns, reps, seed, threads=threads)
    for n in ns:
        sample = samples[n]
        a_n = norm.a_of(n)
        scaled = sample.scaled(a_n)
        ks = ks_statistic(scaled, lambda x: gamma_cdf(shape, x))
        probes = tuple(
            empirical_laplace(scaled, lam, target=(1.0 + lam) ** (-shape)) for lam in lambdas
        )
        p_hat, se = sample.survival_estimate()
        reports.append(GammaLimitReport(
            n=n, reps=reps, a_n=a_n, shape=shape,
            alpha_limit=audit.alpha_limit, nu_limit=audit.nu_limit,
            applicable=True, ks=ks, probes=probes,
            survival=p_hat, survival_stderr=se,
            survival_exact=process_survival(model, n), audit=audit,
        ))
    return reports
