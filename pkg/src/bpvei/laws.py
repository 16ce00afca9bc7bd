"""Single-generation offspring/immigration laws on the nonnegative integers.

Each law exposes an exact p.g.f., the complementary "gap" map
``g -> 1 - f(1 - g)`` (stable where ``f(s)`` is close to 1), factorial
moments, a sampler, and truncated pmf vectors with certified tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "ParamSchedule",
    "LawSpec",
    "Law",
    "BernoulliShiftLaw",
    "GeometricLaw",
    "LinearFractionalLaw",
    "PoissonLaw",
    "FinitePmfLaw",
    "instantiate",
    "pgf_eval",
    "sample",
    "regularity_check",
    "regularity_check_laws",
    "limit_law_of",
    "moment_limits",
    "RegularityReport",
]

FAMILIES = ("bernoulli_shift", "linear_fractional", "geometric", "poisson", "finite_pmf")


class ValidationError(ValueError):
    """A schedule, law parameter or model configuration is inadmissible."""


# ---------------------------------------------------------------------------
# Parameter schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSchedule:
    """A generation-indexed scalar parameter.

    kinds:
      constant  -- ``value`` for every generation
      power     -- ``coeff * (n + offset) ** exponent``
      table     -- ``entries[n]`` while available, then the fallback schedule
    """

    kind: str
    value: float = 0.0
    coeff: float = 0.0
    exponent: float = 0.0
    offset: int = 0
    entries: tuple[float, ...] = ()
    fallback: Optional["ParamSchedule"] = None

    def __post_init__(self):
        if self.kind not in ("constant", "power", "table"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "table" and self.fallback is None:
            raise ValidationError("table schedule requires a fallback schedule")
        if self.kind == "power" and self.offset < 0:
            raise ValidationError("power schedule offset must be >= 0")

    @staticmethod
    def constant(value: float) -> "ParamSchedule":
        return ParamSchedule("constant", value=float(value))

    @staticmethod
    def power(coeff: float, exponent: float, offset: int = 0) -> "ParamSchedule":
        return ParamSchedule("power", coeff=float(coeff), exponent=float(exponent), offset=int(offset))

    @staticmethod
    def table(entries: Sequence[float], fallback: "ParamSchedule") -> "ParamSchedule":
        return ParamSchedule("table", entries=tuple(float(e) for e in entries), fallback=fallback)

    def at(self, n: int) -> float:
        if n < 0:
            raise ValidationError(f"schedule evaluated at negative generation {n}")
        if self.kind == "constant":
            return self.value
        if self.kind == "power":
            base = n + self.offset
            if base == 0 and self.exponent < 0:
                raise ValidationError(
                    f"power schedule with offset 0 evaluated at n={n} with negative exponent"
                )
            return self.coeff * float(base) ** self.exponent
        if n < len(self.entries):
            return self.entries[n]
        return self.fallback.at(n)

    def limit(self) -> float:
        """Value of the schedule as the generation grows without bound."""
        if self.kind == "constant":
            return self.value
        if self.kind == "power":
            if self.exponent < 0:
                return 0.0
            if self.exponent == 0:
                return self.coeff
            return math.inf if self.coeff > 0 else (-math.inf if self.coeff < 0 else 0.0)
        return self.fallback.limit()

    def to_json(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "power":
            return {"kind": "power", "coeff": self.coeff, "exponent": self.exponent, "offset": self.offset}
        return {"kind": "table", "entries": list(self.entries), "fallback": self.fallback.to_json()}

    @staticmethod
    def from_json(obj) -> "ParamSchedule":
        if isinstance(obj, (int, float)):
            return ParamSchedule.constant(obj)
        kind = obj.get("kind")
        if kind == "constant":
            return ParamSchedule.constant(obj["value"])
        if kind == "power":
            return ParamSchedule.power(obj["coeff"], obj["exponent"], obj.get("offset", 0))
        if kind == "table":
            return ParamSchedule.table(obj["entries"], ParamSchedule.from_json(obj["fallback"]))
        raise ValidationError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class LawSpec:
    """A law family together with schedules for its scalar parameters."""

    family: str
    p: Optional[ParamSchedule] = None      # bernoulli_shift, geometric
    m: Optional[ParamSchedule] = None      # linear_fractional
    rate: Optional[ParamSchedule] = None   # poisson
    probs: tuple[float, ...] = ()          # finite_pmf

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown law family {self.family!r}")
        needed = {"bernoulli_shift": "p", "geometric": "p", "linear_fractional": "m", "poisson": "rate"}
        if self.family in needed and getattr(self, needed[self.family]) is None:
            raise ValidationError(f"{self.family} law requires parameter {needed[self.family]!r}")
        if self.family == "finite_pmf":
            probs = self.probs
            if not probs:
                raise ValidationError("finite_pmf law requires a nonempty probs vector")
            if any(q < 0 for q in probs):
                raise ValidationError("finite_pmf probabilities must be nonnegative")
            if abs(sum(probs) - 1.0) > 1e-12:
                raise ValidationError(f"finite_pmf probabilities sum to {sum(probs)!r}, not 1")
            if probs[0] >= 1.0:
                raise ValidationError("finite_pmf must place positive mass above 0")

    def to_json(self) -> dict:
        out = {"family": self.family}
        for name in ("p", "m", "rate"):
            sched = getattr(self, name)
            if sched is not None:
                out[name] = sched.to_json()
        if self.family == "finite_pmf":
            out["probs"] = list(self.probs)
        return out

    @staticmethod
    def from_json(obj: dict) -> "LawSpec":
        family = obj.get("family")
        kwargs = {}
        for name in ("p", "m", "rate"):
            if name in obj:
                kwargs[name] = ParamSchedule.from_json(obj[name])
        if "probs" in obj:
            kwargs["probs"] = tuple(float(q) for q in obj["probs"])
        return LawSpec(family=family, **kwargs)


# ---------------------------------------------------------------------------
# Instantiated laws
# ---------------------------------------------------------------------------

class Law:
    """Base class: an immutable law on {0, 1, 2, ...} at a fixed generation."""

    family: str
    generation: int
    mean: float
    variance: float
    second_factorial: float  # f''(1)
    mass_at_zero: float

    @property
    def nu(self) -> float:
        """Normalized second factorial moment f''(1)/f'(1)^2."""
        return self.second_factorial / (self.mean * self.mean)

    def pgf(self, s: float) -> float:
        raise NotImplementedError

    def gap(self, g: float) -> float:
        """Return ``1 - f(1 - g)`` for ``g`` in [0, 1], without cancellation."""
        raise NotImplementedError

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> int:
        return int(self.sample_many(rng, 1)[0])

    def sum_sample(self, rng: np.random.Generator, count: int) -> int:
        """Sum of ``count`` independent draws, via a closed form when one exists."""
        if count <= 0:
            return 0
        return int(self.sample_many(rng, count).sum())

    has_closed_form_sum = False

    def pmf_vector(self, kmax: int) -> tuple[np.ndarray, float]:
        """Probabilities on 0..kmax and the exact remaining tail mass."""
        raise NotImplementedError

    def second_moment_support_cut(self, tol: float) -> int:
        """Smallest K with a certified bound sum_{k>K} k^2 pmf[k] < tol."""
        raise NotImplementedError

    def _check_s(self, s: float) -> float:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"pgf argument {s!r} outside [0, 1]")
        return float(s)


@dataclass(frozen=True)
class BernoulliShiftLaw(Law):
    """Two-point law on {0, 1} with P[X=1] = p; p.g.f. 1 - p + p s."""

    p: float
    generation: int = 0
    family = "bernoulli_shift"

    @property
    def mean(self):
        return self.p

    @property
    def variance(self):
        return self.p * (1.0 - self.p)

    @property
    def second_factorial(self):
        return 0.0

    @property
    def mass_at_zero(self):
        return 1.0 - self.p

    def pgf(self, s):
        s = self._check_s(s)
        return 1.0 - self.p + self.p * s

    def gap(self, g):
        return self.p * g

    def sample_many(self, rng, size):
        return (rng.random(size) < self.p).astype(np.int64)

    has_closed_form_sum = True

    def sum_sample(self, rng, count):
        if count <= 0:
            return 0
        return int(rng.binomial(count, self.p))

    def pmf_vector(self, kmax):
        probs = np.zeros(kmax + 1)
        probs[0] = 1.0 - self.p
        if kmax >= 1:
            probs[1] = self.p
            return probs, 0.0
        return probs, self.p

    def second_moment_support_cut(self, tol):
        return 1


@dataclass(frozen=True)
class GeometricLaw(Law):
    """P[X=k] = p (1-p)^k on {0, 1, ...}; p.g.f. p / (1 - (1-p) s).

    Also backs the linear-fractional family parametrized by its mean m,
    via p = 1/(1+m); the shape function of this family is constant and
    nu == 2 for every p.
    """

    p: float
    generation: int = 0
    family = "geometric"

    @property
    def q(self):
        return 1.0 - self.p

    @property
    def mean(self):
        return self.q / self.p

    @property
    def variance(self):
        return self.q / (self.p * self.p)

    @property
    def second_factorial(self):
        return 2.0 * self.q * self.q / (self.p * self.p)

    @property
    def mass_at_zero(self):
        return self.p

    def pgf(self, s):
        s = self._check_s(s)
        return self.p / (1.0 - self.q * s)

    def gap(self, g):
        # 1 - f(1-g) = q g / (p + q g)
        return self.q * g / (self.p + self.q * g)

    def sample_many(self, rng, size):
        return rng.geometric(self.p, size) - 1

    has_closed_form_sum = True

    def sum_sample(self, rng, count):
        if count <= 0:
            return 0
        return int(rng.negative_binomial(count, self.p))

    def pmf_vector(self, kmax):
        k = np.arange(kmax + 1)
        probs = self.p * np.power(self.q, k)
        return probs, float(self.q ** (kmax + 1))

    def second_moment_support_cut(self, tol):
        k = max(8, int(self.mean * 4) + 8)
        while True:
            ratio = self.q * ((k + 1) / k) ** 2
            if ratio < 1.0:
                bound = (k + 1) ** 2 * self.p * self.q ** (k + 1) / (1.0 - ratio)
                if bound < tol:
                    return k
            k *= 2
            if k > 1 << 30:
                raise ValidationError("geometric tail bound did not certify")


class LinearFractionalLaw(GeometricLaw):
    """Mean-parametrized linear-fractional law: the geometric with p = 1/(1+m).

    Its shape function is constant in s (identically nu/2 = 1), which makes
    it an exact analytic fixture for the p.g.f. diagnostics.
    """

    family = "linear_fractional"


@dataclass(frozen=True)
class PoissonLaw(Law):
    """Poisson(rate); p.g.f. exp(-rate (1 - s))."""

    rate: float
    generation: int = 0
    family = "poisson"

    @property
    def mean(self):
        return self.rate

    @property
    def variance(self):
        return self.rate

    @property
    def second_factorial(self):
        return self.rate * self.rate

    @property
    def mass_at_zero(self):
        return math.exp(-self.rate)

    def pgf(self, s):
        s = self._check_s(s)
        return math.exp(-self.rate * (1.0 - s))

    def gap(self, g):
        return -math.expm1(-self.rate * g)

    def sample_many(self, rng, size):
        return rng.poisson(self.rate, size)

    has_closed_form_sum = True

    def sum_sample(self, rng, count):
        if count <= 0:
            return 0
        return int(rng.poisson(self.rate * count))

    def pmf_vector(self, kmax):
        probs = np.empty(kmax + 1)
        probs[0] = math.exp(-self.rate)
        for k in range(1, kmax + 1):
            probs[k] = probs[k - 1] * self.rate / k
        return probs, max(0.0, 1.0 - float(probs.sum()))

    def second_moment_support_cut(self, tol):
        k = max(8, int(self.rate * 3) + 8)
        logp = -self.rate + k * math.log(self.rate) - math.lgamma(k + 1)
        while True:
            ratio = self.rate / (k + 1) * ((k + 1) / k) ** 2
            if ratio < 1.0:
                bound = (k + 1) ** 2 * math.exp(logp) * self.rate / (k + 1) / (1.0 - ratio)
                if bound < tol:
                    return k
            k += 1
            logp += math.log(self.rate) - math.log(k)
            if k > 1 << 30:
                raise ValidationError("poisson tail bound did not certify")


@dataclass(frozen=True)
class FinitePmfLaw(Law):
    """Law with finite support given by an explicit probability vector."""

    probs: tuple[float, ...]
    generation: int = 0
    family = "finite_pmf"

    @property
    def mean(self):
        return float(sum(k * q for k, q in enumerate(self.probs)))

    @property
    def variance(self):
        m = self.mean
        return float(sum(k * k * q for k, q in enumerate(self.probs)) - m * m)

    @property
    def second_factorial(self):
        return float(sum(k * (k - 1) * q for k, q in enumerate(self.probs)))

    @property
    def mass_at_zero(self):
        return self.probs[0]

    def pgf(self, s):
        s = self._check_s(s)
        acc = 0.0
        for q in reversed(self.probs):
            acc = acc * s + q
        return acc

    def gap(self, g):
        if g == 0.0:
            return 0.0
        ls = math.log1p(-g) if g < 1.0 else None
        acc = 0.0
        for k, q in enumerate(self.probs):
            if k == 0 or q == 0.0:
                continue
            one_minus_sk = 1.0 if ls is None else -math.expm1(k * ls)
            acc += q * one_minus_sk
        return acc

    def _cum(self):
        return np.cumsum(np.asarray(self.probs))

    def sample_many(self, rng, size):
        cum = self._cum()
        idx = np.searchsorted(cum, rng.random(size), side="right")
        return np.minimum(idx, len(self.probs) - 1).astype(np.int64)

    def pmf_vector(self, kmax):
        probs = np.zeros(kmax + 1)
        upto = min(kmax + 1, len(self.probs))
        probs[:upto] = self.probs[:upto]
        return probs, float(sum(self.probs[upto:]))

    def second_moment_support_cut(self, tol):
        return len(self.probs) - 1


# ---------------------------------------------------------------------------
# Instantiation
# ---------------------------------------------------------------------------

def _require(cond: bool, n: int, name: str, value, constraint: str):
    if not cond:
        raise ValidationError(
            f"generation {n}: parameter {name!r} = {value!r} violates {constraint}"
        )


@lru_cache(maxsize=1 << 16)
def instantiate(spec: LawSpec, n: int) -> Law:
    """Instantiate the law of generation ``n``, validating its parameters."""
    if n < 0:
        raise ValidationError(f"generation index must be >= 0, got {n}")
    if spec.family == "bernoulli_shift":
        p = spec.p.at(n)
        _require(0.0 < p <= 1.0 and math.isfinite(p), n, "p", p, "p in (0, 1]")
        return BernoulliShiftLaw(p=p, generation=n)
    if spec.family == "geometric":
        p = spec.p.at(n)
        _require(0.0 < p < 1.0, n, "p", p, "p in (0, 1)")
        return GeometricLaw(p=p, generation=n)
    if spec.family == "linear_fractional":
        m = spec.m.at(n)
        _require(0.0 < m < math.inf, n, "m", m, "m in (0, inf)")
        return LinearFractionalLaw(p=1.0 / (1.0 + m), generation=n)
    if spec.family == "poisson":
        rate = spec.rate.at(n)
        _require(0.0 < rate < math.inf, n, "rate", rate, "rate in (0, inf)")
        return PoissonLaw(rate=rate, generation=n)
    return FinitePmfLaw(probs=spec.probs, generation=n)


def pgf_eval(law: Law, s: float) -> float:
    """Evaluate the law's p.g.f. at ``s`` in [0, 1]."""
    return law.pgf(s)


def sample(law: Law, rng: np.random.Generator) -> int:
    """One draw from the law using the provided stream."""
    return law.sample(rng)


# ---------------------------------------------------------------------------
# Regularity condition
# ---------------------------------------------------------------------------

# Dyadic grid of candidate truncation constants c.
_C_GRID = tuple(float(1 << j) for j in range(0, 41))

_TAIL_TOL = 1e-12


@dataclass(frozen=True)
class RegularityEntry:
    epsilon: float
    c: Optional[float]        # smallest grid c that works, or None
    satisfied: bool
    violation: Optional[int]  # generation witnessing failure at the largest c


@dataclass(frozen=True)
class RegularityReport:
    horizon: int
    degenerate: bool          # every generation has E[X^2; X >= 2] == 0
    limit_law_included: bool
    entries: tuple[RegularityEntry, ...]


def _truncation_profile(law: Law):
    """Per-law data for the truncated-expectation comparisons."""
    cut = law.second_moment_support_cut(_TAIL_TOL)
    probs, _ = law.pmf_vector(cut)
    k = np.arange(cut + 1)
    k2p = k.astype(float) ** 2 * probs
    rhs = float(k2p[2:].sum())
    return k2p, rhs, law.mean


def limit_law_of(spec: LawSpec) -> Optional[Law]:
    """The law at the schedule limits, when those limits are admissible."""
    return _limit_law(spec)


def moment_limits(spec: LawSpec) -> tuple[float, float, float, float]:
    """Limits of (mean, variance, nu, mass at zero) along the schedule.

    Computed structurally from the schedule limits even when those limits
    fall outside the admissible parameter range (e.g. a poisson rate growing
    without bound yields variance inf and mass-at-zero 0).
    """
    inf = math.inf
    if spec.family == "bernoulli_shift":
        p = spec.p.limit()
        return p, p * (1.0 - p), 0.0, 1.0 - p
    if spec.family in ("geometric", "linear_fractional"):
        if spec.family == "geometric":
            p = spec.p.limit()
        else:
            m = spec.m.limit()
            p = 1.0 / (1.0 + m) if m < inf else 0.0
        if p <= 0.0:
            return inf, inf, 2.0, 0.0
        if p >= 1.0:
            return 0.0, 0.0, 2.0, 1.0
        q = 1.0 - p
        return q / p, q / (p * p), 2.0, p
    if spec.family == "poisson":
        rate = spec.rate.limit()
        if rate == inf:
            return inf, inf, 1.0, 0.0
        return rate, rate, 1.0, math.exp(-rate) if rate > 0 else 1.0
    law = FinitePmfLaw(probs=spec.probs)
    return law.mean, law.variance, law.nu, law.mass_at_zero


def _limit_law(spec: LawSpec) -> Optional[Law]:
    try:
        if spec.family in ("bernoulli_shift", "geometric"):
            p = spec.p.limit()
            if spec.family == "bernoulli_shift" and 0.0 < p <= 1.0:
                return BernoulliShiftLaw(p=p)
            if spec.family == "geometric" and 0.0 < p < 1.0:
                return GeometricLaw(p=p)
        elif spec.family == "linear_fractional":
            m = spec.m.limit()
            if 0.0 < m < math.inf:
                return LinearFractionalLaw(p=1.0 / (1.0 + m))
        elif spec.family == "poisson":
            rate = spec.rate.limit()
            if 0.0 < rate < math.inf:
                return PoissonLaw(rate=rate)
        elif spec.family == "finite_pmf":
            return FinitePmfLaw(probs=spec.probs)
    except ValidationError:
        return None
    return None


def regularity_check(offspring: LawSpec, epsilons: Sequence[float], horizon: int) -> RegularityReport:
    """Search the dyadic c-grid for the truncated second-moment domination.

    For each epsilon the report carries the smallest grid constant c with
    ``E[X_n^2; X_n > c (1 + E[X_n])] <= eps * E[X_n^2; X_n >= 2]`` for every
    generation up to ``horizon`` (expectations truncated with a certified
    ``k^2``-weighted tail below 1e-12, added to the left side). Schedules
    with finite limits are extrapolated by also checking the limiting law.
    Inconclusive evidence is reported, never raised.
    """
    if horizon < 1:
        raise ValidationError("regularity horizon must be >= 1")
    laws_by_generation = [instantiate(offspring, n) for n in range(horizon + 1)]
    return regularity_check_laws(laws_by_generation, _limit_law(offspring), epsilons, horizon)


def regularity_check_laws(laws_by_generation: Sequence[Law], limit_law: Optional[Law],
                          epsilons: Sequence[float], horizon: int) -> RegularityReport:
    """As ``regularity_check``, over pre-instantiated per-generation laws."""
    profiles = [_truncation_profile(law) for law in laws_by_generation]
    lim = limit_law
    if lim is not None:
        profiles.append(_truncation_profile(lim))
    degenerate = all(rhs == 0.0 for _, rhs, _ in profiles)

    def lhs(k2p, mean, c):
        thresh = c * (1.0 + mean)
        start = int(math.floor(thresh)) + 1
        if start >= len(k2p):
            return _TAIL_TOL
        return float(k2p[start:].sum()) + _TAIL_TOL

    entries = []
    for eps in epsilons:
        found = None
        witness = None
        for c in _C_GRID:
            ok = True
            for k2p, rhs, mean in profiles:
                if rhs == 0.0:
                    # both sides vanish for sub-{0,1} support; 0 <= eps*0 holds
                    if lhs(k2p, mean, c) > _TAIL_TOL:
                        ok = False
                        break
                    continue
                if lhs(k2p, mean, c) > eps * rhs:
                    ok = False
                    break
            if ok:
                found = c
                break
        if found is None:
            c = _C_GRID[-1]
            for n, (k2p, rhs, mean) in enumerate(profiles[: horizon + 1]):
                if rhs > 0.0 and lhs(k2p, mean, c) > eps * rhs:
                    witness = n
                    break
        entries.append(RegularityEntry(epsilon=float(eps), c=found, satisfied=found is not None,
                                       violation=witness))
    return RegularityReport(horizon=horizon, degenerate=degenerate,
                            limit_law_included=lim is not None, entries=tuple(entries))
