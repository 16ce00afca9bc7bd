"""Composed offspring p.g.f.s, the process p.g.f., and shape-function diagnostics.

All compositions run on the complementary gap scale ``g = 1 - s``: laws
expose ``gap(g) = 1 - f(1-g)`` in a cancellation-free closed form, so the
quantities ``1 - f_{k,n}(s)`` stay accurate even when they are far below
float spacing around 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import BpveiModel
from .laws import Law

__all__ = [
    "DELTA_SWITCH",
    "PgfCurve",
    "compose_offspring",
    "compose_gap",
    "process_pgf",
    "process_survival",
    "survival_exact_curve",
    "shape_function",
    "iterated_shape_residual",
    "shape_sum_uniformity",
    "ShapeSumReport",
    "log_mu",
    "compose_curve",
    "process_curve",
]

# Below this distance from s = 1, the shape function returns its extension
# value nu/2; the defining identity subtracts two terms diverging like 1/(1-s).
DELTA_SWITCH = 1e-6

# Long products switch to log accumulation once any factor drops below this.
_LOG_SPACE_FACTOR = 1e-8


def _check_s(s: float) -> float:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"pgf argument {s!r} outside [0, 1]")
    return float(s)


def compose_gap(model: BpveiModel, k: int, n: int, g: float) -> float:
    """Return ``1 - f_{k,n}(1 - g)`` by iterating the laws' gap maps."""
    for i in range(n, k, -1):
        g = model.offspring_law(i).gap(g)
    return g


def compose_offspring(model: BpveiModel, k: int, n: int, s: float) -> float:
    """Evaluate the composition f_{k,n}(s) = f_{k+1}(f_{k+2}(... f_n(s)))."""
    s = _check_s(s)
    if not -1 <= k <= n:
        raise ValueError(f"composition window requires -1 <= k <= n, got k={k}, n={n}")
    if k == n:
        return s
    return 1.0 - compose_gap(model, k, n, 1.0 - s)


def _factor_gaps(model: BpveiModel, n: int, s: float) -> np.ndarray:
    """Gaps ``1 - h_i(f_{i-1,n-1}(s))`` of the n factors of the process p.g.f."""
    out = np.empty(n)
    g = 1.0 - s
    for i in range(n - 1, -1, -1):
        g = model.offspring_law(i).gap(g)
        out[i] = model.immigration_law(i).gap(g)
    return out


def process_pgf(model: BpveiModel, n: int, s: float) -> float:
    """The p.g.f. of the population size at generation ``n``, as the product
    of the per-generation immigration factors."""
    s = _check_s(s)
    if n < 0:
        raise ValueError("generation must be >= 0")
    if n == 0:
        return 1.0  # point mass at 0
    hgaps = _factor_gaps(model, n, s)
    factors = 1.0 - hgaps
    if factors.min() < _LOG_SPACE_FACTOR:
        if (factors <= 0.0).any():
            return 0.0
        return math.exp(float(np.log(factors).sum()))
    return float(np.exp(np.log1p(-hgaps).sum()))


def process_survival(model: BpveiModel, n: int) -> float:
    """Exact ``P[Z_n > 0] = 1 - F_n(0)``, accurate even very close to 0."""
    if n <= 0:
        return 0.0
    hgaps = _factor_gaps(model, n, 0.0)
    if (hgaps >= 1.0).any():
        return 1.0
    return -math.expm1(float(np.log1p(-hgaps).sum()))


def survival_exact_curve(model: BpveiModel, horizon: int) -> np.ndarray:
    """``P[Z_n > 0]`` for n = 0..horizon."""
    return np.array([process_survival(model, n) for n in range(horizon + 1)])


def log_mu(model: BpveiModel, upto: int) -> np.ndarray:
    """log of the cumulative offspring means: entry i is log(mu_i), i = 0..upto."""
    means = [model.offspring_law(i).mean for i in range(upto + 1)]
    return np.cumsum(np.log(means))


def _mu_ratio(logmu: np.ndarray, num: int, den: int) -> float:
    """mu_num / mu_den with the mu_{-1} = 1 convention."""
    a = 0.0 if num < 0 else logmu[num]
    b = 0.0 if den < 0 else logmu[den]
    return math.exp(a - b)


def _shape_at_gap(law: Law, g: float) -> float:
    if g < DELTA_SWITCH:
        return law.nu / 2.0
    return 1.0 / law.gap(g) - 1.0 / (law.mean * g)


def shape_function(model: BpveiModel, k: int, s: float) -> float:
    """The correction term in 1/(1 - f_k(s)) = 1/(m_k (1-s)) + phi_k(s),
    extended by phi_k(1) = nu_k / 2."""
    s = _check_s(s)
    return _shape_at_gap(model.offspring_law(k), 1.0 - s)


def iterated_shape_residual(model: BpveiModel, k: int, n: int, s: float) -> float:
    """Defect of the iterated shape identity at (k, n, s); ~0 when healthy."""
    s = _check_s(s)
    if not (0 <= k < n and s < 1.0):
        raise ValueError("iterated identity requires 0 <= k < n and s < 1")
    gaps = np.empty(n + 1)  # gaps[l] = 1 - f_{l,n}(s), l = k..n
    g = 1.0 - s
    gaps[n] = g
    for l in range(n - 1, k - 1, -1):
        g = model.offspring_law(l + 1).gap(g)
        gaps[l] = g
    logmu = log_mu(model, n)
    lhs = 1.0 / gaps[k]
    rhs = _mu_ratio(logmu, k, n) / (1.0 - s)
    for l in range(k + 1, n + 1):
        phi = _shape_at_gap(model.offspring_law(l), gaps[l])
        rhs += _mu_ratio(logmu, k, l - 1) * phi
    return abs(lhs - rhs)


@dataclass(frozen=True)
class ShapeSumReport:
    start: int
    horizon: int
    sup_abs: float      # sup over the s-grid of the shifted shape sum defect
    reference: float    # sum of phi_k(1)/mu_{k-1}
    vacuous: bool

    @property
    def ratio(self) -> float:
        return math.nan if self.vacuous else self.sup_abs / self.reference


def shape_sum_uniformity(model: BpveiModel, i: int, n: int, grid_size: int = 201) -> ShapeSumReport:
    """Grid estimate of sup_s |sum phi_k(f_{k,n}(s))/mu_{k-1} - sum phi_k(1)/mu_{k-1}|,
    reported relative to the second sum (nan and a vacuous flag when it is 0)."""
    if not 0 <= i <= n:
        raise ValueError("requires 0 <= i <= n")
    if grid_size < 11:
        raise ValueError("grid_size must be >= 11")
    logmu = log_mu(model, n)
    laws = [model.offspring_law(k) for k in range(n + 1)]
    weights = np.array([_mu_ratio(logmu, -1, k - 1) for k in range(i, n + 1)])
    reference = float(sum(w * laws[k].nu / 2.0 for w, k in zip(weights, range(i, n + 1))))
    if reference == 0.0:
        return ShapeSumReport(start=i, horizon=n, sup_abs=0.0, reference=0.0, vacuous=True)
    sup_abs = 0.0
    for s in np.linspace(0.0, 1.0, grid_size):
        g = 1.0 - s
        total = _shape_at_gap(laws[n], g) * weights[n - i]
        for k in range(n - 1, i - 1, -1):
            g = laws[k + 1].gap(g)
            total += _shape_at_gap(laws[k], g) * weights[k - i]
        sup_abs = max(sup_abs, abs(total - reference))
    return ShapeSumReport(start=i, horizon=n, sup_abs=sup_abs, reference=reference, vacuous=False)


@dataclass(frozen=True)
class PgfCurve:
    grid: np.ndarray
    values: np.ndarray
    k: int | None  # None for process curves
    n: int

    def __post_init__(self):
        v = self.values
        if (np.diff(v) < -1e-12).any() or v.min() < -1e-12 or v.max() > 1.0 + 1e-12:
            raise ValueError("pgf curve must be nondecreasing with values in [0, 1]")
        if abs(v[-1] - 1.0) > 1e-10 and self.grid[-1] == 1.0:
            raise ValueError("pgf curve must reach 1 at s = 1")

    def rows(self):
        for s, v in zip(self.grid, self.values):
            yield s, v, self.k, self.n


def compose_curve(model: BpveiModel, k: int, n: int, grid_size: int = 101) -> PgfCurve:
    grid = np.linspace(0.0, 1.0, grid_size)
    values = np.array([compose_offspring(model, k, n, s) for s in grid])
    return PgfCurve(grid=grid, values=values, k=k, n=n)


def process_curve(model: BpveiModel, n: int, grid_size: int = 101) -> PgfCurve:
    grid = np.linspace(0.0, 1.0, grid_size)
    values = np.array([process_pgf(model, n, s) for s in grid])
    return PgfCurve(grid=grid, values=values, k=None, n=n)
