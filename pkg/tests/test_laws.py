import math

import numpy as np
import pytest

from bpvei.laws import (
    LawSpec,
    ParamSchedule,
    ValidationError,
    instantiate,
    moment_limits,
    pgf_eval,
    regularity_check,
    sample,
)

ALL_LAWS = [
    LawSpec("bernoulli_shift", p=ParamSchedule.constant(0.5)),
    LawSpec("bernoulli_shift", p=ParamSchedule.constant(1.0)),
    LawSpec("geometric", p=ParamSchedule.constant(0.5)),
    LawSpec("geometric", p=ParamSchedule.constant(0.2)),
    LawSpec("linear_fractional", m=ParamSchedule.constant(1.0)),
    LawSpec("linear_fractional", m=ParamSchedule.constant(2.5)),
    LawSpec("poisson", rate=ParamSchedule.constant(1.0)),
    LawSpec("poisson", rate=ParamSchedule.constant(3.7)),
    LawSpec("finite_pmf", probs=(0.5, 0.5)),
    LawSpec("finite_pmf", probs=(0.2, 0.3, 0.1, 0.4)),
]


def test_power_schedule_matches_closed_form_at_n3():
    # two-point law with p = n^-2 at n = 3: pgf 1 - 1/9 + s/9
    spec = LawSpec("bernoulli_shift", p=ParamSchedule.power(1.0, -2.0))
    law = instantiate(spec, 3)
    assert law.mean == pytest.approx(1.0 / 9.0, abs=1e-15)
    assert pgf_eval(law, 0.0) == pytest.approx(1.0 - 1.0 / 9.0, abs=1e-15)
    assert pgf_eval(law, 0.5) == pytest.approx(1.0 - 1.0 / 9.0 + 0.5 / 9.0, abs=1e-15)


def test_geometric_half_moments():
    # f(s) = 1/(2-s): f'(1) = 1, f''(1) = 2
    law = instantiate(LawSpec("geometric", p=ParamSchedule.constant(0.5)), 0)
    assert law.mean == pytest.approx(1.0)
    assert law.second_factorial == pytest.approx(2.0)
    assert law.nu == pytest.approx(2.0)
    assert pgf_eval(law, 0.0) == pytest.approx(0.5)


def test_two_point_half_half():
    law = instantiate(LawSpec("finite_pmf", probs=(0.5, 0.5)), 0)
    assert law.mean == 0.5
    assert law.second_factorial == 0.0
    assert law.nu == 0.0


def test_bernoulli_shift_pgf_at_zero():
    law = instantiate(LawSpec("bernoulli_shift", p=ParamSchedule.constant(0.5)), 0)
    assert pgf_eval(law, 0.0) == pytest.approx(0.5, abs=1e-15)


def test_pgf_domain_error():
    law = instantiate(ALL_LAWS[0], 0)
    with pytest.raises(ValueError):
        pgf_eval(law, 1.5)
    with pytest.raises(ValueError):
        pgf_eval(law, -0.1)


@pytest.mark.parametrize("spec", ALL_LAWS, ids=lambda s: s.family)
def test_pgf_normalization_and_monotonicity(spec):
    law = instantiate(spec, 0)
    assert abs(pgf_eval(law, 1.0) - 1.0) < 1e-12
    grid = np.linspace(0.0, 1.0, 1001)
    values = np.array([pgf_eval(law, s) for s in grid])
    assert (np.diff(values) >= -1e-14).all()
    assert values.min() >= 0.0 and values.max() <= 1.0 + 1e-12


@pytest.mark.parametrize("spec", ALL_LAWS, ids=lambda s: s.family)
def test_derivative_consistency_richardson(spec):
    # one-sided differences at 1 with Richardson extrapolation over h, h/10
    law = instantiate(spec, 0)

    def d1(h):
        return (law.pgf(1.0) - law.pgf(1.0 - h)) / h

    def d2(h):
        return (law.pgf(1.0) - 2 * law.pgf(1.0 - h) + law.pgf(1.0 - 2 * h)) / h**2

    for h in (1e-4, 1e-5):
        first = (10 * d1(h / 10) - d1(h)) / 9
        assert first == pytest.approx(law.mean, rel=1e-6, abs=1e-9)
        second = (10 * d2(h / 10) - d2(h)) / 9
        assert second == pytest.approx(law.second_factorial, rel=1e-4, abs=1e-4)


@pytest.mark.parametrize("spec", ALL_LAWS, ids=lambda s: s.family)
def test_gap_is_complement_of_pgf(spec):
    law = instantiate(spec, 0)
    for s in (0.0, 0.25, 0.5, 0.9, 0.99):
        assert law.gap(1.0 - s) == pytest.approx(1.0 - law.pgf(s), rel=1e-13, abs=1e-15)


def test_poisson_pgf_matches_truncated_series():
    law = instantiate(LawSpec("poisson", rate=ParamSchedule.constant(2.5)), 0)
    for s in (0.0, 0.3, 0.7, 1.0):
        # independent oracle: series sum with certified remainder
        term = math.exp(-2.5)
        total = term
        k = 0
        while term > 1e-22:
            k += 1
            term *= 2.5 / k
            total += term * s**k if s > 0 else 0.0
        if s == 0.0:
            total = math.exp(-2.5)
        assert abs(pgf_eval(law, s) - total) < 1e-14


def test_point_mass_sampler_is_constant():
    law = instantiate(LawSpec("finite_pmf", probs=(0.0, 1.0)), 0)
    rng = np.random.default_rng(0)
    assert all(sample(law, rng) == 1 for _ in range(100))


def test_bernoulli_support_and_rate():
    law = instantiate(LawSpec("bernoulli_shift", p=ParamSchedule.constant(0.3)), 0)
    rng = np.random.default_rng(1)
    draws = law.sample_many(rng, 200_000)
    assert set(np.unique(draws)) <= {0, 1}
    assert draws.mean() == pytest.approx(0.3, abs=4 * math.sqrt(0.3 * 0.7 / 200_000))


def test_geometric_mean_over_million_draws():
    # CLT bound: variance 2 so four standard errors at 1e6 draws is ~0.006
    law = instantiate(LawSpec("geometric", p=ParamSchedule.constant(0.5)), 0)
    rng = np.random.default_rng(7)
    draws = law.sample_many(rng, 1_000_000)
    assert abs(draws.mean() - 1.0) < 0.006


@pytest.mark.parametrize("spec", ALL_LAWS, ids=lambda s: s.family)
def test_sampler_pgf_consistency(spec):
    law = instantiate(spec, 0)
    rng = np.random.default_rng(42)
    draws = law.sample_many(rng, 100_000)
    for s in (0.25, 0.5, 0.75):
        emp = s ** draws.astype(float)
        se = emp.std(ddof=1) / math.sqrt(len(emp))
        assert abs(emp.mean() - pgf_eval(law, s)) <= 4 * se + 1e-12


@pytest.mark.parametrize("spec", ALL_LAWS, ids=lambda s: s.family)
def test_pmf_vector_consistent_with_moments(spec):
    law = instantiate(spec, 0)
    probs, tail = law.pmf_vector(400)
    assert probs.min() >= 0.0
    assert probs.sum() + tail == pytest.approx(1.0, abs=1e-12)
    k = np.arange(len(probs))
    if tail < 1e-14:
        assert (k * probs).sum() == pytest.approx(law.mean, abs=1e-10)
        assert (k * (k - 1) * probs).sum() == pytest.approx(law.second_factorial, abs=1e-8)


def test_closed_form_sum_matches_individual_sums():
    # same distribution, checked by first two moments over many draws
    rng1 = np.random.default_rng(3)
    rng2 = np.random.default_rng(4)
    for spec in (ALL_LAWS[2], ALL_LAWS[6]):
        law = instantiate(spec, 0)
        count = 7
        a = np.array([law.sum_sample(rng1, count) for _ in range(60_000)])
        b = np.array([law.sample_many(rng2, count).sum() for _ in range(60_000)])
        se = math.sqrt(a.var() / len(a) + b.var() / len(b))
        assert abs(a.mean() - b.mean()) < 4 * se


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

def test_power_schedule_rejects_zero_base_negative_exponent():
    sched = ParamSchedule.power(1.0, -2.0)
    with pytest.raises(ValidationError):
        sched.at(0)
    assert sched.at(2) == 0.25


def test_table_schedule_falls_back():
    sched = ParamSchedule.table([0.5, 0.25], ParamSchedule.power(1.0, -1.0))
    assert sched.at(0) == 0.5
    assert sched.at(1) == 0.25
    assert sched.at(4) == 0.25
    assert sched.limit() == 0.0


def test_schedule_json_round_trip():
    sched = ParamSchedule.table([0.5], ParamSchedule.power(2.0, -1.5, offset=3))
    assert ParamSchedule.from_json(sched.to_json()) == sched


def test_instantiate_rejects_out_of_range_with_context():
    spec = LawSpec("geometric", p=ParamSchedule.constant(1.5))
    with pytest.raises(ValidationError, match="generation 4.*'p'"):
        instantiate(spec, 4)


def test_finite_pmf_validation():
    with pytest.raises(ValidationError):
        LawSpec("finite_pmf", probs=(0.5, 0.6))
    with pytest.raises(ValidationError):
        LawSpec("finite_pmf", probs=(1.0,))
    with pytest.raises(ValidationError):
        LawSpec("finite_pmf", probs=(0.5, -0.1, 0.6))


def test_moment_limits_structural():
    assert moment_limits(LawSpec("poisson", rate=ParamSchedule.power(0.5, 1.0)))[3] == 0.0
    mean, var, nu, mass0 = moment_limits(LawSpec("geometric", p=ParamSchedule.constant(0.5)))
    assert (mean, var, nu, mass0) == (1.0, 2.0, 2.0, 0.5)


# ---------------------------------------------------------------------------
# Regularity condition
# ---------------------------------------------------------------------------

def test_regularity_bounded_support_is_immediate():
    spec = LawSpec("finite_pmf", probs=(0.2, 0.3, 0.5))
    report = regularity_check(spec, epsilons=[0.1], horizon=20)
    entry = report.entries[0]
    assert entry.satisfied
    # support bound 2: once c(1 + mean) exceeds it the left side vanishes
    assert entry.c <= 2.0
    assert not report.degenerate


def test_regularity_geometric_matches_direct_tail_summation():
    spec = LawSpec("geometric", p=ParamSchedule.constant(0.5))
    report = regularity_check(spec, epsilons=[0.1], horizon=100)
    entry = report.entries[0]
    assert entry.satisfied

    # independent oracle: direct summation of k^2 (1/2)^{k+1}
    def tail_sum(threshold):
        return sum(k * k * 0.5 ** (k + 1) for k in range(int(threshold) + 1, 400))

    rhs = sum(k * k * 0.5 ** (k + 1) for k in range(2, 400))
    mean = 1.0
    expected_c = next(c for c in (2.0**j for j in range(41))
                      if tail_sum(c * (1 + mean)) <= 0.1 * rhs)
    assert entry.c == expected_c


def test_regularity_two_point_degenerate():
    spec = LawSpec("bernoulli_shift", p=ParamSchedule.constant(0.7))
    report = regularity_check(spec, epsilons=[0.1, 0.01], horizon=10)
    assert report.degenerate
    assert all(e.satisfied and e.c == 1.0 for e in report.entries)


def test_regularity_includes_limiting_law():
    spec = LawSpec("geometric", p=ParamSchedule.table([0.6], ParamSchedule.constant(0.5)))
    report = regularity_check(spec, epsilons=[0.1], horizon=10)
    assert report.limit_law_included
