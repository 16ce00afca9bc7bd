import math

import numpy as np
import pytest

from bpvei.exact import propagate
from bpvei.pgf import (
    compose_curve,
    compose_offspring,
    iterated_shape_residual,
    process_curve,
    process_pgf,
    process_survival,
    shape_function,
    shape_sum_uniformity,
)

from conftest import (
    bernoulli_spec,
    geometric_spec,
    homogeneous_model,
    linear_fractional_spec,
    poisson_spec,
    random_stable_model,
)


def test_compose_example_b(example_b):
    assert compose_offspring(example_b, -1, 3, 0.0) == pytest.approx(1.0 - 1.0 / 144.0, abs=1e-12)


def test_compose_example_c(example_c):
    assert compose_offspring(example_c, -1, 3, 0.0) == pytest.approx(1.0 - 1.0 / 24.0, abs=1e-12)


def test_compose_identity_window(example_b):
    for s in (0.0, 0.123456, 1.0):
        assert compose_offspring(example_b, 5, 5, s) == s


def test_compose_index_violation(example_b):
    with pytest.raises(ValueError):
        compose_offspring(example_b, 4, 3, 0.5)
    with pytest.raises(ValueError):
        compose_offspring(example_b, -2, 3, 0.5)


def test_composition_associativity_random_models():
    rng = np.random.default_rng(5)
    for _ in range(20):
        model = random_stable_model(rng)
        k = int(rng.integers(-1, 4))
        j = int(rng.integers(k, 8))
        n = int(rng.integers(j, 12))
        s = float(rng.uniform(0.0, 1.0))
        inner = compose_offspring(model, j, n, s)
        assert compose_offspring(model, k, n, s) == pytest.approx(
            compose_offspring(model, k, j, inner), abs=1e-12)


def test_process_pgf_deterministic_chain(deterministic_chain):
    # population is exactly n, so F_n(s) = s^n
    assert process_pgf(deterministic_chain, 3, 0.5) == pytest.approx(0.125, abs=1e-15)
    assert process_pgf(deterministic_chain, 5, 1.0) == 1.0


def test_process_pgf_example_b_one_step(example_b):
    assert process_pgf(example_b, 1, 0.0) == pytest.approx(0.75, abs=1e-15)


def test_process_pgf_normalization(example_b, critical_geo_pois):
    for model in (example_b, critical_geo_pois):
        for n in (1, 5, 17):
            assert process_pgf(model, n, 1.0) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("preset", ["example_b", "example_c", "critical_geo_pois",
                                    "critical_pois_pois", "deterministic_chain"])
def test_zero_mass_matches_oracle_up_to_20(preset, request):
    from bpvei.environment import preset_model
    model = preset_model(preset)
    for n in range(1, 21):
        pmf = propagate(model, n)
        assert pmf.tail < 1e-10
        f0 = process_pgf(model, n, 0.0)
        assert pmf.probs[0] - 1e-12 <= f0 <= pmf.probs[0] + pmf.tail + 1e-12


def test_process_survival_complements_zero_mass(example_c):
    for n in (1, 7, 40):
        assert process_survival(example_c, n) == pytest.approx(
            1.0 - process_pgf(example_c, n, 0.0), abs=1e-12)


def test_shape_function_geometric_constant():
    # 1/(1 - f(s)) = 1/(1 - s) + 1 for f(s) = 1/(2 - s)
    model = homogeneous_model(geometric_spec(0.5), poisson_spec(1.0))
    for s in (0.0, 0.2, 0.5, 0.9, 0.999, 1.0):
        assert shape_function(model, 3, s) == pytest.approx(1.0, abs=1e-9)


def test_shape_function_two_point_vanishes(example_b):
    for s in (0.0, 0.5, 0.99, 1.0):
        assert abs(shape_function(example_b, 2, s)) < 1e-12


def test_shape_function_poisson_extension():
    model = homogeneous_model(poisson_spec(1.0), poisson_spec(1.0))
    assert shape_function(model, 0, 1.0) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("spec_maker, param", [
    (geometric_spec, 0.4), (poisson_spec, 1.2), (linear_fractional_spec, 0.8),
])
def test_shape_function_nonnegative(spec_maker, param):
    model = homogeneous_model(spec_maker(param), poisson_spec(1.0))
    for s in np.linspace(0.0, 1.0, 101):
        assert shape_function(model, 0, s) >= -1e-12


def test_iterated_residual_geometric():
    model = homogeneous_model(geometric_spec(0.5), poisson_spec(1.0))
    assert iterated_shape_residual(model, 0, 10, 0.5) < 1e-9


def test_iterated_residual_example_b(example_b):
    assert iterated_shape_residual(example_b, 0, 5, 0.0) < 1e-9


def test_iterated_residual_single_step_reduces_to_definition():
    rng = np.random.default_rng(9)
    for _ in range(20):
        model = random_stable_model(rng)
        n = int(rng.integers(1, 10))
        s = float(rng.uniform(0.0, 0.99))
        assert iterated_shape_residual(model, n - 1, n, s) < 1e-12


def test_shape_sum_uniformity_trend_geometric():
    model = homogeneous_model(geometric_spec(0.5), poisson_spec(1.0))
    ratios = [shape_sum_uniformity(model, 0, n, grid_size=101).ratio
              for n in (50, 100, 200, 500)]
    assert ratios[0] > ratios[-1]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))


def test_shape_sum_uniformity_vacuous_for_two_point(example_b):
    report = shape_sum_uniformity(example_b, 0, 30)
    assert report.vacuous
    assert math.isnan(report.ratio)


def test_shape_sum_uniformity_linear_fractional_exact_zero():
    model = homogeneous_model(linear_fractional_spec(1.0), poisson_spec(1.0))
    report = shape_sum_uniformity(model, 0, 40, grid_size=51)
    assert not report.vacuous
    assert report.ratio < 1e-12


def test_curves_validate_shape(example_b, critical_geo_pois):
    curve = compose_curve(example_b, -1, 4, 51)
    assert curve.values[-1] == pytest.approx(1.0, abs=1e-12)
    pcurve = process_curve(critical_geo_pois, 7, 51)
    assert (np.diff(pcurve.values) >= -1e-12).all()
