import numpy as np
import pytest

from bpvei.environment import BpveiModel, GenerationSchedule, Stage, preset_model
from bpvei.laws import LawSpec, ParamSchedule


@pytest.fixture(scope="session")
def example_b():
    return preset_model("example_b")


@pytest.fixture(scope="session")
def example_c():
    return preset_model("example_c")


@pytest.fixture(scope="session")
def critical_geo_pois():
    return preset_model("critical_geo_pois")


@pytest.fixture(scope="session")
def critical_pois_pois():
    return preset_model("critical_pois_pois")


@pytest.fixture(scope="session")
def deterministic_chain():
    return preset_model("deterministic_chain")


def homogeneous_model(offspring: LawSpec, immigration: LawSpec, name="test",
                      degenerate=False) -> BpveiModel:
    return BpveiModel(
        name=name,
        offspring=GenerationSchedule((Stage(0, None, offspring),)),
        immigration=GenerationSchedule((Stage(0, None, immigration),)),
        degenerate=degenerate,
    )


def geometric_spec(p: float) -> LawSpec:
    return LawSpec(family="geometric", p=ParamSchedule.constant(p))


def poisson_spec(rate: float) -> LawSpec:
    return LawSpec(family="poisson", rate=ParamSchedule.constant(rate))


def bernoulli_spec(p: float) -> LawSpec:
    return LawSpec(family="bernoulli_shift", p=ParamSchedule.constant(p))


def linear_fractional_spec(m: float) -> LawSpec:
    return LawSpec(family="linear_fractional", m=ParamSchedule.constant(m))


def finite_spec(*probs: float) -> LawSpec:
    return LawSpec(family="finite_pmf", probs=tuple(probs))


@pytest.fixture(scope="session")
def geo_half_homogeneous():
    """Critical fixture: geometric(1/2) offspring, poisson(1) immigration."""
    return homogeneous_model(geometric_spec(0.5), poisson_spec(1.0), name="geo_half")


def random_stable_model(rng: np.random.Generator) -> BpveiModel:
    """A near-critical random model over the closed-form families, kept in a
    numerically comfortable regime for identity checks."""
    def pick_offspring():
        kind = rng.integers(0, 4)
        if kind == 0:
            return geometric_spec(float(rng.uniform(0.35, 0.65)))
        if kind == 1:
            return poisson_spec(float(rng.uniform(0.6, 1.4)))
        if kind == 2:
            return linear_fractional_spec(float(rng.uniform(0.6, 1.4)))
        return bernoulli_spec(float(rng.uniform(0.4, 0.95)))

    def pick_immigration():
        kind = rng.integers(0, 3)
        if kind == 0:
            return poisson_spec(float(rng.uniform(0.3, 2.0)))
        if kind == 1:
            return bernoulli_spec(float(rng.uniform(0.2, 0.9)))
        return geometric_spec(float(rng.uniform(0.35, 0.7)))

    if rng.random() < 0.5:
        offspring = GenerationSchedule((Stage(0, None, pick_offspring()),))
    else:
        cut = int(rng.integers(1, 6))
        offspring = GenerationSchedule((
            Stage(0, cut, pick_offspring()),
            Stage(cut + 1, None, pick_offspring()),
        ))
    immigration = GenerationSchedule((Stage(0, None, pick_immigration()),))
    return BpveiModel(name="random", offspring=offspring, immigration=immigration)
