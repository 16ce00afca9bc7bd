import math

import numpy as np
import pytest

from bpvei.environment import (
    BpveiModel,
    GenerationSchedule,
    Stage,
    build_model,
    law_at,
    preset_model,
    preset_names,
)
from bpvei.laws import LawSpec, ParamSchedule, ValidationError
from bpvei.pgf import compose_offspring

from conftest import bernoulli_spec, finite_spec


def test_preset_names_cover_the_compiled_models():
    assert set(preset_names()) >= {
        "example_a", "example_b", "example_c",
        "critical_geo_pois", "deterministic_chain",
    }


def test_example_b_stage_structure(example_b):
    assert law_at(example_b, "offspring", 0).mean == 0.5
    assert law_at(example_b, "offspring", 1).mean == 0.5
    assert law_at(example_b, "offspring", 4).mean == pytest.approx(1.0 / 16.0)
    # immigration is homogeneous two-point(1/2)
    for n in (0, 1, 5, 100):
        assert law_at(example_b, "immigration", n).mean == 0.5


def test_example_c_offspring(example_c):
    assert law_at(example_c, "offspring", 4).mean == pytest.approx(0.25)
    assert law_at(example_c, "offspring", 0).mean == 0.5


def test_example_a_immigration_schedule_and_required_offspring():
    with pytest.raises(ValidationError, match="offspring"):
        preset_model("example_a")
    model = preset_model("example_a", finite_spec(0.0, 1.0))
    assert law_at(model, "immigration", 0).mean == 0.5
    assert law_at(model, "immigration", 4).mean == pytest.approx(1.0 / 16.0)
    assert law_at(model, "offspring", 17).mean == 1.0


def test_overlapping_stages_rejected():
    config = {
        "name": "bad",
        "offspring": [
            {"from": 0, "to": 5, "law": {"family": "bernoulli_shift", "p": 0.5}},
            {"from": 3, "to": None, "law": {"family": "bernoulli_shift", "p": 0.5}},
        ],
        "immigration": [{"from": 0, "to": None, "law": {"family": "bernoulli_shift", "p": 0.5}}],
    }
    with pytest.raises(ValidationError, match="stage 1"):
        build_model(config)


def test_gap_between_stages_rejected():
    with pytest.raises(ValidationError):
        GenerationSchedule((
            Stage(0, 3, bernoulli_spec(0.5)),
            Stage(5, None, bernoulli_spec(0.5)),
        ))


def test_final_stage_must_be_open():
    with pytest.raises(ValidationError, match="open-ended"):
        GenerationSchedule((Stage(0, 7, bernoulli_spec(0.5)),))


def test_zero_variance_needs_degenerate_flag():
    config = {
        "name": "det",
        "offspring": [{"from": 0, "to": None, "law": {"family": "finite_pmf", "probs": [0.0, 1.0]}}],
        "immigration": [{"from": 0, "to": None, "law": {"family": "finite_pmf", "probs": [0.5, 0.5]}}],
    }
    with pytest.raises(ValidationError, match="degenerate"):
        build_model(config)
    config["degenerate"] = True
    assert build_model(config).degenerate


def test_inadmissible_power_stage_rejected_at_build():
    config = {
        "name": "bad-power",
        "offspring": [{"from": 0, "to": None,
                       "law": {"family": "bernoulli_shift",
                               "p": {"kind": "power", "coeff": 1.0, "exponent": -2.0, "offset": 0}}}],
        "immigration": [{"from": 0, "to": None, "law": {"family": "bernoulli_shift", "p": 0.5}}],
    }
    with pytest.raises(ValidationError):
        build_model(config)


def test_model_json_round_trip(example_b):
    rebuilt = build_model(example_b.to_json())
    for n in (0, 1, 2, 9):
        assert law_at(rebuilt, "offspring", n).mean == law_at(example_b, "offspring", n).mean
        assert law_at(rebuilt, "immigration", n).mean == law_at(example_b, "immigration", n).mean


def test_law_json_fragment_field_names():
    fragment = {"family": "bernoulli_shift",
                "p": {"kind": "power", "coeff": 1.0, "exponent": -2.0, "offset": 0}}
    spec = LawSpec.from_json(fragment)
    assert spec.to_json() == fragment


def test_example_b_composite_pgf_closed_form(example_b):
    # iterating the offspring p.g.f.s gives 1 - (1/4)(n!)^-2 (1 - s)
    for n in range(1, 9):
        scale = 0.25 / math.factorial(n) ** 2
        for s in (0.0, 0.3, 1.0):
            expected = 1.0 - scale + scale * s
            assert compose_offspring(example_b, -1, n, s) == pytest.approx(expected, abs=1e-12)


def test_example_c_composite_pgf_closed_form(example_c):
    for n in range(1, 9):
        scale = 0.25 / math.factorial(n)
        assert compose_offspring(example_c, -1, n, 0.0) == pytest.approx(1.0 - scale, abs=1e-12)


def test_law_at_is_stage_consistent_across_random_configs():
    rng = np.random.default_rng(11)
    for _ in range(25):
        cut = int(rng.integers(1, 9))
        p_early = float(rng.uniform(0.2, 0.9))
        coeff = float(rng.uniform(0.5, 1.0))
        model = BpveiModel(
            name="r",
            offspring=GenerationSchedule((
                Stage(0, cut, bernoulli_spec(p_early)),
                Stage(cut + 1, None, LawSpec("bernoulli_shift",
                                             p=ParamSchedule.power(coeff, -1.0))),
            )),
            immigration=GenerationSchedule((Stage(0, None, bernoulli_spec(0.5)),)),
        )
        for n in range(0, 2 * cut + 4):
            expected = p_early if n <= cut else coeff / n
            assert law_at(model, "offspring", n).mean == pytest.approx(expected, abs=1e-15)
            # pure function: repeated lookups agree
            assert law_at(model, "offspring", n) is law_at(model, "offspring", n)


def test_unknown_role_and_preset():
    with pytest.raises(ValidationError):
        law_at(preset_model("example_b"), "emigration", 0)
    with pytest.raises(ValidationError, match="unknown preset"):
        preset_model("example_z")
