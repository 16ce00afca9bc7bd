"""Generation-indexed offspring and immigration schedules assembled into models.

A model pairs two stage lists (offspring, immigration) that partition the
generations; laws are instantiated lazily so open-ended horizons never
materialize state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

from .laws import Law, LawSpec, ParamSchedule, ValidationError, instantiate

__all__ = [
    "Stage",
    "GenerationSchedule",
    "BpveiModel",
    "build_model",
    "law_at",
    "preset_model",
    "preset_names",
    "PRESET_NAMES",
]


@dataclass(frozen=True)
class Stage:
    start: int
    stop: Optional[int]  # inclusive; None = open-ended
    law: LawSpec

    def covers(self, n: int) -> bool:
        return n >= self.start and (self.stop is None or n <= self.stop)


@dataclass(frozen=True)
class GenerationSchedule:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        if not self.stages:
            raise ValidationError("schedule has no stages")
        expected = 0
        for i, st in enumerate(self.stages):
            if st.start != expected:
                raise ValidationError(
                    f"stage {i} starts at {st.start}, expected {expected} (gap or overlap)"
                )
            if st.stop is not None:
                if st.stop < st.start:
                    raise ValidationError(f"stage {i} has stop {st.stop} < start {st.start}")
                expected = st.stop + 1
            elif i != len(self.stages) - 1:
                raise ValidationError(f"stage {i} is open-ended but not last")
        if self.stages[-1].stop is not None:
            raise ValidationError("final stage must be open-ended")

    def spec_at(self, n: int) -> LawSpec:
        for st in self.stages:
            if st.covers(n):
                return st.law
        raise ValidationError(f"no stage covers generation {n}")  # unreachable after validation

    def law_at(self, n: int) -> Law:
        return instantiate(self.spec_at(n), n)

    def probe_generations(self) -> list[int]:
        """Generations at which validation instantiates each stage's law."""
        out = []
        for st in self.stages:
            stop = st.stop if st.stop is not None else st.start + 1_000_000
            mid = (st.start + stop) // 2
            out.extend(sorted({st.start, min(st.start + 1, stop), mid, stop}))
        return out

    def to_json(self) -> list:
        return [
            {"from": st.start, "to": st.stop, "law": st.law.to_json()} for st in self.stages
        ]

    @staticmethod
    def from_json(obj: Sequence[dict]) -> "GenerationSchedule":
        stages = []
        for i, raw in enumerate(obj):
            try:
                law = LawSpec.from_json(raw["law"])
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"stage {i}: malformed law fragment ({exc})") from exc
            stop = raw.get("to")
            stages.append(Stage(start=int(raw["from"]), stop=None if stop is None else int(stop), law=law))
        return GenerationSchedule(stages=tuple(stages))


@dataclass(frozen=True)
class BpveiModel:
    """A validated branching-with-immigration model over all generations."""

    name: str
    offspring: GenerationSchedule
    immigration: GenerationSchedule
    degenerate: bool = False  # allows zero-variance laws (analytic fixtures)

    def offspring_law(self, n: int) -> Law:
        return self.offspring.law_at(n)

    def immigration_law(self, n: int) -> Law:
        return self.immigration.law_at(n)

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "offspring": self.offspring.to_json(),
            "immigration": self.immigration.to_json(),
        }
        if self.degenerate:
            out["degenerate"] = True
        return out


def law_at(model: BpveiModel, role: str, n: int) -> Law:
    """The instantiated law of generation ``n`` for ``role`` in {offspring, immigration}."""
    if role == "offspring":
        return model.offspring_law(n)
    if role == "immigration":
        return model.immigration_law(n)
    raise ValidationError(f"unknown role {role!r}")


def _validate(model: BpveiModel) -> BpveiModel:
    for role, sched in (("offspring", model.offspring), ("immigration", model.immigration)):
        for n in sched.probe_generations():
            try:
                law = sched.law_at(n)
            except ValidationError as exc:
                raise ValidationError(f"{role} schedule: {exc}") from exc
            if not (0.0 < law.mean < float("inf")):
                raise ValidationError(f"{role} law at generation {n} has mean {law.mean!r}")
            if law.mass_at_zero >= 1.0:
                raise ValidationError(f"{role} law at generation {n} is concentrated at 0")
            if law.variance == 0.0 and not model.degenerate:
                raise ValidationError(
                    f"{role} law at generation {n} has zero variance; "
                    "set the 'degenerate' flag to allow deterministic laws"
                )
    return model


def build_model(config: dict) -> BpveiModel:
    """Build and validate a model from the JSON-schema configuration dict."""
    if isinstance(config, str):
        config = json.loads(config)
    try:
        name = config.get("name", "unnamed")
        offspring = GenerationSchedule.from_json(config["offspring"])
        immigration = GenerationSchedule.from_json(config["immigration"])
    except KeyError as exc:
        raise ValidationError(f"model config missing section {exc}") from exc
    model = BpveiModel(
        name=name,
        offspring=offspring,
        immigration=immigration,
        degenerate=bool(config.get("degenerate", False)),
    )
    return _validate(model)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _bern(p_sched: ParamSchedule) -> LawSpec:
    return LawSpec(family="bernoulli_shift", p=p_sched)


def _open_stage(law: LawSpec) -> GenerationSchedule:
    return GenerationSchedule(stages=(Stage(0, None, law),))


def _two_phase_bern() -> GenerationSchedule:
    """bernoulli(1/2) on generations 0-1, then bernoulli(n^-2)."""
    return GenerationSchedule(stages=(
        Stage(0, 1, _bern(ParamSchedule.constant(0.5))),
        Stage(2, None, _bern(ParamSchedule.power(1.0, -2.0))),
    ))


def _preset_example_a(offspring: Optional[GenerationSchedule]) -> BpveiModel:
    if offspring is None:
        raise ValidationError(
            "preset 'example_a' fixes only the immigration schedule; supply an offspring schedule"
        )
    degenerate = any(
        instantiate(st.law, st.start).variance == 0.0 for st in offspring.stages
    )
    return _validate(BpveiModel(
        name="example_a",
        offspring=offspring,
        immigration=_two_phase_bern(),
        degenerate=degenerate,
    ))


def _preset_example_b() -> BpveiModel:
    return _validate(BpveiModel(
        name="example_b",
        offspring=_two_phase_bern(),
        immigration=_open_stage(_bern(ParamSchedule.constant(0.5))),
    ))


def _preset_example_c() -> BpveiModel:
    offspring = GenerationSchedule(stages=(
        Stage(0, 1, _bern(ParamSchedule.constant(0.5))),
        Stage(2, None, _bern(ParamSchedule.power(1.0, -1.0))),
    ))
    return _validate(BpveiModel(
        name="example_c",
        offspring=offspring,
        immigration=_open_stage(_bern(ParamSchedule.constant(0.5))),
    ))


def _preset_critical_geo_pois() -> BpveiModel:
    return _validate(BpveiModel(
        name="critical_geo_pois",
        offspring=_open_stage(LawSpec(family="geometric", p=ParamSchedule.constant(0.5))),
        immigration=_open_stage(LawSpec(family="poisson", rate=ParamSchedule.constant(1.0))),
    ))


def _preset_critical_pois_pois() -> BpveiModel:
    return _validate(BpveiModel(
        name="critical_pois_pois",
        offspring=_open_stage(LawSpec(family="poisson", rate=ParamSchedule.constant(1.0))),
        immigration=_open_stage(LawSpec(family="poisson", rate=ParamSchedule.constant(2.0))),
    ))


def _preset_deterministic_chain() -> BpveiModel:
    one = LawSpec(family="finite_pmf", probs=(0.0, 1.0))
    return _validate(BpveiModel(
        name="deterministic_chain",
        offspring=_open_stage(one),
        immigration=_open_stage(one),
        degenerate=True,
    ))


_PRESETS = {
    "example_a": _preset_example_a,
    "example_b": _preset_example_b,
    "example_c": _preset_example_c,
    "critical_geo_pois": _preset_critical_geo_pois,
    "critical_pois_pois": _preset_critical_pois_pois,
    "deterministic_chain": _preset_deterministic_chain,
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset_names() -> tuple[str, ...]:
    return PRESET_NAMES


def preset_model(name: str, offspring: Optional[GenerationSchedule | LawSpec | Sequence[dict]] = None) -> BpveiModel:
    """Return a compiled-in preset model by name.

    ``example_a`` fixes only the immigration side and requires ``offspring``
    (a schedule, a single LawSpec applied to all generations, or the JSON
    stage-list form).
    """
    if name not in _PRESETS:
        raise ValidationError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    if name == "example_a":
        if isinstance(offspring, LawSpec):
            offspring = _open_stage(offspring)
        elif offspring is not None and not isinstance(offspring, GenerationSchedule):
            offspring = GenerationSchedule.from_json(offspring)
        return _PRESETS[name](offspring)
    if offspring is not None:
        raise ValidationError(f"preset {name!r} does not take an offspring override")
    return _PRESETS[name]()
