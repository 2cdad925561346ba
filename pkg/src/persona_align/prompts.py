"""Prompt rendering for choice simulation, baselines and persona inference.

System texts live in ``templates/*.txt``; the version suffix in each file
name is recorded in run manifests so results can cite the exact wording.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from typing import Sequence

from .data import (
    ALTERNATIVES,
    PURPOSES,
    ChoiceContext,
    ChoiceRecord,
    RespondentPanel,
    SocioDemographics,
)
from .factors import FACTOR_LABELS, FACTORS
from .oracle.base import ChoicePayload, PanelPayload, Prompt

PROMPT_VERSIONS = {
    "simulation": "simulation_v1",
    "context_only": "context_only_v1",
    "persona_inference": "persona_inference_v1",
}


@lru_cache(maxsize=None)
def template(name: str) -> str:
    fname = PROMPT_VERSIONS[name] + ".txt"
    return resources.files("persona_align").joinpath("templates").joinpath(fname).read_text(encoding="utf-8").strip()


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


_AGE_TEXT = {"<25": "under 25", "25-39": "25 to 39", "40-54": "40 to 54", "55-65": "55 to 65", ">65": "over 65"}
_INCOME_TEXT = {
    "<50k": "under 50,000 CHF per year",
    "50-100k": "between 50,000 and 100,000 CHF per year",
    ">100k": "over 100,000 CHF per year",
}
_WHO_TEXT = {"self": "the traveler", "half": "half by the traveler, half by the employer",
             "employer": "the employer", "unknown": "not reported"}  # fmt: skip
_LUGGAGE_TEXT = {"none": "none", "one": "one piece", "several": "several pieces"}


def render_demographics(d: SocioDemographics) -> str:
    group = "current car user" if d.user_group == "car_user" else "current train user"
    return (
        "Traveler profile:\n"
        f"- Gender: {d.gender}\n"
        f"- Age: {_AGE_TEXT[d.age_band]}\n"
        f"- Annual income: {_INCOME_TEXT[d.income_band]}\n"
        f"- Mode group: {group}"
    )


def render_trip(ctx: ChoiceContext) -> str:
    lines = [
        "Trip:",
        f"- Purpose: {PURPOSES[ctx.purpose]}",
        f"- Travels first class: {'yes' if ctx.first_class else 'no'}",
        f"- Trip paid by: {_WHO_TEXT[ctx.who_pays]}",
        f"- Luggage: {_LUGGAGE_TEXT[ctx.luggage]}",
        f"- Holds an annual rail pass (GA): {'yes' if ctx.annual_pass else 'no'}",
        "Alternatives:",
    ]
    for alt in ALTERNATIVES:
        m = ctx.attributes(alt)
        lines.append(
            f"- {alt.label}: cost {_num(m.cost)} CHF, travel time {_num(m.travel_time)} minutes, "
            f"headway {_num(m.headway)} minutes"
        )
    return "\n".join(lines)


def render_persona(persona) -> str:
    lines = ["Traveler preferences (importance from 1 = low to 10 = high):"]
    lines += [f"- {FACTOR_LABELS[f]}: {persona.ratings[f]}" for f in FACTORS]
    if persona.summary_text:
        lines.append(f"Persona summary: {persona.summary_text}")
    return "\n".join(lines)


def build_simulation_prompt(d: SocioDemographics, ctx: ChoiceContext, persona, metadata: dict | None = None) -> Prompt:
    """Persona-conditioned choice prediction prompt."""
    user = "\n\n".join([
        render_demographics(d),
        render_persona(persona),
        render_trip(ctx),
        "Which alternative did this traveler choose?",
    ])  # fmt: skip
    payload = ChoicePayload(d, ctx, tuple(persona.ratings[f] for f in FACTORS))
    return Prompt(template("simulation"), user, dict(metadata or {}), payload)


def _render_solved(i: int, rec: ChoiceRecord) -> str:
    return f"Observed trip {i}:\n{render_demographics(rec.demographics)}\n{render_trip(rec.context)}\nChosen: {rec.chosen.label}"


def build_context_prompt(
    d: SocioDemographics, ctx: ChoiceContext, examples: Sequence[ChoiceRecord] = (), metadata: dict | None = None
) -> Prompt:
    """Prompt without a persona; solved trips are prepended when given."""
    parts = []
    if examples:
        parts.append(
            "Previously observed choices by other travelers:\n\n"
            + "\n\n".join(_render_solved(i + 1, r) for i, r in enumerate(examples))
        )
        parts.append("Now predict the following trip.")
    parts += [render_demographics(d), render_trip(ctx), "Which alternative did this traveler choose?"]
    return Prompt(template("context_only"), "\n\n".join(parts), dict(metadata or {}), ChoicePayload(d, ctx, None))


def build_inference_prompt(panel: RespondentPanel) -> Prompt:
    """Expert prompt listing every scenario the respondent answered."""
    scenarios = [
        f"Scenario {j}:\n{render_trip(rec.context)}\nChosen: {rec.chosen.label}"
        for j, rec in enumerate(panel.observations, start=1)
    ]
    user = "\n\n".join([
        render_demographics(panel.demographics),
        f"The respondent answered {len(scenarios)} scenarios.",
        *scenarios,
        "Rate the six factors for this respondent.",
    ])  # fmt: skip
    meta = {"respondent_id": panel.respondent_id}
    return Prompt(template("persona_inference"), user, meta, PanelPayload(panel))
