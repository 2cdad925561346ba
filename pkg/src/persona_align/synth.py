"""Synthetic populations with a known latent preference structure.

Each traveler belongs to one of two latent preference groups, keyed to their
user group: train users are cost-driven and car users are time-driven.
Choices are produced by the synthetic choice oracle from the traveler's true
persona, so a persona-loading function that learns to separate user groups
can be checked against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    ALTERNATIVES,
    AGE_BANDS,
    GENDERS,
    INCOME_BANDS,
    LUGGAGE,
    PURPOSES,
    USER_GROUPS,
    WHO_PAYS,
    ChoiceContext,
    ChoiceRecord,
    DatasetBundle,
    ModeAttributes,
    RespondentPanel,
    SocioDemographics,
)
from .factors import FACTORS
from .loading import DEFAULT_LAMBDA, EmbeddingParams, similarity_and_loading
from .oracle.base import simulate_choice
from .oracle.synthetic import SyntheticChoiceOracle, SyntheticOracleParams
from .personas import Persona, PersonaBasis
from .prompts import build_simulation_prompt

# prototype ratings per latent group, in FACTORS order
GROUP_PROTOTYPES = {
    "train_user": (1, 10, 1, 1, 1, 1),
    "car_user": (10, 1, 1, 1, 1, 1),
}


@dataclass(frozen=True)
class PopulationSpec:
    n_personas: int = 40
    n_general: int = 200
    n_test: int = 400
    n_holdout_profiles: int = 100
    observations_per_panel: int = 9
    jitter: int = 1
    seed: int = 0


@dataclass
class SyntheticPopulation:
    spec: PopulationSpec
    bundle: DatasetBundle
    basis: PersonaBasis
    holdout_profiles: list[SocioDemographics]
    oracle_params: SyntheticOracleParams = field(default_factory=SyntheticOracleParams)

    def persona_groups(self) -> np.ndarray:
        return np.array([self.basis.demographics(k).user_group for k in range(len(self.basis))])


def random_demographics(rng: np.random.Generator, user_group: str | None = None) -> SocioDemographics:
    return SocioDemographics(
        gender=GENDERS[rng.integers(len(GENDERS))],
        age_band=AGE_BANDS[rng.integers(len(AGE_BANDS))],
        income_band=INCOME_BANDS[rng.integers(len(INCOME_BANDS))],
        user_group=user_group or USER_GROUPS[rng.integers(len(USER_GROUPS))],
    )


def random_context(rng: np.random.Generator) -> ChoiceContext:
    """Independent uniform attributes, so cost and time rankings often disagree."""

    def mode(headway: bool) -> ModeAttributes:
        return ModeAttributes(
            cost=float(rng.integers(5, 200)),
            travel_time=float(rng.integers(20, 300)),
            headway=float(rng.integers(10, 120)) if headway else 0.0,
        )

    purposes = sorted(PURPOSES)
    return ChoiceContext(
        purpose=int(purposes[rng.integers(len(purposes))]),
        first_class=bool(rng.integers(2)),
        who_pays=WHO_PAYS[rng.integers(3)],
        luggage=LUGGAGE[rng.integers(len(LUGGAGE))],
        annual_pass=False,
        train=mode(True),
        swissmetro=mode(True),
        car=mode(False),
    )


def group_persona(rng: np.random.Generator, group: str, respondent_id: int, jitter: int) -> Persona:
    base = np.array(GROUP_PROTOTYPES[group])
    r = np.clip(base + rng.integers(-jitter, jitter + 1, size=len(base)), 1, 10) if jitter else base
    return Persona(respondent_id, {f: int(v) for f, v in zip(FACTORS, r)}, f"synthetic {group} persona")


def _choose(oracle, d, ctx, persona) -> int:
    return simulate_choice(oracle, build_simulation_prompt(d, ctx, persona))


def generate_population(spec: PopulationSpec | None = None,
                        oracle_params: SyntheticOracleParams | None = None) -> SyntheticPopulation:  # fmt: skip
    """Build a bundle, a persona basis and held-out profiles from one seed.

    Basis personas alternate between the two groups.  Every general and test
    traveler draws a persona from their own group's prototype (with jitter)
    and chooses with the synthetic oracle under it.
    """
    spec = spec or PopulationSpec()
    oracle_params = oracle_params or SyntheticOracleParams()
    oracle = SyntheticChoiceOracle(oracle_params)
    rng = np.random.default_rng(spec.seed)

    personas, index, panels = [], {}, []
    record_id = 1
    for k in range(spec.n_personas):
        rid = k + 1
        group = USER_GROUPS[k % 2]
        d = random_demographics(rng, group)
        persona = group_persona(rng, group, rid, spec.jitter)
        obs = []
        for _ in range(spec.observations_per_panel):
            ctx = random_context(rng)
            obs.append(ChoiceRecord(record_id, rid, d, ctx, _choose(oracle, d, ctx, persona)))
            record_id += 1
        personas.append(persona)
        index[rid] = d
        panels.append(RespondentPanel(rid, d, tuple(obs)))

    def single_records(n: int, first_rid: int) -> list[ChoiceRecord]:
        nonlocal record_id
        out = []
        for j in range(n):
            d = random_demographics(rng)
            persona = group_persona(rng, d.user_group, first_rid + j, spec.jitter)
            ctx = random_context(rng)
            out.append(ChoiceRecord(record_id, first_rid + j, d, ctx, _choose(oracle, d, ctx, persona)))
            record_id += 1
        return out

    general = single_records(spec.n_general, 100_000)
    test = single_records(spec.n_test, 200_000)
    holdout = [random_demographics(rng) for _ in range(spec.n_holdout_profiles)]
    sizes = {"n_detailed_respondents": spec.n_personas, "n_general_records": spec.n_general, "n_test_records": spec.n_test}
    bundle = DatasetBundle(panels, general, test, split_seed=spec.seed, sizes=sizes)
    basis = PersonaBasis(personas, index, {"expert": "ground-truth", "prompt_version": "synthetic", "date": None})
    return SyntheticPopulation(spec, bundle, basis, holdout, oracle_params)


def same_group_mass(params: EmbeddingParams, profiles, basis: PersonaBasis, lam: float = DEFAULT_LAMBDA) -> float:
    """Mean loading mass placed on personas whose source shares the profile's user group."""
    codes = np.array([d.codes() for d in profiles])
    _, P = similarity_and_loading(codes, basis.codes(), params, lam)
    same = codes[:, 3][:, None] == basis.codes()[:, 3][None, :]
    return float(np.mean(np.sum(P * same, axis=1)))


def mnl_records(theta, n: int, seed: int = 0, first_record_id: int = 1) -> list[ChoiceRecord]:
    """Records whose choices follow a known multinomial logit.

    ``theta`` is (asc_train, asc_swissmetro, beta_time, beta_cost,
    beta_headway); Car is the reference alternative.  Attributes come from
    :func:`random_context` and choices maximise utility plus Gumbel noise.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (5,):
        raise ValueError("theta must hold 5 coefficients")
    rng = np.random.default_rng(seed)
    out = []
    for j in range(n):
        d = random_demographics(rng)
        ctx = random_context(rng)
        a = ctx.attribute_matrix()
        v = theta[2] * a[:, 1] + theta[3] * a[:, 0] + theta[4] * a[:, 2]
        v[:2] += theta[:2]
        choice = ALTERNATIVES[int(np.argmax(v + rng.gumbel(size=3)))]
        out.append(ChoiceRecord(first_record_id + j, first_record_id + j, d, ctx, choice))
    return out
