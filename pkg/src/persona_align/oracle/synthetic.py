"""Deterministic stand-ins for the choice LLM and the expert LLM.

Both read the structured payload attached to a :class:`Prompt` rather than
its text, and answer in the same text format a chat model would, so the
parsing path is exercised end to end.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize

from ..data import ALTERNATIVES, Alternative, ChoiceContext, SocioDemographics
from ..errors import OracleError
from ..factors import FACTOR_LABELS, FACTORS
from .base import ChoicePayload, PanelPayload, Prompt

NEUTRAL_RATINGS = (5, 5, 5, 5, 5, 5)
_COMMUTE_OR_BUSINESS = frozenset({1, 3, 5, 7})


@dataclass(frozen=True)
class SyntheticOracleParams:
    """Coefficients mapping persona ratings to alternative utilities.

    With ratings r (1-10) the utility of alternative j is::

        V_j = - time_weight    * r_time/10    * TT_j / 100
              - cost_weight    * r_cost/10    * CO_j / 100
              - headway_weight * r_flex/10    * HE_j / 100
              + habit_bonus    * r_habit/10   * [j is the habitual mode]
              + comfort_bonus  * r_comfort/10 * [j is Swissmetro]
              + purpose_shift  * r_purpose/10 * [j is Car and trip is commute/business]

    plus ``noise_scale`` times Gumbel noise.  The highest utility wins; ties go
    to the earlier of Train, Swissmetro, Car.
    """

    time_weight: float = 1.0
    cost_weight: float = 1.0
    headway_weight: float = 1.0
    habit_bonus: float = 1.0
    comfort_bonus: float = 0.5
    purpose_shift: float = 0.0
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        w = self.weights()
        if not np.all(np.isfinite(w)) or not np.isfinite(self.noise_scale) or self.noise_scale < 0:
            raise ValueError("synthetic oracle weights must be finite and noise_scale >= 0")

    def weights(self) -> np.ndarray:
        # same order as FACTORS
        return np.array([self.time_weight, self.cost_weight, self.headway_weight,
                         self.habit_bonus, self.comfort_bonus, self.purpose_shift], dtype=float)  # fmt: skip


def habitual_mode(d: SocioDemographics) -> Alternative:
    return Alternative.CAR if d.user_group == "car_user" else Alternative.TRAIN


def choice_features(d: SocioDemographics, ctx: ChoiceContext) -> np.ndarray:
    """3x6 matrix: one row per alternative, one column per persona factor."""
    a = ctx.attribute_matrix()
    x = np.zeros((3, 6))
    x[:, 0] = -a[:, 1] / 100.0
    x[:, 1] = -a[:, 0] / 100.0
    x[:, 2] = -a[:, 2] / 100.0
    x[habitual_mode(d).index, 3] = 1.0
    x[Alternative.SWISSMETRO.index, 4] = 1.0
    if ctx.purpose in _COMMUTE_OR_BUSINESS:
        x[Alternative.CAR.index, 5] = 1.0
    return x


def utilities(params: SyntheticOracleParams, ratings, d: SocioDemographics, ctx: ChoiceContext) -> np.ndarray:
    coef = params.weights() * np.asarray(ratings, dtype=float) / 10.0
    return choice_features(d, ctx) @ coef


def _request_rng(seed: int, prompt: Prompt) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}\x00{prompt.system_text}\x00{prompt.user_text}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


class SyntheticChoiceOracle:
    """Utility-maximizing traveler driven by the persona in the prompt payload.

    Prompts without a persona (zero-/few-shot) use neutral ratings of 5.
    """

    deterministic_model = "synthetic-choice-v1"

    def __init__(self, params: SyntheticOracleParams | None = None):
        self.params = params or SyntheticOracleParams()
        self.calls = 0

    @property
    def identity(self) -> dict:
        return {"kind": "synthetic", "model_name": self.deterministic_model,
                "temperature": self.params.noise_scale, "params": asdict(self.params)}  # fmt: skip

    @property
    def deterministic(self) -> bool:
        return self.params.noise_scale == 0

    def choose(self, prompt: Prompt) -> Alternative:
        payload = prompt.payload
        if not isinstance(payload, ChoicePayload):
            raise OracleError("synthetic choice oracle needs a choice payload on the prompt")
        ratings = payload.ratings if payload.ratings is not None else NEUTRAL_RATINGS
        v = utilities(self.params, ratings, payload.demographics, payload.context)
        if self.params.noise_scale > 0:
            v = v + self.params.noise_scale * _request_rng(self.params.seed, prompt).gumbel(size=3)
        return ALTERNATIVES[int(np.argmax(v))]

    def complete(self, prompt: Prompt) -> str:
        self.calls += 1
        return f"Final answer: {self.choose(prompt).label}"


def fit_ratings(features: np.ndarray, chosen: np.ndarray, weights: np.ndarray,
                sharpness: float = 5.0, sparsity: float = 0.1) -> np.ndarray:  # fmt: skip
    """Box-constrained, L1-penalised conditional logit in rating space.

    ``features`` is (J, 3, F), ``chosen`` holds alternative indices.  The
    choice probabilities are a softmax of ``sharpness * features @ (weights * r / 10)``;
    the L1 term (ratings are bounded below by 1) keeps factors that the
    choices do not need at the floor, which is what makes a dominant factor
    stand out on a short, perfectly separable panel.
    """
    x = features * (weights / 10.0) * sharpness
    rows = np.arange(len(chosen))

    def objective(r):
        v = x @ r
        v = v - v.max(axis=1, keepdims=True)
        p = np.exp(v)
        p /= p.sum(axis=1, keepdims=True)
        ll = np.log(p[rows, chosen]).sum()
        grad = (x[rows, chosen] - np.einsum("ja,jaf->jf", p, x)).sum(axis=0)
        return -ll + sparsity * r.sum(), -grad + sparsity

    F = features.shape[2]
    res = minimize(objective, np.ones(F), jac=True, method="L-BFGS-B", bounds=[(1.0, 10.0)] * F)
    return res.x


class SyntheticExpert:
    """Expert stand-in that inverts the synthetic choice rule.

    Ratings are fitted to the panel's choices with :func:`fit_ratings` and
    stretched so the strongest factor rates 10 (factors at the floor stay 1).
    """

    model_name = "synthetic-expert-v1"

    def __init__(self, params: SyntheticOracleParams | None = None, sharpness: float = 5.0, sparsity: float = 0.1):
        self.params = params or SyntheticOracleParams()
        self.sharpness = sharpness
        self.sparsity = sparsity
        self.calls = 0

    @property
    def identity(self) -> dict:
        return {"kind": "synthetic", "model_name": self.model_name, "temperature": 0.0,
                "sharpness": self.sharpness, "sparsity": self.sparsity, "params": asdict(self.params)}  # fmt: skip

    deterministic = True

    def rate(self, panel) -> dict[str, int]:
        x = np.stack([choice_features(panel.demographics, r.context) for r in panel.observations])
        y = np.array([r.chosen.index for r in panel.observations])
        r = fit_ratings(x, y, self.params.weights(), self.sharpness, self.sparsity)
        top = r.max()
        if top - 1.0 < 1e-6:
            return {f: 1 for f in FACTORS}
        scaled = 1 + np.rint(9 * (r - 1.0) / (top - 1.0)).astype(int)
        return {f: int(s) for f, s in zip(FACTORS, scaled)}

    def complete(self, prompt: Prompt) -> str:
        self.calls += 1
        if not isinstance(prompt.payload, PanelPayload):
            raise OracleError("synthetic expert needs a panel payload on the prompt")
        ratings = self.rate(prompt.payload.panel)
        lines = [f"{FACTOR_LABELS[f]}: {ratings[f]}" for f in FACTORS]
        top = max(FACTORS, key=lambda f: ratings[f])
        lines.append(f"Summary: choices are driven mostly by {FACTOR_LABELS[top]}.")
        return "\n".join(lines)
