"""Comparison models: multinomial logit and three prompting baselines."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import ALTERNATIVES, Alternative, ChoiceRecord
from .errors import EstimationError, OracleError
from .oracle.base import fan_out, simulate_choice_detail
from .predictor import Prediction, PredictionSet
from .prompts import build_context_prompt, build_simulation_prompt

log = logging.getLogger(__name__)

# --- multinomial logit -----------------------------------------------------

MNL_BASE_NAMES = ("asc_train", "asc_swissmetro", "beta_time", "beta_cost", "beta_headway")
MIN_MNL_RECORDS = 50


@dataclass
class MnlParams:
    """Linear-in-parameters utilities; Car is the reference alternative (its constant is 0)."""

    asc_train: float
    asc_swissmetro: float
    beta_time: float
    beta_cost: float
    beta_headway: float
    beta_cost_pass: float | None = None
    std_errors: dict = field(default_factory=dict)
    log_likelihood: float | None = None
    n_iterations: int = 0
    gradient_norm: float | None = None

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.vector()):
            raise ValueError("MNL parameters must be finite")

    @property
    def names(self) -> tuple[str, ...]:
        return MNL_BASE_NAMES + (("beta_cost_pass",) if self.beta_cost_pass is not None else ())

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names], dtype=float)

    @classmethod
    def from_vector(cls, v, pass_interaction: bool = False, **extra) -> "MnlParams":
        v = [float(x) for x in v]
        return cls(*v[:5], beta_cost_pass=v[5] if pass_interaction else None, **extra)

    def to_dict(self) -> dict:
        d = {n: getattr(self, n) for n in self.names}
        d.update(std_errors=self.std_errors, log_likelihood=self.log_likelihood,
                 n_iterations=self.n_iterations, gradient_norm=self.gradient_norm)  # fmt: skip
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MnlParams":
        return cls(*(float(d[n]) for n in MNL_BASE_NAMES), beta_cost_pass=d.get("beta_cost_pass"),
                   std_errors=d.get("std_errors", {}), log_likelihood=d.get("log_likelihood"),
                   n_iterations=d.get("n_iterations", 0), gradient_norm=d.get("gradient_norm"))  # fmt: skip


def mnl_design(records: Sequence[ChoiceRecord], pass_interaction: bool = False) -> np.ndarray:
    """(N, 3, P) attribute tensor: ASC dummies, time, cost, headway [, cost x annual pass]."""
    N = len(records)
    P = 6 if pass_interaction else 5
    X = np.zeros((N, 3, P))
    X[:, 0, 0] = 1.0
    X[:, 1, 1] = 1.0
    for i, r in enumerate(records):
        a = r.context.attribute_matrix()
        X[i, :, 2] = a[:, 1]
        X[i, :, 3] = a[:, 0]
        X[i, :, 4] = a[:, 2]
        if pass_interaction and r.context.annual_pass:
            X[i, :2, 5] = a[:2, 0]
    return X


def _loglik(theta, X, y):
    v = X @ theta
    v = v - v.max(axis=1, keepdims=True)
    logp = v - np.log(np.exp(v).sum(axis=1, keepdims=True))
    return float(logp[np.arange(len(y)), y].sum()), np.exp(logp)


def _check_identified(X: np.ndarray, names: Sequence[str]) -> None:
    centred = (X - X.mean(axis=1, keepdims=True)).reshape(-1, X.shape[2])
    scale = np.abs(centred).max(axis=0)
    if np.any(scale == 0):
        bad = [n for n, s in zip(names, scale) if s == 0]
        raise EstimationError(f"parameters not identified (no variation across alternatives): {', '.join(bad)}")
    _, sv, vt = np.linalg.svd(centred / scale, full_matrices=False)
    tol = sv[0] * max(centred.shape) * np.finfo(float).eps
    null = vt[sv <= tol]
    if len(null):
        involved = np.flatnonzero(np.any(np.abs(null) > 1e-8, axis=0))
        raise EstimationError(f"collinear parameters: {', '.join(names[j] for j in involved)}")


def mnl_fit(records: Sequence[ChoiceRecord], pass_interaction: bool = False, init=None, max_iterations: int = 500,
            gtol: float = 1e-6) -> MnlParams:  # fmt: skip
    """Maximum-likelihood fit by Newton's method with step halving.

    The log-likelihood is concave in the parameters, so any start reaches
    the same optimum.  Convergence is declared when the gradient sup-norm
    falls below ``gtol``.
    """
    if len(records) < MIN_MNL_RECORDS:
        raise EstimationError(f"MNL needs at least {MIN_MNL_RECORDS} records, got {len(records)}")
    X = mnl_design(records, pass_interaction)
    y = np.array([r.chosen.index for r in records])
    names = MNL_BASE_NAMES + (("beta_cost_pass",) if pass_interaction else ())
    missing = [a.label for a in ALTERNATIVES if not np.any(y == a.index)]
    if missing:
        raise EstimationError(f"alternatives never chosen: {missing}")
    _check_identified(X, names)

    theta = np.zeros(X.shape[2]) if init is None else np.asarray(init, dtype=float).copy()
    ll, p = _loglik(theta, X, y)
    rows = np.arange(len(y))
    for it in range(1, max_iterations + 1):
        xbar = np.einsum("nj,njp->np", p, X)
        grad = (X[rows, y] - xbar).sum(axis=0)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < gtol:
            break
        d = X - xbar[:, None, :]
        H = -np.einsum("nj,njp,njq->pq", p, d, d)
        step = np.linalg.solve(H, -grad)
        t = 1.0
        while True:
            cand = theta + t * step
            cand_ll, cand_p = _loglik(cand, X, y)
            if cand_ll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        theta, ll, p = cand, cand_ll, cand_p
    else:
        raise EstimationError(f"MNL did not converge in {max_iterations} iterations (gradient sup-norm {gnorm:.3g})")
    d = X - np.einsum("nj,njp->np", p, X)[:, None, :]
    H = -np.einsum("nj,njp,njq->pq", p, d, d)
    se = np.sqrt(np.diag(np.linalg.inv(-H)))
    return MnlParams.from_vector(theta, pass_interaction, std_errors=dict(zip(names, se.tolist())),
                                 log_likelihood=ll, n_iterations=it - 1, gradient_norm=gnorm)  # fmt: skip


def mnl_utilities(params: MnlParams, record: ChoiceRecord) -> np.ndarray:
    X = mnl_design([record], params.beta_cost_pass is not None)[0]
    return X @ params.vector()


def mnl_probabilities(utilities) -> np.ndarray:
    v = np.asarray(utilities, dtype=float)
    finite = np.isfinite(v)
    if not finite.all():
        v = np.where(finite, v, -np.inf)
    v = v - v.max()
    e = np.exp(v)
    return e / e.sum()


def mnl_predict(params: MnlParams, record: ChoiceRecord) -> tuple[tuple[float, float, float], Alternative]:
    p = mnl_probabilities(mnl_utilities(params, record))
    return tuple(float(x) for x in p), ALTERNATIVES[int(np.argmax(p))]


def run_mnl(params: MnlParams, test: Sequence[ChoiceRecord]) -> PredictionSet:
    preds = []
    for r in test:
        probs, alt = mnl_predict(params, r)
        preds.append(Prediction(r.record_id, alt, probabilities=probs))
    return PredictionSet("mnl", preds, {"params": params.to_dict()})


# --- prompting baselines ---------------------------------------------------


def _to_prediction_set(method: str, test, results, persona_ids=None, manifest=None) -> PredictionSet:
    preds = []
    for i, (rec, res) in enumerate(zip(test, results)):
        pids = [persona_ids[i]] if persona_ids is not None else []
        if isinstance(res, OracleError):
            preds.append(Prediction(rec.record_id, None, pids, [], str(res)))
        else:
            preds.append(Prediction(rec.record_id, res.alternative, pids, [res.key]))
    return PredictionSet(method, preds, manifest or {})


def zero_shot_prompt(record: ChoiceRecord):
    return build_context_prompt(record.demographics, record.context, (), {"record_id": record.record_id})


def zero_shot_predict(record: ChoiceRecord, oracle) -> Alternative:
    return simulate_choice_detail(oracle, zero_shot_prompt(record)).alternative


def run_zero_shot(test: Sequence[ChoiceRecord], oracle, max_workers: int = 1) -> PredictionSet:
    results = fan_out(lambda r: simulate_choice_detail(oracle, zero_shot_prompt(r)), test, max_workers)
    return _to_prediction_set("zero_shot", test, results, manifest={"oracle": getattr(oracle, "identity", {})})


@dataclass(frozen=True)
class FewShotConfig:
    n_examples: int = 5

    def __post_init__(self):
        if self.n_examples < 0:
            raise ValueError("n_examples must be >= 0")


def _context_vectors(records: Sequence[ChoiceRecord]) -> np.ndarray:
    return np.array([r.context.attribute_matrix().ravel() for r in records], dtype=float).reshape(-1, 9)


class ExampleSelector:
    """Nearest pool records by L1 distance over min-max normalized (cost, time, headway) of each alternative."""

    def __init__(self, pool: Sequence[ChoiceRecord]):
        self.pool = list(pool)
        self.vectors = _context_vectors(self.pool)
        lo = self.vectors.min(axis=0) if len(self.pool) else np.zeros(9)
        hi = self.vectors.max(axis=0) if len(self.pool) else np.ones(9)
        self.lo = lo
        self.span = np.where(hi > lo, hi - lo, 1.0)
        self.normed = (self.vectors - lo) / self.span

    def distances(self, record: ChoiceRecord) -> np.ndarray:
        target = (record.context.attribute_matrix().ravel() - self.lo) / self.span
        return np.abs(self.normed - target).sum(axis=1)

    def select(self, record: ChoiceRecord, n: int) -> list[ChoiceRecord]:
        if n > len(self.pool):
            raise ValueError(f"n_examples={n} exceeds pool size {len(self.pool)}")
        if n == 0:
            return []
        order = np.argsort(self.distances(record), kind="stable")[:n]
        return [self.pool[i] for i in order]


def select_examples(record: ChoiceRecord, pool: Sequence[ChoiceRecord], config: FewShotConfig) -> list[ChoiceRecord]:
    return ExampleSelector(pool).select(record, config.n_examples)


def few_shot_prompt(record: ChoiceRecord, examples: Sequence[ChoiceRecord]):
    return build_context_prompt(record.demographics, record.context, examples, {"record_id": record.record_id})


def _check_disjoint(test, pool):
    clash = {r.record_id for r in test} & {r.record_id for r in pool}
    if clash:
        raise ValueError(f"example pool overlaps the test records: {sorted(clash)[:5]}")


def few_shot_predict(record: ChoiceRecord, example_pool: Sequence[ChoiceRecord], config: FewShotConfig, oracle) -> Alternative:
    _check_disjoint([record], example_pool)
    examples = select_examples(record, example_pool, config)
    return simulate_choice_detail(oracle, few_shot_prompt(record, examples)).alternative


def run_few_shot(test: Sequence[ChoiceRecord], pool: Sequence[ChoiceRecord], oracle, config: FewShotConfig | None = None,
                 max_workers: int = 1) -> PredictionSet:  # fmt: skip
    config = config or FewShotConfig()
    _check_disjoint(test, pool)
    selector = ExampleSelector(pool)
    prompts = [few_shot_prompt(r, selector.select(r, config.n_examples)) for r in test]
    results = fan_out(lambda p: simulate_choice_detail(oracle, p), prompts, max_workers)
    manifest = {"oracle": getattr(oracle, "identity", {}), "n_examples": config.n_examples, "pool_size": len(pool)}
    return _to_prediction_set("few_shot", test, results, manifest=manifest)


def few_shot_sweep(validation: Sequence[ChoiceRecord], pool: Sequence[ChoiceRecord], oracle,
                   candidates: Sequence[int] = (1, 3, 5, 7, 10), max_workers: int = 1,
                   score: Callable | None = None) -> dict[int, float]:  # fmt: skip
    """Score each example count on a validation set (macro F1 by default)."""
    from .evaluation import f1_scores

    truths = [r.chosen for r in validation]
    out = {}
    for n in candidates:
        ps = run_few_shot(validation, pool, oracle, FewShotConfig(n), max_workers)
        pairs = [(t, p) for t, p in zip(truths, ps.labels()) if p is not None]
        if score is not None:
            out[n] = float(score(pairs))
        else:
            out[n] = f1_scores([t for t, _ in pairs], [p for _, p in pairs], "macro") if pairs else 0.0
    return out


RELAX_ORDER = ("income_band", "age_band", "gender", "user_group")


def same_group_candidates(record: ChoiceRecord, basis) -> tuple[list[int], tuple[str, ...]]:
    """Persona indices whose source matches the record's demographics.

    Variables are dropped from the match one at a time, in the order income,
    age, gender, group, until some persona qualifies.  Returns the indices and
    the variables that were relaxed.
    """
    if len(basis) == 0:
        raise ValueError("persona basis is empty")
    demos = [basis.demographics(k) for k in range(len(basis))]
    fields = list(RELAX_ORDER)
    for n_relaxed in range(len(fields) + 1):
        keep = fields[n_relaxed:]
        cands = [k for k, d in enumerate(demos) if all(getattr(d, f) == getattr(record.demographics, f) for f in keep)]
        if cands:
            return cands, tuple(fields[:n_relaxed])
    raise AssertionError("unreachable: relaxing every variable matches the whole basis")


def same_group_draw(record: ChoiceRecord, basis, rng: np.random.Generator) -> int:
    cands, _ = same_group_candidates(record, basis)
    return cands[int(rng.integers(len(cands)))]


def same_group_prompt(record: ChoiceRecord, basis, k: int):
    persona = basis.personas[k]
    return build_simulation_prompt(record.demographics, record.context, persona,
                                   {"record_id": record.record_id, "persona_id": persona.source_respondent_id})  # fmt: skip


def same_group_predict(record: ChoiceRecord, basis, oracle, seed) -> Alternative:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = same_group_draw(record, basis, rng)
    return simulate_choice_detail(oracle, same_group_prompt(record, basis, k)).alternative


def run_same_group(test: Sequence[ChoiceRecord], basis, oracle, seed: int = 0, max_workers: int = 1) -> PredictionSet:
    rng = np.random.default_rng([seed, 4])
    draws = [same_group_draw(r, basis, rng) for r in test]
    prompts = [same_group_prompt(r, basis, k) for r, k in zip(test, draws)]
    results = fan_out(lambda p: simulate_choice_detail(oracle, p), prompts, max_workers)
    pids = [basis.personas[k].source_respondent_id for k in draws]
    manifest = {"oracle": getattr(oracle, "identity", {}), "seed": seed, "basis_size": len(basis)}
    return _to_prediction_set("same_group", test, results, pids, manifest)
