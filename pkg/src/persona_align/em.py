"""Monte-Carlo stochastic EM for the persona-loading parameters.

Each iteration samples L personas per training record from the current
loading distribution, asks the oracle to simulate the record's choice under
each sampled persona, converts hits into normalized weights, and then moves
the embedding parameters towards loading the personas that reproduced the
observed choice.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .data import ChoiceRecord
from .errors import OracleError, StallError
from .loading import (
    DEFAULT_LAMBDA,
    DIM_SIZES,
    N_PARAMS,
    OFFSETS,
    EmbeddingParams,
    embed_codes,
    sample_personas,
    similarity_and_loading,
)
from .oracle.base import fan_out, simulate_choice
from .prompts import build_simulation_prompt
from .records import dumps

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    L0: int = 5
    max_iterations: int = 30
    convergence_tol: float = 1e-3
    alpha_e: float = 0.5
    alpha_m: float = 0.4
    lam: float = DEFAULT_LAMBDA
    learning_rate: float = 0.05
    m_step_iterations: int = 200
    seed: int = 0
    max_workers: int = 1
    track_exact: bool = False

    def __post_init__(self):
        if self.L0 < 1:
            raise ValueError("L0 must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")
        if not 0 <= self.alpha_e < 1:
            raise ValueError("alpha_e must lie in [0, 1)")
        if self.alpha_m < 0:
            raise ValueError("alpha_m must be >= 0")
        if self.learning_rate <= 0 or self.m_step_iterations < 1:
            raise ValueError("M-step needs a positive learning rate and at least one iteration")


def record_codes(records: Sequence[ChoiceRecord]) -> np.ndarray:
    return np.array([r.demographics.codes() for r in records], dtype=np.intp).reshape(-1, 4)


# --- E-step ----------------------------------------------------------------


@dataclass
class EStepOutput:
    indices: np.ndarray  # (N, L) sampled persona indices
    choices: np.ndarray  # (N, L) simulated Alternative codes, 0 where the call failed
    correct: np.ndarray  # (N, L) bool
    loading: np.ndarray  # (N, L) P(Z_l | d_i) of the sampled personas
    weights: np.ndarray  # (N, L) modified weights
    valid: np.ndarray  # (N,) False for records excluded after an oracle failure
    failures: list = field(default_factory=list)

    @property
    def n_calls(self) -> int:
        return int(self.indices.size)


def modified_weights(loading: np.ndarray, correct: np.ndarray, alpha_e: float) -> np.ndarray:
    """Weights for one record: normalized hit probabilities, scaled by
    (1 - alpha_e) when every sampled persona reproduced the choice.

    The largest weight absorbs the rounding residue so that the correctly
    rounded sum (``math.fsum``) hits the regime value exactly.
    """
    hits = loading * correct
    den = hits.sum()
    if den <= 0:
        return np.zeros_like(loading, dtype=float)
    target = (1.0 - alpha_e) if correct.all() else 1.0
    w = hits / den * target
    j = int(np.argmax(w))
    for _ in range(4):
        resid = target - math.fsum(w)
        if resid == 0.0:
            break
        w[j] += resid
    return w


def _simulate_pairs(pairs, records, basis, oracle, max_workers):
    def run(pair):
        i, k = pair
        rec = records[i]
        prompt = build_simulation_prompt(rec.demographics, rec.context, basis.personas[k],
                                         {"record_id": rec.record_id, "persona_id": basis.personas[k].source_respondent_id})  # fmt: skip
        return simulate_choice(oracle, prompt)

    return fan_out(run, pairs, max_workers)


def e_step(params: EmbeddingParams, general: Sequence[ChoiceRecord], basis, L: int, oracle, rng,
           alpha_e: float = 0.5, lam: float = DEFAULT_LAMBDA, max_workers: int = 1) -> EStepOutput:  # fmt: skip
    K = len(basis)
    if L > K:
        raise ValueError(f"L={L} exceeds basis size {K}")
    _, P = similarity_and_loading(record_codes(general), basis.codes(), params, lam)
    N = len(general)
    idx = np.stack([sample_personas(P[i], L, rng) for i in range(N)]) if N else np.zeros((0, L), dtype=np.intp)
    pairs = [(i, int(k)) for i in range(N) for k in idx[i]]
    results = _simulate_pairs(pairs, general, basis, oracle, max_workers)

    choices = np.zeros((N, L), dtype=np.int64)
    valid = np.ones(N, dtype=bool)
    failures = []
    for n, ((i, k), res) in enumerate(zip(pairs, results)):
        if isinstance(res, OracleError):
            valid[i] = False
            failures.append({"record_id": general[i].record_id, "persona": k, "error": str(res)})
        else:
            choices[i, n % L] = int(res)
    observed = np.array([int(r.chosen) for r in general], dtype=np.int64).reshape(N, 1)
    correct = (choices == observed) & valid[:, None]
    loading = np.take_along_axis(P, idx, axis=1)
    weights = np.zeros((N, L))
    for i in np.flatnonzero(valid):
        weights[i] = modified_weights(loading[i], correct[i], alpha_e)
    if failures:
        log.warning("%d oracle calls failed; %d records excluded this iteration", len(failures), int((~valid).sum()))
    return EStepOutput(idx, choices, correct, loading, weights, valid, failures)


@dataclass
class SimulatedLikelihood:
    per_record: np.ndarray
    total: float
    n_zero: int
    n_excluded: int


def simulated_likelihood(e_out: EStepOutput) -> SimulatedLikelihood:
    """Per-record sum_l P_l 1(hit) / sum_l P_l; the total log sums positive records only."""
    num = (e_out.loading * e_out.correct).sum(axis=1)
    den = e_out.loading.sum(axis=1)
    per = np.where(e_out.valid, num / den, np.nan)
    pos = e_out.valid & (per > 0)
    total = float(np.sum(np.log(per[pos])))
    return SimulatedLikelihood(per, total, int(np.sum(e_out.valid & (per == 0))), int(np.sum(~e_out.valid)))


# --- exact likelihood ------------------------------------------------------


def correctness_matrix(general: Sequence[ChoiceRecord], basis, oracle, max_workers: int = 1) -> np.ndarray:
    """(N, K) indicator that persona k reproduces record i's observed choice."""
    if not getattr(oracle, "deterministic", False):
        raise ValueError("exact likelihood needs a deterministic or cached oracle")
    N, K = len(general), len(basis)
    pairs = [(i, k) for i in range(N) for k in range(K)]
    results = _simulate_pairs(pairs, general, basis, oracle, max_workers)
    bad = [r for r in results if isinstance(r, OracleError)]
    if bad:
        raise bad[0]
    sim = np.array([int(r) for r in results], dtype=np.int64).reshape(N, K)
    observed = np.array([int(r.chosen) for r in general], dtype=np.int64)
    return sim == observed[:, None]


def log_likelihood_from_correctness(params: EmbeddingParams, general, basis, correct: np.ndarray,
                                    lam: float = DEFAULT_LAMBDA) -> tuple[float, int]:  # fmt: skip
    _, P = similarity_and_loading(record_codes(general), basis.codes(), params, lam)
    per = (P * correct).sum(axis=1)
    pos = per > 0
    return float(np.sum(np.log(per[pos]))), int(np.sum(~pos))


def exact_log_likelihood(params: EmbeddingParams, general, basis, oracle, lam: float = DEFAULT_LAMBDA,
                         max_workers: int = 1) -> float:  # fmt: skip
    """Full-information log-likelihood, enumerating every (record, persona) pair."""
    correct = correctness_matrix(general, basis, oracle, max_workers)
    return log_likelihood_from_correctness(params, general, basis, correct, lam)[0]


# --- M-step ----------------------------------------------------------------


def variance_penalty(beta: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum over the four parameter blocks of (var_m / mean_var - 1)^2, and its gradient.

    Variances are population variances of each block's entries.  When every
    block is constant the variances are trivially equal and the penalty is 0.
    """
    beta = np.asarray(beta, dtype=float)
    blocks = [beta[o : o + n] for o, n in zip(OFFSETS, DIM_SIZES)]
    var = np.array([b.var() for b in blocks])
    vbar = var.mean()
    if vbar == 0.0:
        return 0.0, np.zeros_like(beta)
    r = var / vbar
    value = float(np.sum((r - 1.0) ** 2))
    d_r = 2.0 * (r - 1.0)
    # d r_m / d var_j = delta_mj / vbar - var_m / (4 vbar^2)
    d_var = d_r / vbar - np.sum(d_r * var) / (len(var) * vbar**2)
    grad = np.zeros_like(beta)
    for m, (o, n) in enumerate(zip(OFFSETS, DIM_SIZES)):
        grad[o : o + n] = d_var[m] * 2.0 * (blocks[m] - blocks[m].mean()) / n
    return value, grad


def _scatter(grad_e: np.ndarray, codes: np.ndarray) -> np.ndarray:
    g = np.zeros(N_PARAMS)
    for m, (o, n) in enumerate(zip(OFFSETS, DIM_SIZES)):
        g[o : o + n] += np.bincount(codes[:, m], weights=grad_e[:, m], minlength=n)
    return g


class MStepObjective:
    """sum_ik W_ik log P(Z_k | d_i; beta) - alpha_m * penalty(beta), with its gradient."""

    def __init__(self, rec_codes, basis_codes, W, alpha_m: float, lam: float):
        self.rec_codes = np.asarray(rec_codes, dtype=np.intp)
        self.basis_codes = np.asarray(basis_codes, dtype=np.intp)
        self.W = np.asarray(W, dtype=float)
        self.alpha_m = alpha_m
        self.lam = lam

    def __call__(self, beta: np.ndarray) -> tuple[float, np.ndarray]:
        params = EmbeddingParams.from_vector(beta)
        e_rec = embed_codes(self.rec_codes, params)
        e_basis = embed_codes(self.basis_codes, params)
        if not (np.all(np.any(e_rec != 0, axis=1)) and np.all(np.any(e_basis != 0, axis=1))):
            return -math.inf, np.zeros(N_PARAMS)
        value, g_rec, g_basis = kernels.weighted_loglik_grad(e_rec, e_basis, self.W, self.lam)
        grad = _scatter(g_rec, self.rec_codes) + _scatter(g_basis, self.basis_codes)
        if self.alpha_m:
            pen, pen_grad = variance_penalty(beta)
            value -= self.alpha_m * pen
            grad -= self.alpha_m * pen_grad
        return value, grad


def aggregate_weights(e_out: EStepOutput, K: int) -> np.ndarray:
    N = e_out.indices.shape[0]
    W = np.zeros((N, K))
    np.add.at(W, (np.repeat(np.arange(N), e_out.indices.shape[1]), e_out.indices.ravel()), e_out.weights.ravel())
    return W


@dataclass
class MStepConfig:
    learning_rate: float = 0.05
    m_step_iterations: int = 200
    tol: float = 1e-10


def m_step(e_out: EStepOutput, general, basis, params_init: EmbeddingParams, alpha_m: float = 0.4,
           config: MStepConfig | None = None, lam: float = DEFAULT_LAMBDA) -> tuple[EmbeddingParams, float]:  # fmt: skip
    """Gradient ascent on the regularized weighted log-loading objective.

    Steps are ``learning_rate * gradient / total_weight``; a step that lowers
    the objective is retried at half length (up to 30 times).  Returns the
    best iterate and its objective value.
    """
    config = config or MStepConfig()
    total_w = float(e_out.weights.sum())
    if total_w <= 0:
        raise StallError("every E-step weight is zero; increase L or change the seed")
    objective = MStepObjective(record_codes(general), basis.codes(), aggregate_weights(e_out, len(basis)), alpha_m, lam)
    beta = params_init.to_vector()
    value, grad = objective(beta)
    step = config.learning_rate / total_w
    for _ in range(config.m_step_iterations):
        for _halving in range(30):
            cand = beta + step * grad
            cand_value, cand_grad = objective(cand)
            if cand_value >= value:
                break
            step *= 0.5
        else:
            break
        improvement = cand_value - value
        beta, value, grad = cand, cand_value, cand_grad
        if improvement < config.tol:
            break
    return EmbeddingParams.from_vector(beta), float(value)


# --- training loop ---------------------------------------------------------


@dataclass
class TrainState:
    iteration: int
    params: EmbeddingParams
    L: int
    history: list[dict] = field(default_factory=list)
    rng_state: dict | None = None
    oracle_calls: int = 0
    stalls: int = 0
    initial_exact_ll: float | None = None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "params": self.params.to_dict(),
            "L": self.L,
            "history": self.history,
            "rng_state": self.rng_state,
            "oracle_calls": self.oracle_calls,
            "stalls": self.stalls,
            "initial_exact_ll": self.initial_exact_ll,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        return cls(d["iteration"], EmbeddingParams.from_dict(d["params"]), d["L"], d["history"],
                   d["rng_state"], d["oracle_calls"], d.get("stalls", 0), d.get("initial_exact_ll"))  # fmt: skip


def _finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)


def train(bundle_or_general, basis, oracle, config: TrainConfig | None = None, params_init: EmbeddingParams | None = None,
          checkpoint_path=None, resume: bool = False) -> tuple[EmbeddingParams, TrainState]:  # fmt: skip
    """Run the stochastic EM loop until the parameters settle or the iteration cap.

    ``bundle_or_general`` is a :class:`DatasetBundle` (its general set is used)
    or a list of records.  L grows by one before every E-step, capped at the
    basis size.  With ``checkpoint_path`` the state is written after every
    iteration; ``resume=True`` continues from that file when it exists.
    """
    config = config or TrainConfig()
    general = list(getattr(bundle_or_general, "general", bundle_or_general))
    if not general:
        raise ValueError("training needs at least one general record")
    K = len(basis)
    if K == 0:
        raise ValueError("persona basis is empty")
    rng = np.random.default_rng([config.seed, 2])
    correct = correctness_matrix(general, basis, oracle, config.max_workers) if config.track_exact else None

    ckpt = Path(checkpoint_path) if checkpoint_path else None
    if resume and ckpt is not None and ckpt.exists():
        state = TrainState.from_dict(json.loads(ckpt.read_text()))
        rng.bit_generator.state = state.rng_state
        log.info("resuming from iteration %d", state.iteration)
    else:
        if params_init is None:
            params_init = EmbeddingParams.random(np.random.default_rng([config.seed, 1]))
        state = TrainState(0, params_init, min(config.L0, K))
        if correct is not None:
            state.initial_exact_ll = _finite_or_none(
                log_likelihood_from_correctness(params_init, general, basis, correct, config.lam)[0]
            )
    mcfg = MStepConfig(config.learning_rate, config.m_step_iterations)

    while state.iteration < config.max_iterations:
        if state.history and state.history[-1]["delta_inf"] < config.convergence_tol:
            break
        state.iteration += 1
        state.L = min(state.L + 1, K)
        e_out = e_step(state.params, general, basis, state.L, oracle, rng, config.alpha_e, config.lam, config.max_workers)
        state.oracle_calls += e_out.n_calls
        sim = simulated_likelihood(e_out)
        old = state.params
        try:
            new, m_obj = m_step(e_out, general, basis, old, config.alpha_m, mcfg, config.lam)
            state.stalls = 0
        except StallError:
            state.stalls += 1
            log.warning("iteration %d stalled (%d in a row)", state.iteration, state.stalls)
            if state.stalls >= 3:
                raise
            new, m_obj = old, None
        delta = float(np.max(np.abs(new.to_vector() - old.to_vector())))
        exact = None
        n_zero_exact = None
        if correct is not None:
            exact, n_zero_exact = log_likelihood_from_correctness(new, general, basis, correct, config.lam)
        state.params = new
        entry = {
            "iteration": state.iteration,
            "L": state.L,
            "simulated_ll": sim.total,
            "zero_likelihood_records": sim.n_zero,
            "excluded_records": sim.n_excluded,
            "m_objective": m_obj,
            "exact_ll": _finite_or_none(exact),
            "exact_zero_records": n_zero_exact,
            "delta_inf": delta,
            "oracle_calls": state.oracle_calls,
        }
        state.history.append(entry)
        state.rng_state = rng.bit_generator.state
        log.info("iter %d  L=%d  simLL=%.4f  |dbeta|=%.2e", state.iteration, state.L, sim.total, delta)
        if ckpt is not None:
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            ckpt.write_text(dumps(state.to_dict()) + "\n")
        if delta < config.convergence_tol:
            break
    return state.params, state


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    if not math.isfinite(d["convergence_tol"]):
        d["convergence_tol"] = str(d["convergence_tol"])
    return d
