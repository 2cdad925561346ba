"""Embedding kernel, cosine similarity and the softmax persona-loading function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .data import DEMOGRAPHIC_CATEGORIES, DEMOGRAPHIC_FIELDS, SocioDemographics
from .errors import DegenerateEmbeddingError, SizingError
from .records import read_jsonl, write_jsonl

DEFAULT_LAMBDA = 40.0 / 3.0
DIM_SIZES = tuple(len(DEMOGRAPHIC_CATEGORIES[f]) for f in DEMOGRAPHIC_FIELDS)  # (2, 5, 3, 2)
OFFSETS = tuple(int(x) for x in np.cumsum((0,) + DIM_SIZES[:-1]))
N_PARAMS = sum(DIM_SIZES)
PARAMS_SCHEMA_VERSION = 1


@dataclass
class EmbeddingParams:
    """One scalar per category of gender, age band, income band and user group."""

    gender: np.ndarray
    age: np.ndarray
    income: np.ndarray
    group: np.ndarray

    def __post_init__(self):
        for name, size in zip(("gender", "age", "income", "group"), DIM_SIZES):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (size,):
                raise ValueError(f"beta_{name} must have {size} entries, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"beta_{name} has non-finite entries")
            setattr(self, name, arr)

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        return (self.gender, self.age, self.income, self.group)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    @classmethod
    def from_vector(cls, v) -> "EmbeddingParams":
        v = np.asarray(v, dtype=float)
        if v.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got {v.shape}")
        return cls(*(v[o : o + n] for o, n in zip(OFFSETS, DIM_SIZES)))

    @classmethod
    def random(cls, seed) -> "EmbeddingParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls.from_vector(rng.standard_normal(N_PARAMS))

    @classmethod
    def constant(cls, value: float = 1.0) -> "EmbeddingParams":
        return cls.from_vector(np.full(N_PARAMS, float(value)))

    def to_dict(self) -> dict:
        return {"beta_gender": self.gender.tolist(), "beta_age": self.age.tolist(),
                "beta_income": self.income.tolist(), "beta_group": self.group.tolist()}  # fmt: skip

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingParams":
        return cls(d["beta_gender"], d["beta_age"], d["beta_income"], d["beta_group"])


def save_params(params: EmbeddingParams, path, **extra):
    for name, block in zip(("gender", "age", "income", "group"), params.blocks):
        if not np.any(block):
            raise DegenerateEmbeddingError(f"beta_{name} is all zeros; refusing to save degenerate parameters")
    return write_jsonl(path, "embedding_params", PARAMS_SCHEMA_VERSION, [params.to_dict()], **extra)


def load_params(path) -> EmbeddingParams:
    _, recs = read_jsonl(path, "embedding_params")
    return EmbeddingParams.from_dict(recs[0])


def embed_codes(codes, params: EmbeddingParams) -> np.ndarray:
    """(n, 4) category codes -> (n, 4) embeddings; column m picks beta_m[code]."""
    codes = np.asarray(codes, dtype=np.intp).reshape(-1, 4)
    return np.stack([block[codes[:, m]] for m, block in enumerate(params.blocks)], axis=1)


def embed(d: SocioDemographics, params: EmbeddingParams) -> np.ndarray:
    return embed_codes([d.codes()], params)[0]


def _check_nonzero(e: np.ndarray, what: str) -> None:
    zero = ~np.any(e != 0, axis=-1)
    if np.any(zero):
        raise DegenerateEmbeddingError(f"zero embedding vector among {what} (rows {np.flatnonzero(zero)[:5].tolist()})")


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    if na == 0 or nb == 0:
        raise DegenerateEmbeddingError("cosine similarity of a zero vector")
    return min(1.0, max(-1.0, float(a @ b) / (na * nb)))


def softmax(z, lam: float = 1.0) -> np.ndarray:
    z = lam * np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


@dataclass
class LoadingDistribution:
    probabilities: np.ndarray
    lambda_used: float
    similarities: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.probabilities)


def similarity_and_loading(record_codes, basis_codes, params: EmbeddingParams, lam: float = DEFAULT_LAMBDA):
    """Similarities and loading probabilities for many records at once, (N, K) each."""
    e_rec = embed_codes(record_codes, params)
    e_basis = embed_codes(basis_codes, params)
    _check_nonzero(e_rec, "records")
    _check_nonzero(e_basis, "basis personas")
    return kernels.loading_matrix(e_rec, e_basis, float(lam))


def loading_distribution(d: SocioDemographics, params: EmbeddingParams, basis, lam: float = DEFAULT_LAMBDA) -> LoadingDistribution:
    """P(persona k | d) = softmax over the basis of lam * cos(e(d), e(d_k))."""
    basis_codes = basis.codes() if hasattr(basis, "codes") else np.asarray(basis)
    if len(basis_codes) == 0:
        raise ValueError("persona basis is empty")
    s, p = similarity_and_loading([d.codes()], basis_codes, params, lam)
    return LoadingDistribution(p[0], float(lam), s[0])


def sample_personas(dist, L: int, rng_seed) -> np.ndarray:
    """Draw L distinct persona indices by sequential weighted draws.

    After each draw the chosen index is removed and the remaining weights are
    renormalised.  ``rng_seed`` may be a seed or a ``numpy.random.Generator``.
    """
    p = np.asarray(getattr(dist, "probabilities", dist), dtype=float)
    K = len(p)
    if not 1 <= L <= K:
        raise SizingError(f"cannot draw {L} distinct personas from a basis of {K}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    remaining = p.copy()
    out = np.empty(L, dtype=np.intp)
    taken = np.zeros(K, dtype=bool)
    for t in range(L):
        cum = np.cumsum(remaining)
        if cum[-1] <= 0:
            # only zero-probability personas are left: draw uniformly among them
            candidates = np.flatnonzero(~taken)
            idx = int(candidates[rng.integers(len(candidates))])
        else:
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        out[t] = idx
        taken[idx] = True
        remaining[idx] = 0.0
    return out


# --- condition checks ------------------------------------------------------


@dataclass
class ConditionReport:
    checked_pairs: int = 0
    violations: list[tuple[str, tuple]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def failed(self, condition: str) -> bool:
        return any(c == condition for c, _ in self.violations)

    def add(self, condition: str, witness: tuple) -> None:
        self.violations.append((condition, witness))


CONDITIONS = ("boundedness", "symmetry", "self_similarity", "normalization", "monotonicity")


def check_loading_conditions(similarities, probabilities, report: ConditionReport | None = None,
                             tol: float = 1e-12) -> ConditionReport:  # fmt: skip
    """Normalization and similarity/probability order agreement, row by row.

    Similarities within ``tol`` of each other count as tied and must get
    probabilities within ``tol``; otherwise the strict order must be kept
    exactly.
    """
    report = report or ConditionReport()
    s = np.atleast_2d(np.asarray(similarities, dtype=float))
    p = np.atleast_2d(np.asarray(probabilities, dtype=float))
    for i in range(s.shape[0]):
        total = p[i].sum()
        if abs(total - 1.0) > tol:
            report.add("normalization", (i, float(total)))
        ds = s[i][:, None] - s[i][None, :]
        dp = p[i][:, None] - p[i][None, :]
        tied = np.abs(ds) <= tol
        bad = np.argwhere((tied & (np.abs(dp) > tol)) | (~tied & ((ds > 0) != (dp > 0))))
        if len(bad):
            k1, k2 = bad[0]
            report.add("monotonicity", (i, int(k1), int(k2)))
    return report


def check_similarity_conditions(params: EmbeddingParams, profiles: Sequence[SocioDemographics],
                                lam: float = DEFAULT_LAMBDA, tol: float = 1e-12) -> ConditionReport:  # fmt: skip
    """Check the five similarity and loading conditions over all sampled pairs.

    The sampled profiles serve both as targets and as the persona basis for
    the normalization and monotonicity checks.
    """
    if not profiles:
        raise ValueError("need at least one profile")
    codes = np.array([d.codes() for d in profiles])
    e = embed_codes(codes, params)
    _check_nonzero(e, "profiles")
    n = len(e)
    s = np.array([[cosine_similarity(e[i], e[j]) for j in range(n)] for i in range(n)])
    report = ConditionReport(checked_pairs=n * n)
    for i, j in np.argwhere(~(np.abs(s) <= 1.0 + tol)):
        report.add("boundedness", (int(i), int(j)))
    for i, j in np.argwhere(np.abs(s - s.T) > tol):
        report.add("symmetry", (int(i), int(j)))
    for i, j in np.argwhere(s.diagonal()[:, None] < s - tol):
        report.add("self_similarity", (int(i), int(j)))
    p = softmax(s, lam)
    return check_loading_conditions(s, p, report, tol)
