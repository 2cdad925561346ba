"""Inspection of learned embeddings: labeled parameter tables, K-means clusters and a 2-D projection."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DEMOGRAPHIC_CATEGORIES, DEMOGRAPHIC_FIELDS, SocioDemographics
from .errors import SizingError
from .loading import EmbeddingParams, embed_codes

log = logging.getLogger(__name__)

_VARIABLE_NAMES = {"gender": "gender", "age_band": "age", "income_band": "income", "user_group": "group"}


def export_params(params: EmbeddingParams) -> list[dict]:
    """One row per parameter: variable, category, label and value."""
    rows = []
    for f, block in zip(DEMOGRAPHIC_FIELDS, params.blocks):
        var = _VARIABLE_NAMES[f]
        for cat, value in zip(DEMOGRAPHIC_CATEGORIES[f], block):
            rows.append({"variable": var, "category": cat, "label": f"{var}/{cat}", "value": float(value)})
    return rows


def import_params(rows: Sequence[dict]) -> EmbeddingParams:
    values = {(r["variable"], r["category"]): float(r["value"]) for r in rows}
    blocks = [[values[(_VARIABLE_NAMES[f], c)] for c in DEMOGRAPHIC_CATEGORIES[f]] for f in DEMOGRAPHIC_FIELDS]
    return EmbeddingParams(*blocks)


@dataclass
class ProfileEmbeddingTable:
    profiles: list[SocioDemographics]
    embeddings: np.ndarray
    counts: list[int]

    def __post_init__(self):
        if len(set(self.profiles)) != len(self.profiles):
            raise ValueError("profiles must be distinct")
        if any(c <= 0 for c in self.counts):
            raise ValueError("profile counts must be positive")
        self.embeddings = np.asarray(self.embeddings, dtype=float).reshape(len(self.profiles), -1)

    def __len__(self) -> int:
        return len(self.profiles)

    def normalized(self) -> np.ndarray:
        norms = np.linalg.norm(self.embeddings, axis=1, keepdims=True)
        return self.embeddings / np.where(norms > 0, norms, 1.0)


def profile_table(demographics: Sequence[SocioDemographics], params: EmbeddingParams) -> ProfileEmbeddingTable:
    """Distinct profiles in first-seen order with their embeddings and frequencies."""
    counts = Counter(demographics)
    profiles = list(dict.fromkeys(demographics))
    emb = embed_codes([d.codes() for d in profiles], params) if profiles else np.zeros((0, 4))
    return ProfileEmbeddingTable(profiles, emb, [counts[d] for d in profiles])


# --- K-means ---------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _assign(X, C):
    d2 = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, float(d2[np.arange(len(X)), labels].sum())


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from the given centers; an emptied cluster keeps its previous center."""
    C = centers.copy()
    labels, inertia = _assign(X, C)
    history = [inertia]
    for _ in range(max_iter):
        for j in range(len(C)):
            members = X[labels == j]
            if len(members):
                C[j] = members.mean(axis=0)
        new_labels, inertia = _assign(X, C)
        history.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(labels, C, inertia, history)


def kmeans(X, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    """Best of ``restarts`` k-means++ seeded Lloyd runs by inertia."""
    X = np.asarray(X, dtype=float)
    if k < 1 or len(X) < k:
        raise SizingError(f"cannot form {k} clusters from {len(X)} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        res = lloyd(X, _kmeans_pp(X, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


@dataclass
class ClusterAssignment:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    coordinates: np.ndarray
    history: list[float] = field(default_factory=list)

    def sizes(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.k).tolist()


def cluster_profiles(table: ProfileEmbeddingTable, k: int = 6, seed: int = 0, restarts: int = 10) -> ClusterAssignment:
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(table) < k:
        raise SizingError(f"need at least {k} distinct profiles, got {len(table)}")
    X = table.normalized()
    res = kmeans(X, k, seed, restarts)
    coords = project_2d(table) if len(table) >= 3 else np.zeros((len(table), 2))
    return ClusterAssignment(k, res.labels, res.centroids, res.inertia, coords, res.history)


def k_sweep(table: ProfileEmbeddingTable, ks: Sequence[int] = (2, 3, 4, 5, 6, 7, 8), seed: int = 0,
            restarts: int = 10) -> list[dict]:  # fmt: skip
    """Inertia and mean silhouette per k, for elbow or silhouette selection."""
    X = table.normalized()
    out = []
    for k in ks:
        if k > len(table):
            break
        res = kmeans(X, k, seed, restarts)
        out.append({"k": int(k), "inertia": res.inertia, "silhouette": silhouette(X, res.labels)})
    return out


def silhouette(X: np.ndarray, labels: np.ndarray) -> float:
    D = np.sqrt(np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2))
    ks = np.unique(labels)
    if len(ks) < 2:
        return 0.0
    vals = []
    for i in range(len(X)):
        same = labels == labels[i]
        if same.sum() <= 1:
            vals.append(0.0)
            continue
        a = D[i, same].sum() / (same.sum() - 1)
        b = min(D[i, labels == c].mean() for c in ks if c != labels[i])
        vals.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return float(np.mean(vals))


# --- projection ------------------------------------------------------------


def project_2d(table_or_matrix) -> np.ndarray:
    """Top-2 principal-component scores of the unit-normalized embeddings.

    Each component's sign is fixed so its first nonzero loading is positive.
    A rank-1 input yields a zero second coordinate and logs a warning.
    """
    X = table_or_matrix.normalized() if isinstance(table_or_matrix, ProfileEmbeddingTable) else np.asarray(table_or_matrix, float)
    if len(X) < 3:
        raise SizingError("projection needs at least 3 profiles")
    Xc = X - X.mean(axis=0)
    _, sv, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = (sv[0] if len(sv) else 0.0) * max(Xc.shape) * np.finfo(float).eps
    rank = int(np.sum(sv > tol))
    comps = np.zeros((2, X.shape[1]))
    for j in range(min(2, rank)):
        v = vt[j]
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        if len(nz) and v[nz[0]] < 0:
            v = -v
        comps[j] = v
    if rank < 2:
        log.warning("embedding matrix has rank %d; projection is degenerate", rank)
    return Xc @ comps.T
