"""NumPy implementations of the numeric kernels.

These are the reference versions; ``_kernels.pyx`` mirrors them loop for
loop and must agree to floating-point rounding.
"""

from __future__ import annotations

import numpy as np


def _normalize(e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", e, e))
    return e / norms[:, None], norms


def loading_matrix(e_rec: np.ndarray, e_basis: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Cosine similarities (N, K) and row-wise softmax(lam * s) loading probabilities."""
    a, _ = _normalize(np.asarray(e_rec, dtype=float))
    b, _ = _normalize(np.asarray(e_basis, dtype=float))
    s = np.clip(a @ b.T, -1.0, 1.0)
    z = lam * s
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return s, p


def weighted_loglik_grad(e_rec, e_basis, weights, lam):
    """Value and embedding gradients of sum_ik W_ik * log P_ik.

    Returns ``(value, grad_rec, grad_basis)`` with gradient arrays shaped like
    the embedding inputs.
    """
    e_rec = np.asarray(e_rec, dtype=float)
    e_basis = np.asarray(e_basis, dtype=float)
    w = np.asarray(weights, dtype=float)
    a, na = _normalize(e_rec)
    b, nb = _normalize(e_basis)
    s = np.clip(a @ b.T, -1.0, 1.0)
    z = lam * s
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    tot = ez.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(tot)
    p = ez / tot
    wsum = w.sum(axis=1)
    value = float(np.sum(w * logp))
    g = lam * (w - wsum[:, None] * p)
    gs = g * s
    grad_rec = (g @ b - gs.sum(axis=1)[:, None] * a) / na[:, None]
    grad_basis = (g.T @ a - gs.sum(axis=0)[:, None] * b) / nb[:, None]
    return value, grad_rec, grad_basis
