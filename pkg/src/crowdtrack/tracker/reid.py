"""Appearance-embedding utilities: gallery distance and feature combination."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ValidationError

_ZERO_NORM = 1e-12


def _normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if not np.isfinite(n) or n <= _ZERO_NORM:
        raise ValidationError("cannot normalize a zero combination of features")
    return v / n


def cosine_gallery_distance(gallery, e) -> float:
    """Smallest cosine distance ``1 - <g, e>`` between a query and a gallery."""
    G = np.asarray(gallery, dtype=np.float64)
    if G.size == 0:
        raise ValidationError("gallery is empty")
    G = G.reshape(-1, G.shape[-1])
    return float(np.min(1.0 - G @ np.asarray(e, dtype=np.float64)))


def cosine_distance_matrix(galleries: Sequence[np.ndarray], queries: np.ndarray) -> np.ndarray:
    """Row i, col j: ``cosine_gallery_distance(galleries[i], queries[j])``."""
    Q = np.asarray(queries, dtype=np.float64)
    out = np.empty((len(galleries), len(Q)))
    for i, g in enumerate(galleries):
        if len(g) == 0:
            raise ValidationError("gallery is empty")
        out[i] = np.min(1.0 - np.asarray(g) @ Q.T, axis=0)
    return out


def combine_flip(e, e_flip) -> np.ndarray:
    """Average an embedding with the one from the horizontally mirrored crop."""
    a = np.asarray(e, dtype=np.float64)
    b = np.asarray(e_flip, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch {a.shape} vs {b.shape}")
    return _normalize(0.5 * a + 0.5 * b)


def combine_scales(es, ws=None) -> np.ndarray:
    """Weighted sum of embeddings from models trained at different input scales.

    Weights default to uniform.
    """
    E = np.asarray(es, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] == 0:
        raise ValidationError("need a non-empty list of equal-length vectors")
    w = np.full(E.shape[0], 1.0 / E.shape[0]) if ws is None else np.asarray(ws, dtype=np.float64)
    if w.shape != (E.shape[0],):
        raise ValidationError("one weight per embedding is required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError("weights must be nonnegative and sum to 1")
    return _normalize(w @ E)
