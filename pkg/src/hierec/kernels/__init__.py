"""Hot loops of evaluation and recall.

Two interchangeable backends share one contract: numba-compiled kernels
(default) and a pure-numpy path. ``HIEREC_KERNELS=numpy`` in the
environment selects the latter at import time; so does a missing numba.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy

BACKEND = os.environ.get("HIEREC_KERNELS", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"HIEREC_KERNELS must be 'numba' or 'numpy', got {BACKEND!r}")

if BACKEND == "numba":
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a declared dependency
        BACKEND = "numpy"
        _impl = _numpy
else:
    _impl = _numpy


def impression_metrics(
    labels: np.ndarray,
    scores: np.ndarray,
    offsets: np.ndarray,
    ks: tuple[int, ...] = (5, 10),
    tie_half: bool = False,
    backend: str | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """AUC, MRR and nDCG@k for impressions stored back to back.

    Impression ``i`` occupies ``labels[offsets[i]:offsets[i+1]]``. Undefined
    values (no positive, or no negative for AUC) come back as NaN.
    """
    impl = _pick(backend)
    return impl.impression_metrics(
        np.ascontiguousarray(labels, dtype=np.int64),
        np.ascontiguousarray(scores, dtype=np.float64),
        np.ascontiguousarray(offsets, dtype=np.int64),
        np.asarray(ks, dtype=np.int64),
        bool(tie_half),
    )


def cumulative_ilad(vectors: np.ndarray, backend: str | None = None) -> np.ndarray:
    """ILAD of every prefix of a ranked list; entry ``k-1`` covers the first ``k`` items."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError("vectors must be 2-d")
    return _pick(backend).cumulative_ilad(vectors)


def round_robin_merge(rankings: np.ndarray, k: int, backend: str | None = None) -> np.ndarray:
    """Interleave per-channel rankings, skipping items already taken, until ``k`` are chosen."""
    rankings = np.ascontiguousarray(rankings, dtype=np.int64)
    if rankings.ndim != 2:
        raise ValueError("rankings must be channels x pool")
    return _pick(backend).round_robin_merge(rankings, int(k))


def _pick(backend: str | None):
    if backend is None:
        return _impl
    if backend == "numpy":
        return _numpy
    if backend == "numba":
        from . import _numba

        return _numba
    raise ValueError(f"unknown backend {backend!r}")
