"""numba-compiled versions of the evaluation loops; same contracts as ``_numpy``."""

import numpy as np
from numba import njit


@njit(cache=True)
def impression_metrics(labels, scores, offsets, ks, tie_half):
    n = len(offsets) - 1
    auc = np.full(n, np.nan)
    mrr = np.full(n, np.nan)
    ndcg = np.full((n, len(ks)), np.nan)
    for i in range(n):
        lo = offsets[i]
        hi = offsets[i + 1]
        m = hi - lo
        n_pos = 0
        for a in range(lo, hi):
            if labels[a] == 1:
                n_pos += 1
        if n_pos == 0:
            continue
        n_neg = m - n_pos
        if n_neg > 0:
            wins = 0.0
            for a in range(lo, hi):
                if labels[a] != 1:
                    continue
                for b in range(lo, hi):
                    if labels[b] == 1:
                        continue
                    if scores[a] > scores[b]:
                        wins += 1.0
                    elif tie_half and scores[a] == scores[b]:
                        wins += 0.5
            auc[i] = wins / (n_pos * n_neg)
        order = np.argsort(-scores[lo:hi], kind="mergesort")
        rr = 0.0
        ideal = 0.0
        for r in range(n_pos):
            ideal += 1.0 / np.log2(r + 2.0)
        for j in range(len(ks)):
            ndcg[i, j] = 0.0
        for r in range(m):
            if labels[lo + order[r]] == 1:
                rr += 1.0 / (r + 1.0)
                g = 1.0 / np.log2(r + 2.0)
                for j in range(len(ks)):
                    if r < ks[j]:
                        ndcg[i, j] += g
        mrr[i] = rr / n_pos
        for j in range(len(ks)):
            ndcg[i, j] /= ideal
    return auc, mrr, ndcg


@njit(cache=True)
def cumulative_ilad(vectors):
    n, d = vectors.shape
    unit = np.zeros((n, d))
    for i in range(n):
        s = 0.0
        for c in range(d):
            s += vectors[i, c] * vectors[i, c]
        if s > 0.0:
            inv = 1.0 / np.sqrt(s)
            for c in range(d):
                unit[i, c] = vectors[i, c] * inv
    out = np.full(n, np.nan)
    # running sum of earlier unit vectors: the new pairs of item j add u_j . prefix
    prefix = np.zeros(d)
    total = 0.0
    for j in range(n):
        dot = 0.0
        for c in range(d):
            dot += unit[j, c] * prefix[c]
            prefix[c] += unit[j, c]
        total += dot
        if j >= 1:
            out[j] = 1.0 - total / (j * (j + 1) / 2.0)
    return out


@njit(cache=True)
def round_robin_merge(rankings, k):
    n_channels, pool = rankings.shape
    size = 0
    for c in range(n_channels):
        for p in range(pool):
            if rankings[c, p] + 1 > size:
                size = rankings[c, p] + 1
    taken = np.zeros(size, dtype=np.bool_)
    cursor = np.zeros(n_channels, dtype=np.int64)
    out = np.empty(k, dtype=np.int64)
    n = 0
    while n < k:
        progressed = False
        for c in range(n_channels):
            if n >= k:
                break
            while cursor[c] < pool and taken[rankings[c, cursor[c]]]:
                cursor[c] += 1
            if cursor[c] < pool:
                item = rankings[c, cursor[c]]
                taken[item] = True
                out[n] = item
                n += 1
                cursor[c] += 1
                progressed = True
        if not progressed:
            break
    return out[:n]
