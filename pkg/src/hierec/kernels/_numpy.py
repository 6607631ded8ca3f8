"""Pure-numpy reference path for the hot evaluation loops."""

import numpy as np


def impression_metrics(labels, scores, offsets, ks, tie_half):
    n = len(offsets) - 1
    auc = np.full(n, np.nan)
    mrr = np.full(n, np.nan)
    ndcg = np.full((n, len(ks)), np.nan)
    for i in range(n):
        y = labels[offsets[i]:offsets[i + 1]]
        s = scores[offsets[i]:offsets[i + 1]]
        pos = y == 1
        n_pos = int(pos.sum())
        if n_pos == 0:
            continue
        n_neg = len(y) - n_pos
        if n_neg > 0:
            diff = s[pos][:, None] - s[~pos][None, :]
            wins = (diff > 0).sum()
            if tie_half:
                wins = wins + 0.5 * (diff == 0).sum()
            auc[i] = wins / (n_pos * n_neg)
        order = np.argsort(-s, kind="stable")
        ranked = y[order]
        ranks = np.flatnonzero(ranked == 1) + 1
        mrr[i] = np.mean(1.0 / ranks)
        disc = 1.0 / np.log2(np.arange(2, len(y) + 2))
        ideal = disc[:n_pos].sum()
        gains = (2.0 ** ranked - 1.0) * disc
        for j, k in enumerate(ks):
            ndcg[i, j] = gains[:k].sum() / ideal
    return auc, mrr, ndcg


def cumulative_ilad(vectors):
    x = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    unit = np.divide(x, norms[:, None], out=np.zeros_like(x), where=norms[:, None] > 0)
    gram = unit @ unit.T
    # sum of similarities to earlier items, per item
    upper = np.triu(gram, k=1).sum(axis=0)
    sim = np.cumsum(upper)
    k = np.arange(1, len(x) + 1, dtype=np.float64)
    pairs = k * (k - 1) / 2
    out = np.full(len(x), np.nan)
    ok = pairs > 0
    out[ok] = 1.0 - sim[ok] / pairs[ok]
    return out


def round_robin_merge(rankings, k):
    n_channels, pool = rankings.shape
    taken = np.zeros(rankings.max(initial=-1) + 1, dtype=bool)
    cursor = np.zeros(n_channels, dtype=np.int64)
    out = []
    while len(out) < k:
        progressed = False
        for c in range(n_channels):
            if len(out) >= k:
                break
            while cursor[c] < pool and taken[rankings[c, cursor[c]]]:
                cursor[c] += 1
            if cursor[c] < pool:
                item = rankings[c, cursor[c]]
                taken[item] = True
                out.append(item)
                cursor[c] += 1
                progressed = True
        if not progressed:
            break
    return np.asarray(out, dtype=np.int64)
