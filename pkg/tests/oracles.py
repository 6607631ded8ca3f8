"""Brute-force reference implementations used only by the tests."""

import itertools
import math


def auc(labels, scores, tie_half=False):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        if p > n:
            total += 1.0
        elif p == n and tie_half:
            total += 0.5
    return total / (len(pos) * len(neg))


def ranking(scores):
    """Candidate indices in descending score order; ties keep the input order."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def mrr(labels, scores):
    order = ranking(scores)
    ranks = [order.index(i) + 1 for i, y in enumerate(labels) if y == 1]
    return sum(1.0 / r for r in ranks) / len(ranks)


def ndcg(labels, scores, k):
    order = ranking(scores)
    dcg = sum((2 ** labels[i] - 1) / math.log2(1 + rank) for rank, i in enumerate(order[:k], 1))
    ideal = sum(1.0 / math.log2(1 + i) for i in range(1, sum(labels) + 1))
    return dcg / ideal


def ilad(vectors):
    def cos(a, b):
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        if na == 0 or nb == 0:
            return 0.0
        return sum(x * y for x, y in zip(a, b)) / (na * nb)

    pairs = list(itertools.combinations(range(len(vectors)), 2))
    return sum(1 - cos(vectors[i], vectors[j]) for i, j in pairs) / len(pairs)


def round_robin(rankings, k):
    out, seen = [], set()
    cursors = [0] * len(rankings)
    while len(out) < k:
        moved = False
        for c, ranked in enumerate(rankings):
            if len(out) == k:
                break
            while cursors[c] < len(ranked) and ranked[cursors[c]] in seen:
                cursors[c] += 1
            if cursors[c] < len(ranked):
                out.append(ranked[cursors[c]])
                seen.add(ranked[cursors[c]])
                moved = True
        if not moved:
            break
    return out
