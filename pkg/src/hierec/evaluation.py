"""Ranking metrics, impression-level evaluation, and the recall/diversity task."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats

from . import kernels
from .config import EvalConfig, MatchConfig, RecallConfig
from .data import Catalog, Impression, InterestIndex, build_interest_index
from .model import HieRec, make_batch

log = logging.getLogger(__name__)


def _single(labels, scores, ks=(5, 10), tie_half=False):
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores must have the same length")
    offsets = np.array([0, len(labels)])
    return kernels.impression_metrics(labels, scores, offsets, ks, tie_half)


def auc(labels: Sequence[int], scores: Sequence[float], tie_half: bool = False) -> float:
    """Fraction of (positive, negative) pairs ordered correctly; ties count 0 unless ``tie_half``."""
    value = _single(labels, scores, tie_half=tie_half)[0][0]
    if np.isnan(value):
        raise ValueError("AUC needs at least one positive and one negative")
    return float(value)


def mrr(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Mean reciprocal rank of the positives; ties keep the input order."""
    value = _single(labels, scores)[1][0]
    if np.isnan(value):
        raise ValueError("MRR needs at least one positive")
    return float(value)


def ndcg_at_k(labels: Sequence[int], scores: Sequence[float], k: int) -> float:
    """DCG@k over the ideal DCG of all positives (the normaliser is not capped at k)."""
    value = _single(labels, scores, ks=(k,))[2][0, 0]
    if np.isnan(value):
        raise ValueError("nDCG needs at least one positive")
    return float(value)


@dataclass
class MetricsReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    n_impressions: int
    n_excluded_auc: int = 0
    # impressions with more positives than k, where nDCG@k cannot reach 100
    n_ndcg_capped: dict[str, int] = field(default_factory=dict)
    per_impression: dict[str, list[float]] = field(default_factory=dict, repr=False)

    def headline(self) -> dict[str, float]:
        return {"auc": self.auc, "mrr": self.mrr, "ndcg5": self.ndcg5, "ndcg10": self.ndcg10}

    def to_dict(self, per_impression: bool = False) -> dict:
        d = {
            **self.headline(),
            "n_impressions": self.n_impressions,
            "n_excluded_auc": self.n_excluded_auc,
            "n_ndcg_capped": self.n_ndcg_capped,
        }
        if per_impression:
            d["per_impression"] = self.per_impression
        return d


def metrics_report(
    labels: Sequence[np.ndarray], scores: Sequence[np.ndarray], tie_half: bool = False, ks=(5, 10)
) -> MetricsReport:
    """Mean metrics (x100) over impressions; impressions without a positive are excluded."""
    lengths = np.array([len(y) for y in labels], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    flat_y = np.concatenate(labels) if len(labels) else np.zeros(0, dtype=np.int64)
    flat_s = np.concatenate(scores) if len(scores) else np.zeros(0)
    a, m, n = kernels.impression_metrics(flat_y, flat_s, offsets, tuple(ks), tie_half)
    has_pos = ~np.isnan(m)
    if not has_pos.any():
        raise ValueError("no impression has a positive label")
    auc_ok = ~np.isnan(a)
    n_pos = np.array([int(np.sum(y)) for y in labels])
    capped = {f"ndcg{k}": int(np.sum(n_pos[has_pos] > k)) for k in ks}
    col = {k: j for j, k in enumerate(ks)}

    def mean(x):
        return float(np.mean(x) * 100.0)

    return MetricsReport(
        auc=mean(a[auc_ok]) if auc_ok.any() else float("nan"),
        mrr=mean(m[has_pos]),
        ndcg5=mean(n[has_pos, col[5]]) if 5 in col else float("nan"),
        ndcg10=mean(n[has_pos, col[10]]) if 10 in col else float("nan"),
        n_impressions=int(has_pos.sum()),
        n_excluded_auc=int((~auc_ok).sum()),
        n_ndcg_capped=capped,
        per_impression={
            "auc": a.tolist(),
            "mrr": m.tolist(),
            **{f"ndcg{k}": n[:, j].tolist() for k, j in col.items()},
        },
    )


@dataclass
class ImpressionScores:
    """Cached per-candidate score components of a set of impressions."""

    impression_ids: list[str]
    news_ids: list[list[str]]
    labels: list[np.ndarray]
    o_g: list[np.ndarray]
    o_t: list[np.ndarray]
    o_s: list[np.ndarray]
    o_t_raw: list[np.ndarray]
    o_s_raw: list[np.ndarray]
    w_t: list[np.ndarray]
    w_s: list[np.ndarray]

    def combined(self, config: MatchConfig) -> list[np.ndarray]:
        from .matching import combine_scores

        out = []
        for g, t, s in zip(self.o_g, self.o_t, self.o_s):
            o = combine_scores(s, t, g, config)
            out.append(np.zeros_like(g) if isinstance(o, float) else o)
        return out


@torch.no_grad()
def score_impressions(
    model: HieRec,
    catalog: Catalog,
    impressions: Sequence[Impression],
    batch_size: int = 256,
    indices: Sequence[InterestIndex] | None = None,
) -> ImpressionScores:
    """Encode the catalog once, build each impression's tree once, score all candidates."""
    was_training = model.training
    model.eval()
    news = model.encode_catalog(catalog)
    max_history = model.cfg.max_history
    if indices is None:
        indices = [build_interest_index(imp.history, catalog, max_history) for imp in impressions]
    cols = {k: [] for k in ("o_g", "o_t", "o_s", "o_t_raw", "o_s_raw", "w_t", "w_s")}
    for lo in range(0, len(impressions), batch_size):
        chunk = impressions[lo:lo + batch_size]
        batch = make_batch(indices[lo:lo + batch_size], [imp.candidate_ids for imp in chunk], catalog,
                           dtype=model.dtype)
        comp, _ = model(batch, catalog, news_matrix=news)
        parts = {
            "o_g": comp.o_g, "o_t": comp.o_t, "o_s": comp.o_s, "o_t_raw": comp.o_t_raw,
            "o_s_raw": comp.o_s_raw, "w_t": comp.w_t, "w_s": comp.w_s,
        }
        splits = np.cumsum(batch.n_candidates)[:-1]
        for key, t in parts.items():
            cols[key].extend(np.split(t.double().numpy(), splits))
    model.train(was_training)
    return ImpressionScores(
        impression_ids=[imp.impression_id for imp in impressions],
        news_ids=[imp.candidate_ids for imp in impressions],
        labels=[imp.labels for imp in impressions],
        **cols,
    )


def evaluate_ranking(
    model: HieRec,
    catalog: Catalog,
    impressions: Sequence[Impression],
    match: MatchConfig,
    config: EvalConfig | None = None,
) -> MetricsReport:
    config = config or EvalConfig()
    cached = score_impressions(model, catalog, impressions, config.batch_size)
    return metrics_report(cached.labels, cached.combined(match), config.tie_half, tuple(config.ndcg_ks))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> dict[str, float]:
    """Paired t-test over per-impression values (NaN pairs dropped)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ok = ~(np.isnan(a) | np.isnan(b))
    res = stats.ttest_rel(a[ok], b[ok])
    return {"t": float(res.statistic), "p": float(res.pvalue), "n": int(ok.sum())}


# ---- recall and diversity ---------------------------------------------------


def recall_rate(recalled, clicked) -> float:
    clicked = set(clicked)
    if not clicked:
        raise ValueError("recall rate needs at least one clicked item")
    return len(set(recalled) & clicked) / len(clicked)


def ilad(vectors: np.ndarray) -> float:
    """Mean pairwise (1 - cosine similarity); a zero vector has similarity 0 to everything."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) < 2:
        raise ValueError("ILAD needs at least two items")
    return float(kernels.cumulative_ilad(vectors)[-1])


def _ranked(scores: np.ndarray) -> np.ndarray:
    return np.argsort(-scores, axis=-1, kind="stable")


def single_channel_recall(user_vector: np.ndarray, pool: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` pool rows by dot product with one interest vector."""
    return _ranked(pool @ user_vector)[:k]


def multi_channel_recall(channels: np.ndarray, pool: np.ndarray, k: int) -> tuple[np.ndarray, bool]:
    """Equal round-robin over per-channel rankings, skipping duplicates.

    ``channels`` is (C, D), one interest vector per channel in channel order.
    Returns pool rows and a flag set when the pool had fewer than ``k`` items.
    """
    channels = np.atleast_2d(np.asarray(channels, dtype=np.float64))
    pool = np.asarray(pool, dtype=np.float64)
    rankings = _ranked(channels @ pool.T)
    out = kernels.round_robin_merge(rankings, min(k, len(pool)))
    return out, len(pool) < k


@dataclass
class RecallReport:
    ks: list[int]
    methods: dict[str, dict[str, list[float]]]
    n_impressions: int
    mean_channels: float
    n_short_pool: int = 0

    def to_dict(self) -> dict:
        return {
            "ks": self.ks,
            "methods": self.methods,
            "n_impressions": self.n_impressions,
            "mean_channels": self.mean_channels,
            "n_short_pool": self.n_short_pool,
        }


@torch.no_grad()
def recall_curves(
    model: HieRec,
    catalog: Catalog,
    impressions: Sequence[Impression],
    config: RecallConfig | None = None,
) -> RecallReport:
    """Recall rate and ILAD at every K for multi-channel (subtopic) and single-vector recall.

    Values are macro averages over impressions with at least one click and a
    non-empty history. Already-read history items are removed from the pool.
    """
    config = config or RecallConfig()
    ks = sorted(config.ks)
    k_max = ks[-1]
    was_training = model.training
    model.eval()
    news = model.encode_catalog(catalog).double().numpy()

    usable = [imp for imp in impressions if imp.positives and imp.history]
    if config.max_impressions is not None:
        usable = usable[: config.max_impressions]
    acc = {m: {"recall": [], "ilad": []} for m in ("multi_channel", "single_vector")}
    channels_used = []
    short = 0
    for imp in usable:
        index = build_interest_index(imp.history, catalog, model.cfg.max_history)
        if index.M == 0:
            continue
        batch = make_batch([index], [[]], catalog, dtype=model.dtype)
        trees = model.trees(batch, torch.as_tensor(news[batch.news_rows], dtype=model.dtype))
        u_s = trees.u_s.double().numpy()
        u_g = trees.u_g[0].double().numpy()

        if config.pool == "catalog":
            keep = np.ones(len(catalog), dtype=bool)
            keep[catalog.rows(index.news_ids)] = False
            pool_rows = np.flatnonzero(keep)
        else:
            pool_rows = catalog.rows(imp.candidate_ids)
        pool = news[pool_rows]
        clicked = set(catalog.rows(imp.positives).tolist())

        if len(u_s) == 0:
            multi, flag = multi_channel_recall(u_g[None], pool, k_max)
            channels_used.append(1)
        else:
            multi, flag = multi_channel_recall(u_s, pool, k_max)
            channels_used.append(len(u_s))
        single = single_channel_recall(u_g, pool, k_max)
        short += int(flag)

        for name, picked in (("multi_channel", multi), ("single_vector", single)):
            rows = pool_rows[picked]
            cum = kernels.cumulative_ilad(news[rows])
            hit = np.cumsum(np.isin(rows, list(clicked)))
            acc[name]["recall"].append(
                [hit[min(k, len(rows)) - 1] / len(clicked) for k in ks]
            )
            acc[name]["ilad"].append([cum[min(k, len(rows)) - 1] for k in ks])
    model.train(was_training)

    methods = {
        name: {
            "recall": np.mean(v["recall"], axis=0).tolist() if v["recall"] else [],
            "ilad": np.nanmean(v["ilad"], axis=0).tolist() if v["ilad"] else [],
        }
        for name, v in acc.items()
    }
    return RecallReport(
        ks=ks,
        methods=methods,
        n_impressions=len(channels_used),
        mean_channels=float(np.mean(channels_used)) if channels_used else 0.0,
        n_short_pool=short,
    )
