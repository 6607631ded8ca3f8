"""Candidate scoring against every level of the interest tree."""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import asdict, dataclass
from typing import IO

import torch

from .config import MatchConfig
from .data import InterestIndex, NewsArticle
from .hierarchy import InterestTree
from .news_encoder import encode_news


@dataclass
class ScoreBreakdown:
    o_g: float
    o_t_raw: float
    o_s_raw: float
    w_t: float
    w_s: float
    o_t: float
    o_s: float
    o: float


def user_level_score(candidate: torch.Tensor, tree: InterestTree) -> torch.Tensor:
    return candidate @ tree.u_g


def topic_level_score(candidate: torch.Tensor, topic_id: int, tree: InterestTree, index: InterestIndex):
    """``(o_t_raw, w_t, o_t)``; all zero when the topic was never clicked."""
    rep = tree.topic_reps.get(topic_id)
    if rep is None:
        zero = candidate.new_zeros(())
        return zero, 0.0, zero
    raw = candidate @ rep
    w = index.topic_ratio(topic_id)
    return raw, w, raw * w


def subtopic_level_score(
    candidate: torch.Tensor, subtopic_id: int, tree: InterestTree, index: InterestIndex
):
    rep = tree.subtopic_reps.get(subtopic_id)
    if rep is None:
        zero = candidate.new_zeros(())
        return zero, 0.0, zero
    raw = candidate @ rep
    w = index.subtopic_ratio(subtopic_id)
    return raw, w, raw * w


def combine_scores(o_s, o_t, o_g, config: MatchConfig):
    """o = lambda_s o_s + lambda_t o_t + (1 - lambda_s - lambda_t) o_g.

    Masked components are dropped without renormalising the other weights.
    Works on floats and tensors alike.
    """
    total = 0.0
    if config.use_subtopic:
        total = total + config.lambda_s * o_s
    if config.use_topic:
        total = total + config.lambda_t * o_t
    if config.use_user:
        total = total + config.lambda_g * o_g
    return total


def score_candidate(
    article: NewsArticle,
    tree: InterestTree,
    index: InterestIndex,
    encoder: torch.nn.Module,
    config: MatchConfig,
) -> ScoreBreakdown:
    with torch.no_grad():
        n_c = encode_news(article, encoder, dropout_active=False)
        o_g = user_level_score(n_c, tree)
        o_t_raw, w_t, o_t = topic_level_score(n_c, article.topic_id, tree, index)
        o_s_raw, w_s, o_s = subtopic_level_score(n_c, article.subtopic_id, tree, index)
        o = combine_scores(o_s, o_t, o_g, config)
    return ScoreBreakdown(
        o_g=float(o_g), o_t_raw=float(o_t_raw), o_s_raw=float(o_s_raw), w_t=float(w_t),
        w_s=float(w_s), o_t=float(o_t), o_s=float(o_s), o=float(o),
    )


@dataclass
class Components:
    """Per-candidate score components of a batch, each shaped like the candidate grid."""

    o_g: torch.Tensor
    o_t_raw: torch.Tensor
    o_s_raw: torch.Tensor
    w_t: torch.Tensor
    w_s: torch.Tensor

    @property
    def o_t(self) -> torch.Tensor:
        return self.o_t_raw * self.w_t

    @property
    def o_s(self) -> torch.Tensor:
        return self.o_s_raw * self.w_s

    def combine(self, config: MatchConfig) -> torch.Tensor:
        out = combine_scores(self.o_s, self.o_t, self.o_g, config)
        if isinstance(out, float):
            return torch.zeros_like(self.o_g)
        return out


def batch_components(
    cand: torch.Tensor,
    cand_user: torch.Tensor,
    cand_group: torch.Tensor,
    cand_topic_group: torch.Tensor,
    u_g: torch.Tensor,
    u_t: torch.Tensor,
    u_s: torch.Tensor,
    group_ratio: torch.Tensor,
    topic_ratio: torch.Tensor,
) -> Components:
    """Vectorised scoring; ``cand_group``/``cand_topic_group`` are -1 for unclicked levels."""
    o_g = (cand * u_g[cand_user]).sum(-1)

    def level(rows, reps, ratios):
        hit = rows >= 0
        safe = rows.clamp(min=0)
        if reps.shape[0] == 0:
            zero = torch.zeros_like(o_g)
            return zero, zero
        raw = (cand * reps[safe]).sum(-1) * hit.to(cand.dtype)
        w = ratios[safe] * hit.to(ratios.dtype)
        return raw, w

    o_t_raw, w_t = level(cand_topic_group, u_t, topic_ratio)
    o_s_raw, w_s = level(cand_group, u_s, group_ratio)
    return Components(o_g, o_t_raw, o_s_raw, w_t, w_s)


def breakdowns(comp: Components, config: MatchConfig) -> list[ScoreBreakdown]:
    o = comp.combine(config)
    cols = [comp.o_g, comp.o_t_raw, comp.o_s_raw, comp.w_t, comp.w_s, comp.o_t, comp.o_s, o]
    flat = [c.detach().reshape(-1).tolist() for c in cols]
    return [ScoreBreakdown(*row) for row in zip(*flat)]


def write_breakdowns_jsonl(
    rows: Iterable[tuple[str, str, int, ScoreBreakdown]], fh: IO[str]
) -> None:
    """One JSON object per (impression, news, label, breakdown)."""
    for imp_id, news_id, label, bd in rows:
        rec = {"impression_id": imp_id, "news_id": news_id, "label": label, **asdict(bd)}
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
