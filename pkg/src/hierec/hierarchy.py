"""Three-level interest tree: subtopic, topic and user interest vectors.

Trees of many users are computed together on a flat layout: every click,
subtopic group and topic group of the batch is one row, and attention
softmaxes run per segment. No padding to tree-shape caps is needed.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .data import Catalog, InterestIndex

MAX_COUNT = 50


def segment_softmax(logits: torch.Tensor, segments: torch.Tensor, n_segments: int) -> torch.Tensor:
    """Softmax of ``logits`` within each segment id."""
    seg_max = torch.full((n_segments,), -torch.inf, dtype=logits.dtype, device=logits.device)
    seg_max = seg_max.scatter_reduce(0, segments, logits.detach(), reduce="amax", include_self=True)
    e = torch.exp(logits - seg_max[segments])
    total = torch.zeros(n_segments, dtype=logits.dtype, device=logits.device).index_add(0, segments, e)
    return e / total[segments]


def segment_sum(values: torch.Tensor, segments: torch.Tensor, n_segments: int) -> torch.Tensor:
    out = values.new_zeros((n_segments,) + values.shape[1:])
    return out.index_add(0, segments, values)


class HierarchyParams(nn.Module):
    def __init__(self, n_topics: int, n_subtopics: int, cfg: ModelConfig):
        super().__init__()
        d, c = cfg.news_dim, cfg.count_dim
        self.subtopic_embedding = nn.Embedding(n_subtopics, d)
        self.topic_embedding = nn.Embedding(n_topics, d)
        self.subtopic_count_embedding = nn.Embedding(MAX_COUNT + 1, c)
        self.topic_count_embedding = nn.Embedding(MAX_COUNT + 1, c)
        for emb in (self.subtopic_embedding, self.topic_embedding,
                    self.subtopic_count_embedding, self.topic_count_embedding):
            nn.init.uniform_(emb.weight, -0.1, 0.1)
        # a bias would shift every logit of a softmax equally, so the scorers have none
        self.phi_s = nn.Linear(d, 1, bias=False)
        self.phi_t = nn.Linear(d + c, 1, bias=False)
        self.phi_g = nn.Linear(d + c, 1, bias=False)


def _clip(counts: torch.Tensor) -> torch.Tensor:
    return counts.clamp(max=MAX_COUNT)


def subtopic_interest(
    click_vectors: torch.Tensor, subtopic_id: int, params: HierarchyParams
) -> torch.Tensor:
    """u^s = sum_k gamma_k n_k + s, gamma = softmax(phi_s(n_k))."""
    if click_vectors.shape[0] < 1:
        raise ValueError("a click group cannot be empty")
    gamma = torch.softmax(params.phi_s(click_vectors).squeeze(-1), dim=0)
    c = gamma @ click_vectors
    return c + params.subtopic_embedding.weight[subtopic_id]


def topic_interest(
    subtopic_reps: torch.Tensor, subtopic_counts: Sequence[int], topic_id: int, params: HierarchyParams
) -> torch.Tensor:
    """u^t = sum_j beta_j u^s_j + t, beta from phi_t over [u^s_j; r(count_j)]."""
    if subtopic_reps.shape[0] < 1:
        raise ValueError("a topic needs at least one subtopic")
    counts = _clip(torch.as_tensor(subtopic_counts, dtype=torch.long))
    v = torch.cat([subtopic_reps, params.subtopic_count_embedding(counts)], dim=-1)
    beta = torch.softmax(params.phi_t(v).squeeze(-1), dim=0)
    return beta @ subtopic_reps + params.topic_embedding.weight[topic_id]


def user_interest(
    topic_reps: torch.Tensor, topic_counts: Sequence[int], params: HierarchyParams
) -> tuple[torch.Tensor, bool]:
    """Returns ``(u^g, cold_start)``; an empty topic list gives a zero vector."""
    if topic_reps.shape[0] == 0:
        d = params.topic_embedding.embedding_dim
        return topic_reps.new_zeros(d), True
    counts = _clip(torch.as_tensor(topic_counts, dtype=torch.long))
    v = torch.cat([topic_reps, params.topic_count_embedding(counts)], dim=-1)
    alpha = torch.softmax(params.phi_g(v).squeeze(-1), dim=0)
    return alpha @ topic_reps, False


@dataclass
class InterestTree:
    u_g: torch.Tensor
    topic_reps: dict[int, torch.Tensor] = field(default_factory=dict)
    subtopic_reps: dict[int, torch.Tensor] = field(default_factory=dict)
    cold_start: bool = False


@dataclass
class TreeLayout:
    """Flat description of the interest trees of a batch of users.

    ``click_pos`` indexes rows of the batch's news matrix. Groups and topics
    are listed user by user in interest-index order.
    """

    n_users: int
    click_pos: torch.Tensor
    click_group: torch.Tensor
    group_subtopic: torch.Tensor
    group_count: torch.Tensor
    group_ratio: torch.Tensor
    group_topic: torch.Tensor
    topic_id: torch.Tensor
    topic_count: torch.Tensor
    topic_ratio: torch.Tensor
    topic_user: torch.Tensor
    # per-user lookups used by matching: (user, subtopic id) -> group row, etc.
    group_of: list[dict[int, int]]
    topic_of: list[dict[int, int]]

    @property
    def n_groups(self) -> int:
        return int(self.group_subtopic.shape[0])

    @property
    def n_topic_groups(self) -> int:
        return int(self.topic_id.shape[0])


def tree_layout(
    indices: Sequence[InterestIndex], news_pos: dict[str, int], dtype=torch.float32
) -> TreeLayout:
    click_pos, click_group = [], []
    g_sub, g_cnt, g_ratio, g_topic = [], [], [], []
    t_id, t_cnt, t_ratio, t_user = [], [], [], []
    group_of, topic_of = [], []
    for u, index in enumerate(indices):
        gmap, tmap = {}, {}
        for tg in index.topics:
            ti = len(t_id)
            tmap[tg.topic_id] = ti
            t_id.append(tg.topic_id)
            t_cnt.append(tg.click_count)
            t_ratio.append(tg.ratio)
            t_user.append(u)
            for sg in tg.subtopics:
                gi = len(g_sub)
                gmap[sg.subtopic_id] = gi
                g_sub.append(sg.subtopic_id)
                g_cnt.append(sg.click_count)
                g_ratio.append(sg.ratio)
                g_topic.append(ti)
                for nid in sg.news_ids:
                    click_pos.append(news_pos[nid])
                    click_group.append(gi)
        group_of.append(gmap)
        topic_of.append(tmap)

    def long(x):
        return torch.as_tensor(np.asarray(x, dtype=np.int64))

    def real(x):
        return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=dtype)

    return TreeLayout(
        n_users=len(indices),
        click_pos=long(click_pos),
        click_group=long(click_group),
        group_subtopic=long(g_sub),
        group_count=long(g_cnt),
        group_ratio=real(g_ratio),
        group_topic=long(g_topic),
        topic_id=long(t_id),
        topic_count=long(t_cnt),
        topic_ratio=real(t_ratio),
        topic_user=long(t_user),
        group_of=group_of,
        topic_of=topic_of,
    )


@dataclass
class TreeTensors:
    u_g: torch.Tensor  # (n_users, D)
    u_t: torch.Tensor  # (n_topic_groups, D)
    u_s: torch.Tensor  # (n_groups, D)
    gamma: torch.Tensor
    beta: torch.Tensor
    alpha: torch.Tensor


def build_trees(news: torch.Tensor, layout: TreeLayout, params: HierarchyParams) -> TreeTensors:
    """Interest trees for every user in ``layout``; ``news`` holds the batch's news vectors."""
    n_clicks = news[layout.click_pos]
    gamma = segment_softmax(params.phi_s(n_clicks).squeeze(-1), layout.click_group, layout.n_groups)
    c = segment_sum(gamma[:, None] * n_clicks, layout.click_group, layout.n_groups)
    u_s = c + params.subtopic_embedding(layout.group_subtopic)

    v_s = torch.cat([u_s, params.subtopic_count_embedding(_clip(layout.group_count))], dim=-1)
    beta = segment_softmax(params.phi_t(v_s).squeeze(-1), layout.group_topic, layout.n_topic_groups)
    z = segment_sum(beta[:, None] * u_s, layout.group_topic, layout.n_topic_groups)
    u_t = z + params.topic_embedding(layout.topic_id)

    v_t = torch.cat([u_t, params.topic_count_embedding(_clip(layout.topic_count))], dim=-1)
    alpha = segment_softmax(params.phi_g(v_t).squeeze(-1), layout.topic_user, layout.n_users)
    # users without topics keep the zero vector (cold start)
    u_g = segment_sum(alpha[:, None] * u_t, layout.topic_user, layout.n_users)
    return TreeTensors(u_g, u_t, u_s, gamma, beta, alpha)


def build_interest_tree(
    index: InterestIndex,
    catalog: Catalog,
    encoder: nn.Module,
    params: HierarchyParams,
    news_cache: dict[str, torch.Tensor] | None = None,
) -> InterestTree:
    """Tree of one user; each clicked news is encoded once (dropout off)."""
    if index.M == 0:
        return InterestTree(params.topic_embedding.weight.new_zeros(params.topic_embedding.embedding_dim),
                            cold_start=True)
    cache = news_cache if news_cache is not None else {}
    missing = [n for n in dict.fromkeys(index.news_ids) if n not in cache]
    if missing:
        rows = catalog.rows(missing)
        was_training = encoder.training
        encoder.eval()
        vecs = encoder(torch.as_tensor(catalog.word_ids[rows]), torch.as_tensor(catalog.entity_ids[rows]))
        encoder.train(was_training)
        cache.update(zip(missing, vecs))

    sub_reps: dict[int, torch.Tensor] = {}
    topic_reps: dict[int, torch.Tensor] = {}
    for tg in index.topics:
        reps = []
        for sg in tg.subtopics:
            clicks = torch.stack([cache[n] for n in sg.news_ids])
            u_s = subtopic_interest(clicks, sg.subtopic_id, params)
            sub_reps[sg.subtopic_id] = u_s
            reps.append(u_s)
        counts = [sg.click_count for sg in tg.subtopics]
        topic_reps[tg.topic_id] = topic_interest(torch.stack(reps), counts, tg.topic_id, params)
    u_g, cold = user_interest(
        torch.stack(list(topic_reps.values())), [tg.click_count for tg in index.topics], params
    )
    return InterestTree(u_g, topic_reps, sub_reps, cold)
