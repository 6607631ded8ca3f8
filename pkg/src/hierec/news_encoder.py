"""Title encoder: words and entities -> one news vector.

Both branches run embedding -> multi-head self-attention -> additive
attention pooling, and the two pooled vectors are fused linearly.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .data import NewsArticle

NEG_INF = -1e9


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax restricted to ``mask``; masked entries are exactly zero.

    A slice with no unmasked entry returns all zeros instead of NaN.
    """
    filled = logits.masked_fill(~mask, NEG_INF)
    weights = torch.softmax(filled, dim=dim)
    return weights * mask.to(weights.dtype)


class MultiHeadSelfAttention(nn.Module):
    """Unscaled dot-product self-attention with ``n_heads`` heads of ``head_dim``."""

    def __init__(self, d_in: int, n_heads: int, head_dim: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = head_dim
        d_out = n_heads * head_dim
        self.query = nn.Linear(d_in, d_out, bias=False)
        self.key = nn.Linear(d_in, d_out, bias=False)
        self.value = nn.Linear(d_in, d_out, bias=False)

    @property
    def out_dim(self) -> int:
        return self.n_heads * self.head_dim

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # x: (B, L, d_in), mask: (B, L) bool
        B, L, _ = x.shape
        h, d = self.n_heads, self.head_dim
        q = self.query(x).view(B, L, h, d).transpose(1, 2)
        k = self.key(x).view(B, L, h, d).transpose(1, 2)
        v = self.value(x).view(B, L, h, d).transpose(1, 2)
        logits = q @ k.transpose(-1, -2)  # (B, h, L, L)
        attn = masked_softmax(logits, mask[:, None, None, :].expand_as(logits))
        out = (attn @ v).transpose(1, 2).reshape(B, L, h * d)
        return out * mask[..., None].to(out.dtype)


class AttentivePool(nn.Module):
    """score_i = q . tanh(P x_i + b); output is the softmax-weighted sum of rows."""

    def __init__(self, d_in: int, query_dim: int):
        super().__init__()
        self.proj = nn.Linear(d_in, query_dim)
        self.query = nn.Parameter(torch.empty(query_dim).uniform_(-0.1, 0.1))

    def weights(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        scores = torch.tanh(self.proj(x)) @ self.query
        return masked_softmax(scores, mask)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        w = self.weights(x, mask)
        return (w.unsqueeze(-1) * x).sum(dim=-2)


class NewsEncoder(nn.Module):
    def __init__(
        self,
        n_words: int,
        n_entities: int,
        cfg: ModelConfig,
        dropout: float = 0.2,
        word_table: np.ndarray | None = None,
        entity_table: np.ndarray | None = None,
    ):
        super().__init__()
        self.cfg = cfg
        self.word_embedding = nn.Embedding(n_words, cfg.word_dim, padding_idx=0)
        self.entity_embedding = nn.Embedding(n_entities, cfg.entity_dim, padding_idx=0)
        for emb, table in ((self.word_embedding, word_table), (self.entity_embedding, entity_table)):
            with torch.no_grad():
                if table is not None:
                    emb.weight.copy_(torch.as_tensor(table))
                else:
                    emb.weight.uniform_(-0.1, 0.1)
                emb.weight[0].zero_()
        self.text_attention = MultiHeadSelfAttention(cfg.word_dim, cfg.text_heads, cfg.text_head_dim)
        self.text_pool = AttentivePool(cfg.text_dim, cfg.query_dim)
        self.entity_attention = MultiHeadSelfAttention(
            cfg.entity_dim, cfg.entity_heads, cfg.entity_head_dim
        )
        self.entity_pool = AttentivePool(cfg.entity_out_dim, cfg.query_dim)
        self.W_t = nn.Linear(cfg.text_dim, cfg.news_dim, bias=False)
        self.W_e = nn.Linear(cfg.entity_out_dim, cfg.news_dim, bias=False)
        self.dropout = nn.Dropout(dropout)

    def _branch(self, ids, embedding, attention, pool):
        mask = ids != 0
        x = self.dropout(embedding(ids))
        x = self.dropout(attention(x, mask))
        return pool(x, mask)

    def encode_text(self, word_ids: torch.Tensor) -> torch.Tensor:
        """n_t for a batch of padded word-id rows; empty titles give zeros."""
        return self._branch(word_ids, self.word_embedding, self.text_attention, self.text_pool)

    def encode_entities(self, entity_ids: torch.Tensor) -> torch.Tensor:
        """n_e for a batch of padded entity-id rows; rows without entities give zeros."""
        return self._branch(entity_ids, self.entity_embedding, self.entity_attention, self.entity_pool)

    def forward(self, word_ids: torch.Tensor, entity_ids: torch.Tensor) -> torch.Tensor:
        return self.W_t(self.encode_text(word_ids)) + self.W_e(self.encode_entities(entity_ids))


def multi_head_self_attention(
    inputs: torch.Tensor, mask: torch.Tensor, layer: MultiHeadSelfAttention
) -> torch.Tensor:
    """Single-sequence form (L x d_in -> L x d_out); at least one position must be unmasked."""
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if not bool(mask.any()):
        raise ValueError("self-attention needs at least one unmasked position")
    return layer(inputs[None], mask[None])[0]


def attentive_pool(inputs: torch.Tensor, mask: torch.Tensor, pool: AttentivePool) -> torch.Tensor:
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if not bool(mask.any()):
        raise ValueError("attentive pooling needs at least one unmasked position")
    return pool(inputs[None], mask[None])[0]


def _article_tensors(article: NewsArticle, device=None):
    words = torch.tensor(np.asarray(article.word_ids), dtype=torch.long, device=device)[None]
    ents = torch.tensor(np.asarray(article.entity_ids), dtype=torch.long, device=device)[None]
    return words, ents


def encode_text(article: NewsArticle, encoder: NewsEncoder, dropout_active: bool = False):
    """Returns ``(n_t, empty)``; ``empty`` flags a title without known words."""
    words, _ = _article_tensors(article)
    with _dropout_mode(encoder, dropout_active):
        return encoder.encode_text(words)[0], article.word_count == 0


def encode_entities(article: NewsArticle, encoder: NewsEncoder, dropout_active: bool = False):
    _, ents = _article_tensors(article)
    with _dropout_mode(encoder, dropout_active):
        return encoder.encode_entities(ents)[0]


def encode_news(article: NewsArticle, encoder: NewsEncoder, dropout_active: bool = False):
    words, ents = _article_tensors(article)
    with _dropout_mode(encoder, dropout_active):
        return encoder(words, ents)[0]


class _dropout_mode:
    def __init__(self, module: nn.Module, active: bool):
        self.module = module
        self.active = active

    def __enter__(self):
        self.prev = self.module.training
        self.module.train(self.active)

    def __exit__(self, *exc):
        self.module.train(self.prev)
