"""The full recommender: news encoder + interest hierarchy + matching, and checkpoints.

Checkpoint layout (a directory):

* ``params.npz``    one array per named parameter tensor, stored at full precision
* ``manifest.json`` format version, model config, table sizes, and per-tensor
  ``{"shape": [...], "dtype": "float32"}``

Loading checks every tensor against the manifest, so a truncated or
mismatched container fails loudly. Round trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import MatchConfig, ModelConfig
from .data import Catalog, InterestIndex
from .hierarchy import HierarchyParams, TreeLayout, TreeTensors, build_trees, tree_layout
from .matching import Components, batch_components
from .news_encoder import NewsEncoder

CHECKPOINT_FORMAT = 1


@dataclass
class Batch:
    news_rows: np.ndarray  # catalog rows of every news the batch touches
    layout: TreeLayout
    cand_pos: torch.Tensor  # flat candidate positions into news_rows
    cand_user: torch.Tensor
    cand_group: torch.Tensor
    cand_topic_group: torch.Tensor
    n_candidates: list[int]


def make_batch(
    indices: Sequence[InterestIndex],
    candidates: Sequence[Sequence[str]],
    catalog: Catalog,
    dtype: torch.dtype = torch.float32,
) -> Batch:
    """Assemble users' interest indexes and their candidate lists into one flat batch."""
    pos: dict[str, int] = {}
    for index in indices:
        for nid in index.news_ids:
            pos.setdefault(nid, len(pos))
    for cands in candidates:
        for nid in cands:
            pos.setdefault(nid, len(pos))
    layout = tree_layout(indices, pos, dtype=dtype)

    c_pos, c_user, c_group, c_tgroup = [], [], [], []
    for u, cands in enumerate(candidates):
        gmap, tmap = layout.group_of[u], layout.topic_of[u]
        for nid in cands:
            row = catalog.index[nid]
            c_pos.append(pos[nid])
            c_user.append(u)
            c_group.append(gmap.get(int(catalog.subtopic_ids[row]), -1))
            c_tgroup.append(tmap.get(int(catalog.topic_ids[row]), -1))
    as_long = lambda x: torch.as_tensor(np.asarray(x, dtype=np.int64))  # noqa: E731
    return Batch(
        news_rows=catalog.rows(pos),
        layout=layout,
        cand_pos=as_long(c_pos),
        cand_user=as_long(c_user),
        cand_group=as_long(c_group),
        cand_topic_group=as_long(c_tgroup),
        n_candidates=[len(c) for c in candidates],
    )


def _trim(ids: np.ndarray) -> np.ndarray:
    """Drop trailing columns that are padding in every row; masked positions change nothing."""
    used = np.flatnonzero((ids != 0).any(axis=0))
    width = int(used[-1]) + 1 if used.size else 1
    return ids[:, :width]


class HieRec(nn.Module):
    def __init__(
        self,
        n_words: int,
        n_entities: int,
        n_topics: int,
        n_subtopics: int,
        cfg: ModelConfig | None = None,
        dropout: float = 0.2,
        word_table: np.ndarray | None = None,
        entity_table: np.ndarray | None = None,
    ):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.sizes = {
            "n_words": n_words,
            "n_entities": n_entities,
            "n_topics": n_topics,
            "n_subtopics": n_subtopics,
        }
        self.dropout_rate = dropout
        self.news_encoder = NewsEncoder(n_words, n_entities, self.cfg, dropout, word_table, entity_table)
        self.hierarchy = HierarchyParams(n_topics, n_subtopics, self.cfg)

    @property
    def dtype(self) -> torch.dtype:
        return self.hierarchy.phi_s.weight.dtype

    def encode_rows(self, catalog: Catalog, rows: np.ndarray) -> torch.Tensor:
        words = _trim(catalog.word_ids[rows])
        ents = _trim(catalog.entity_ids[rows])
        return self.news_encoder(torch.as_tensor(words), torch.as_tensor(ents))

    @torch.no_grad()
    def encode_catalog(self, catalog: Catalog, chunk: int = 1024) -> torch.Tensor:
        """News vectors of the whole catalog with dropout off."""
        was_training = self.training
        self.eval()
        parts = [
            self.encode_rows(catalog, np.arange(lo, min(lo + chunk, len(catalog))))
            for lo in range(0, len(catalog), chunk)
        ]
        self.train(was_training)
        if not parts:
            return torch.zeros(0, self.cfg.news_dim, dtype=self.dtype)
        return torch.cat(parts)

    def trees(self, batch: Batch, news: torch.Tensor) -> TreeTensors:
        return build_trees(news, batch.layout, self.hierarchy)

    def forward(
        self, batch: Batch, catalog: Catalog, news_matrix: torch.Tensor | None = None
    ) -> tuple[Components, TreeTensors]:
        """Score components of every candidate in ``batch``.

        ``news_matrix`` (the encoded catalog) skips per-batch encoding; it is
        used for evaluation where news vectors are fixed.
        """
        if news_matrix is not None:
            news = news_matrix[torch.as_tensor(batch.news_rows)]
        else:
            news = self.encode_rows(catalog, batch.news_rows)
        trees = build_trees(news, batch.layout, self.hierarchy)
        lay = batch.layout
        comp = batch_components(
            news[batch.cand_pos],
            batch.cand_user,
            batch.cand_group,
            batch.cand_topic_group,
            trees.u_g,
            trees.u_t,
            trees.u_s,
            lay.group_ratio,
            lay.topic_ratio,
        )
        return comp, trees

    def score(
        self, batch: Batch, catalog: Catalog, config: MatchConfig, news_matrix: torch.Tensor | None = None
    ) -> torch.Tensor:
        comp, _ = self(batch, catalog, news_matrix)
        return comp.combine(config)


def save_checkpoint(model: HieRec, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    np.savez(path / "params.npz", **arrays)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "model": dataclasses.asdict(model.cfg),
        "sizes": model.sizes,
        "dropout": model.dropout_rate,
        "tensors": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in arrays.items()},
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> tuple[HieRec, dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
    cfg = ModelConfig(**manifest["model"])
    model = HieRec(**manifest["sizes"], cfg=cfg, dropout=manifest["dropout"])
    expected = manifest["tensors"]
    state = {}
    with np.load(path / "params.npz") as z:
        if set(z.files) != set(expected):
            raise ValueError("checkpoint tensors do not match the manifest")
        for name in z.files:
            arr = z[name]
            spec = expected[name]
            if list(arr.shape) != spec["shape"] or str(arr.dtype) != spec["dtype"]:
                raise ValueError(f"tensor {name} does not match manifest {spec}")
            state[name] = torch.from_numpy(arr.copy())
    dtype = next(iter(state.values())).dtype if state else torch.float32
    model.to(dtype)
    model.load_state_dict(state)
    return model, manifest
