"""NCE training loop and finite-difference gradient verification."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import EvalConfig, MatchConfig, ModelConfig, TrainConfig
from .data import (
    Catalog,
    Impression,
    InterestIndex,
    TrainingSample,
    Vocabulary,
    build_interest_index,
    sample_training_instances,
)
from .evaluation import evaluate_ranking
from .model import HieRec, make_batch, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def nce_loss(o_pos, o_negs) -> torch.Tensor:
    """-log softmax of the positive score against its negatives.

    Accepts a scalar positive with K negatives, or a batch ``(B,)`` with
    ``(B, K)`` negatives; batched losses are averaged.
    """
    o_pos = torch.as_tensor(o_pos, dtype=torch.float64) if not torch.is_tensor(o_pos) else o_pos
    o_negs = torch.as_tensor(o_negs, dtype=o_pos.dtype) if not torch.is_tensor(o_negs) else o_negs
    if o_negs.shape[-1] < 1:
        raise ValueError("need at least one negative")
    if not (torch.isfinite(o_pos).all() and torch.isfinite(o_negs).all()):
        raise ValueError("non-finite score passed to nce_loss")
    logits = torch.cat([o_pos.unsqueeze(-1), o_negs], dim=-1)
    # logsumexp subtracts the row max internally
    loss = torch.logsumexp(logits, dim=-1) - logits[..., 0]
    return loss.mean()


def _scores(model: HieRec, samples: Sequence[TrainingSample], catalog: Catalog, match: MatchConfig):
    batch = make_batch(
        [s.interest_index for s in samples],
        [[s.positive, *s.negatives] for s in samples],
        catalog,
        dtype=model.dtype,
    )
    comp, _ = model(batch, catalog)
    return comp.combine(match).view(len(samples), -1)


def batch_loss(model, samples, catalog, match) -> torch.Tensor:
    o = _scores(model, samples, catalog, match)
    return nce_loss(o[:, 0], o[:, 1:])


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    checkpoint: str | None = None
    n_samples: int = 0
    n_skipped_impressions: int = 0

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("epoch_seconds")
        return d


def index_impressions(
    impressions: Sequence[Impression], catalog: Catalog, max_history: int
) -> list[InterestIndex]:
    cache: dict[tuple[str, ...], InterestIndex] = {}
    out = []
    for imp in impressions:
        if imp.history not in cache:
            cache[imp.history] = build_interest_index(imp.history, catalog, max_history)
        out.append(cache[imp.history])
    return out


def draw_samples(
    impressions: Sequence[Impression],
    indices: Sequence[InterestIndex],
    K: int,
    rng: np.random.Generator,
) -> tuple[list[TrainingSample], int]:
    samples, skipped = [], 0
    for imp, index in zip(impressions, indices):
        if not imp.positives:
            continue
        got = sample_training_instances(imp, K, rng, index)
        if not got:
            skipped += 1
        samples.extend(got)
    return samples, skipped


def build_model(
    vocab: Vocabulary,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    word_table: np.ndarray | None = None,
    entity_table: np.ndarray | None = None,
    seed: int | None = None,
) -> HieRec:
    torch.manual_seed(train_cfg.seed if seed is None else seed)
    model = HieRec(
        vocab.n_words, vocab.n_entities, vocab.n_topics, vocab.n_subtopics, cfg,
        dropout=train_cfg.dropout, word_table=word_table, entity_table=entity_table,
    )
    if train_cfg.freeze_word_embeddings:
        model.news_encoder.word_embedding.weight.requires_grad_(False)
    return model


def train(
    model: HieRec,
    catalog: Catalog,
    train_impressions: Sequence[Impression],
    val_impressions: Sequence[Impression],
    config: TrainConfig,
    match: MatchConfig,
    eval_config: EvalConfig | None = None,
    out_dir: str | Path | None = None,
) -> TrainReport:
    """Adam on the NCE objective; keeps the parameters with the best validation AUC.

    Negatives are redrawn every epoch. With a fixed seed and one thread the
    loss trajectory is reproducible.
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    indices = index_impressions(train_impressions, catalog, model.cfg.max_history)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    report = TrainReport()
    best_auc, best_state = -math.inf, None
    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w", encoding="utf-8")

    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            samples, skipped = draw_samples(train_impressions, indices, config.K, rng)
            if not samples:
                raise ValueError("no trainable impressions (need a click and a non-click)")
            report.n_samples = len(samples)
            report.n_skipped_impressions = skipped
            order = rng.permutation(len(samples))
            model.train()
            total, seen = 0.0, 0
            for lo in range(0, len(order), config.batch_size):
                chunk = [samples[i] for i in order[lo:lo + config.batch_size]]
                o = _scores(model, chunk, catalog, match)
                if not torch.isfinite(o).all():
                    raise TrainingDiverged(f"non-finite scores at epoch {epoch + 1}, batch {lo // config.batch_size}")
                loss = nce_loss(o[:, 0], o[:, 1:])
                opt.zero_grad()
                loss.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
                opt.step()
                total += loss.item() * len(chunk)
                seen += len(chunk)
            mean_loss = total / seen
            val_auc = float("nan")
            if val_impressions:
                val_auc = evaluate_ranking(model, catalog, val_impressions, match, eval_config).auc
            seconds = time.perf_counter() - t0
            report.epoch_loss.append(mean_loss)
            report.val_auc.append(val_auc)
            report.epoch_seconds.append(seconds)
            log.info("epoch %d loss %.5f val_auc %.3f (%.1fs)", epoch + 1, mean_loss, val_auc, seconds)
            if log_fh:
                log_fh.write(json.dumps(
                    {"epoch": epoch + 1, "loss": mean_loss, "val_auc": val_auc, "seconds": seconds}
                ) + "\n")
            score = val_auc if not math.isnan(val_auc) else -mean_loss
            if score > best_auc:
                best_auc = score
                best_state = copy.deepcopy(model.state_dict())
                report.best_epoch = epoch + 1
    finally:
        if log_fh:
            log_fh.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if out_dir is not None:
        report.checkpoint = str(save_checkpoint(model, out_dir / "checkpoint", {"best_epoch": report.best_epoch}))
    return report


# ---- gradient verification ----------------------------------------------------


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_tensor: dict[str, float]
    n_entries: int
    epsilon: float

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_relative_error < tol


def gradient_check(
    model: HieRec,
    sample: TrainingSample,
    catalog: Catalog,
    match: MatchConfig | None = None,
    epsilon: float = 1e-5,
) -> GradCheckResult:
    """Compare autograd gradients of the NCE loss with central differences, entry by entry.

    Relative error per entry is ``|g_a - g_n| / (|g_a| + |g_n| + 1e-12)``.
    Run on a double-precision model; dropout is disabled.
    """
    match = match or MatchConfig()
    model.eval()

    def loss_fn():
        return batch_loss(model, [sample], catalog, match)

    model.zero_grad()
    loss_fn().backward()
    analytic = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for n, p in model.named_parameters()}
    per_tensor: dict[str, float] = {}
    worst, count = 0.0, 0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            g_a = analytic[name].view(-1)
            err = 0.0
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + epsilon
                up = loss_fn().item()
                flat[i] = orig - epsilon
                down = loss_fn().item()
                flat[i] = orig
                g_n = (up - down) / (2 * epsilon)
                a = g_a[i].item()
                rel = abs(a - g_n) / (abs(a) + abs(g_n) + 1e-12)
                err = max(err, rel)
                count += 1
            per_tensor[name] = err
            worst = max(worst, err)
    return GradCheckResult(worst, per_tensor, count, epsilon)


TINY_MODEL = ModelConfig(
    word_dim=6, entity_dim=4, text_heads=2, text_head_dim=3, entity_heads=2, entity_head_dim=2,
    news_dim=6, query_dim=5, count_dim=3, max_title_len=5, max_entities=3, max_history=50,
)


def tiny_setup(seed: int = 0):
    """A double-precision tiny model, a matching catalog and one training sample.

    The history spans two topics, one of them with two subtopics, and the
    candidates cover clicked and unclicked topics/subtopics so every level of
    the score receives gradient.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocabulary()
    for w in ("a", "b", "c", "d", "e", "f", "g", "h"):
        vocab.add_word(w)
    for e in ("Q1", "Q2", "Q3", "Q4"):
        vocab.add_entity(e)
    cats = [("sports", "football"), ("sports", "golf"), ("finance", "stock"), ("news", "world"),
            ("sports", "tennis")]
    for t, s in cats:
        vocab.add_category(t, s)
    # news: (category index, word ids, entity ids)
    spec = [
        (0, [1, 2, 3], [1, 2]),
        (0, [2, 4], [1]),
        (1, [5, 6, 1], []),
        (2, [7, 8], [3]),
        (0, [3, 1, 8, 2], [2, 4]),  # candidates from here on
        (4, [4, 5], [1]),
        (3, [6, 7, 8], [3, 4]),
        (2, [1, 7], []),
    ]
    ids, topics, subs, words, ents = [], [], [], [], []
    for i, (c, w, e) in enumerate(spec):
        t, s = vocab.subtopic_parent[c], c
        ids.append(f"N{i}")
        topics.append(t)
        subs.append(s)
        words.append(w + [0] * (TINY_MODEL.max_title_len - len(w)))
        ents.append(e + [0] * (TINY_MODEL.max_entities - len(e)))
    catalog = Catalog(ids, np.array(topics), np.array(subs), np.array(words), np.array(ents))
    history = ["N0", "N1", "N2", "N3", "N0"]
    index = build_interest_index(history, catalog)
    sample = TrainingSample(index, "N4", ("N5", "N6", "N7"))

    torch.manual_seed(seed)
    model = HieRec(vocab.n_words, vocab.n_entities, vocab.n_topics, vocab.n_subtopics,
                   TINY_MODEL, dropout=0.0).double()
    # larger-than-default scales keep every gradient well away from round-off
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.as_tensor(rng.normal(0, 0.5, size=tuple(p.shape))))
        model.news_encoder.word_embedding.weight[0].zero_()
        model.news_encoder.entity_embedding.weight[0].zero_()
    return model, catalog, sample, vocab
