"""MIND-format ingestion: news catalog, behaviors, embeddings, interest index.

The news catalog keeps every article as a row of dense arrays so that the
encoder can gather batches by integer index; :class:`NewsArticle` is the
per-row view handed to callers that want one article at a time.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

log = logging.getLogger(__name__)

PAD = 0
MAX_TITLE_LEN = 30
MAX_ENTITIES = 5
MAX_HISTORY = 50

_TOKEN_SPLIT = re.compile(r"[^\w]+|_+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


@dataclass
class Vocabulary:
    word_to_id: dict[str, int] = field(default_factory=lambda: {"<pad>": PAD})
    entity_to_id: dict[str, int] = field(default_factory=lambda: {"<pad>": PAD})
    topic_to_id: dict[str, int] = field(default_factory=dict)
    # keyed by (topic name, subtopic name) so a subtopic has exactly one parent
    subtopic_to_id: dict[tuple[str, str], int] = field(default_factory=dict)
    subtopic_parent: list[int] = field(default_factory=list)

    @property
    def n_words(self) -> int:
        return len(self.word_to_id)

    @property
    def n_entities(self) -> int:
        return len(self.entity_to_id)

    @property
    def n_topics(self) -> int:
        return len(self.topic_to_id)

    @property
    def n_subtopics(self) -> int:
        return len(self.subtopic_to_id)

    def add_word(self, token: str) -> int:
        return self.word_to_id.setdefault(token, len(self.word_to_id))

    def add_entity(self, key: str) -> int:
        return self.entity_to_id.setdefault(key, len(self.entity_to_id))

    def add_category(self, topic: str, subtopic: str) -> tuple[int, int]:
        t = self.topic_to_id.setdefault(topic, len(self.topic_to_id))
        key = (topic, subtopic)
        if key not in self.subtopic_to_id:
            self.subtopic_to_id[key] = len(self.subtopic_to_id)
            self.subtopic_parent.append(t)
        return t, self.subtopic_to_id[key]

    def to_json(self) -> dict:
        return {
            "word_to_id": self.word_to_id,
            "entity_to_id": self.entity_to_id,
            "topic_to_id": self.topic_to_id,
            "subtopics": [[t, s, i] for (t, s), i in self.subtopic_to_id.items()],
            "subtopic_parent": self.subtopic_parent,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        return cls(
            word_to_id=dict(d["word_to_id"]),
            entity_to_id=dict(d["entity_to_id"]),
            topic_to_id=dict(d["topic_to_id"]),
            subtopic_to_id={(t, s): int(i) for t, s, i in d["subtopics"]},
            subtopic_parent=[int(p) for p in d["subtopic_parent"]],
        )


@dataclass(frozen=True, eq=False)
class NewsArticle:
    news_id: str
    topic_id: int
    subtopic_id: int
    word_ids: np.ndarray
    entity_ids: np.ndarray

    @property
    def word_count(self) -> int:
        return int(np.count_nonzero(self.word_ids))

    @property
    def entity_count(self) -> int:
        return int(np.count_nonzero(self.entity_ids))


class Catalog(Mapping):
    """Read-only ``news_id -> NewsArticle`` mapping backed by dense arrays."""

    def __init__(
        self,
        news_ids: Sequence[str],
        topic_ids: np.ndarray,
        subtopic_ids: np.ndarray,
        word_ids: np.ndarray,
        entity_ids: np.ndarray,
    ):
        self.news_ids = list(news_ids)
        self.index = {nid: i for i, nid in enumerate(self.news_ids)}
        self.topic_ids = np.asarray(topic_ids, dtype=np.int64)
        self.subtopic_ids = np.asarray(subtopic_ids, dtype=np.int64)
        self.word_ids = np.asarray(word_ids, dtype=np.int64)
        self.entity_ids = np.asarray(entity_ids, dtype=np.int64)
        for arr in (self.topic_ids, self.subtopic_ids, self.word_ids, self.entity_ids):
            arr.setflags(write=False)

    def __getitem__(self, news_id: str) -> NewsArticle:
        i = self.index[news_id]
        return NewsArticle(
            news_id=news_id,
            topic_id=int(self.topic_ids[i]),
            subtopic_id=int(self.subtopic_ids[i]),
            word_ids=self.word_ids[i],
            entity_ids=self.entity_ids[i],
        )

    def __iter__(self) -> Iterator[str]:
        return iter(self.news_ids)

    def __len__(self) -> int:
        return len(self.news_ids)

    def __contains__(self, news_id: object) -> bool:
        return news_id in self.index

    def rows(self, news_ids: Iterable[str]) -> np.ndarray:
        return np.fromiter((self.index[n] for n in news_ids), dtype=np.int64)

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            news_ids=np.array(self.news_ids, dtype=object).astype(str),
            topic_ids=self.topic_ids,
            subtopic_ids=self.subtopic_ids,
            word_ids=self.word_ids,
            entity_ids=self.entity_ids,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Catalog":
        with np.load(path) as z:
            return cls(
                [str(x) for x in z["news_ids"]],
                z["topic_ids"],
                z["subtopic_ids"],
                z["word_ids"],
                z["entity_ids"],
            )


@dataclass
class ParseStats:
    rows: int = 0
    skipped: int = 0
    bad_entities: int = 0
    duplicates: int = 0


def _pad(ids: list[int], width: int) -> list[int]:
    ids = ids[:width]
    return ids + [PAD] * (width - len(ids))


def _title_entity_keys(raw: str) -> tuple[list[str], bool]:
    """WikidataIds of title entities ordered by first occurrence in the title."""
    raw = raw.strip()
    if not raw:
        return [], True
    try:
        items = json.loads(raw)
    except json.JSONDecodeError:
        return [], False
    keyed = []
    for pos, item in enumerate(items or []):
        if not isinstance(item, dict) or not item.get("WikidataId"):
            continue
        offsets = item.get("OccurrenceOffsets") or [pos]
        keyed.append((min(offsets), pos, item["WikidataId"]))
    keyed.sort()
    seen, out = set(), []
    for _, _, key in keyed:
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out, True


def _open_lines(source) -> tuple[str, Iterable[str], bool]:
    """``(name, lines, close_after)`` for a path or an already-open text stream."""
    if hasattr(source, "read"):
        return getattr(source, "name", "<stream>"), source, False
    return str(source), open(source, encoding="utf-8"), True


def parse_news_catalog(
    paths: str | Path | IO[str] | Sequence[str | Path | IO[str]],
    vocab: Vocabulary | None = None,
    vocab_mode: str = "build",
    max_title_len: int = MAX_TITLE_LEN,
    max_entities: int = MAX_ENTITIES,
) -> tuple[Catalog, Vocabulary, ParseStats]:
    """Parse one or more MIND ``news.tsv`` files into a catalog.

    Articles appearing in several files (MIND train and dev overlap) are kept
    once. In ``frozen`` mode unseen tokens and entities map to the padding id
    and rows with an unseen category pair are skipped.
    """
    if vocab_mode not in ("build", "frozen"):
        raise ValueError(f"vocab_mode must be 'build' or 'frozen', got {vocab_mode!r}")
    if vocab_mode == "frozen" and vocab is None:
        raise ValueError("frozen vocab_mode needs a vocabulary")
    vocab = vocab if vocab is not None else Vocabulary()
    building = vocab_mode == "build"
    if isinstance(paths, (str, Path)) or hasattr(paths, "read"):
        paths = [paths]

    stats = ParseStats()
    ids: list[str] = []
    seen: set[str] = set()
    topics, subtopics, words, ents = [], [], [], []
    for source in paths:
        path, fh, close = _open_lines(source)
        try:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n").rstrip("\r")
                if not line:
                    continue
                stats.rows += 1
                cols = line.split("\t")
                if len(cols) < 4 or not cols[0] or not cols[1] or not cols[2]:
                    stats.skipped += 1
                    log.warning("%s:%d: malformed news row skipped", path, lineno)
                    continue
                news_id, topic, subtopic, title = cols[0], cols[1], cols[2], cols[3]
                if news_id in seen:
                    stats.duplicates += 1
                    continue
                if building:
                    t, s = vocab.add_category(topic, subtopic)
                else:
                    key = (topic, subtopic)
                    if key not in vocab.subtopic_to_id:
                        stats.skipped += 1
                        log.warning("%s:%d: unseen category %s/%s skipped", path, lineno, *key)
                        continue
                    s = vocab.subtopic_to_id[key]
                    t = vocab.subtopic_parent[s]

                tokens = tokenize(title)[:max_title_len]
                if building:
                    wids = [vocab.add_word(tok) for tok in tokens]
                else:
                    wids = [vocab.word_to_id.get(tok, PAD) for tok in tokens]

                ent_keys, ok = _title_entity_keys(cols[6] if len(cols) > 6 else "")
                if not ok:
                    stats.bad_entities += 1
                    log.warning("%s:%d: unreadable title_entities, using none", path, lineno)
                ent_keys = ent_keys[:max_entities]
                if building:
                    eids = [vocab.add_entity(k) for k in ent_keys]
                else:
                    eids = [vocab.entity_to_id.get(k, PAD) for k in ent_keys]

                seen.add(news_id)
                ids.append(news_id)
                topics.append(t)
                subtopics.append(s)
                words.append(_pad(wids, max_title_len))
                ents.append(_pad(eids, max_entities))
        finally:
            if close:
                fh.close()

    if stats.skipped:
        log.warning("skipped %d malformed news rows", stats.skipped)
    catalog = Catalog(
        ids,
        np.array(topics, dtype=np.int64),
        np.array(subtopics, dtype=np.int64),
        np.array(words, dtype=np.int64).reshape(-1, max_title_len),
        np.array(ents, dtype=np.int64).reshape(-1, max_entities),
    )
    return catalog, vocab, stats


@dataclass(frozen=True)
class Impression:
    impression_id: str
    history: tuple[str, ...]
    candidates: tuple[tuple[str, int], ...]
    user_id: str = ""

    @property
    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.candidates], dtype=np.int64)

    @property
    def candidate_ids(self) -> list[str]:
        return [nid for nid, _ in self.candidates]

    @property
    def positives(self) -> list[str]:
        return [nid for nid, lab in self.candidates if lab == 1]

    @property
    def negatives(self) -> list[str]:
        return [nid for nid, lab in self.candidates if lab == 0]


def parse_behaviors(source: str | Path | IO[str]) -> tuple[list[Impression], ParseStats]:
    """Parse a MIND ``behaviors.tsv``; rows with a bad candidate token are rejected."""
    out: list[Impression] = []
    stats = ParseStats()
    path, fh, close = _open_lines(source)
    try:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            stats.rows += 1
            cols = line.split("\t")
            if len(cols) < 5:
                stats.skipped += 1
                log.warning("%s:%d: behaviors row has %d columns", path, lineno, len(cols))
                continue
            imp_id, user_id, _time, history, impressions = cols[:5]
            cands = []
            bad = False
            for tok in impressions.split():
                nid, sep, lab = tok.rpartition("-")
                if not sep or not nid or lab not in ("0", "1"):
                    bad = True
                    break
                cands.append((nid, int(lab)))
            if bad or not cands:
                stats.skipped += 1
                log.warning("%s:%d: bad impression token, row rejected", path, lineno)
                continue
            out.append(Impression(imp_id, tuple(history.split()), tuple(cands), user_id))
    finally:
        if close:
            fh.close()
    return out, stats


def _read_vectors(
    path: str | Path, dim: int, wanted: Mapping[str, int], table: np.ndarray
) -> set[int]:
    hits: set[int] = set()
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split()
            if not parts:
                continue
            if len(parts) < dim + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} values per vector, got {len(parts) - 1}"
                )
            if len(parts) > dim + 1:
                # tokens containing spaces exist in some GloVe dumps; anything else is a bad dim
                try:
                    float(parts[-dim - 1])
                except ValueError:
                    pass
                else:
                    raise ValueError(
                        f"{path}:{lineno}: expected {dim} values per vector, got {len(parts) - 1}"
                    )
            token = " ".join(parts[: len(parts) - dim])
            idx = wanted.get(token)
            if idx is None or idx == PAD:
                continue
            table[idx] = np.asarray(parts[-dim:], dtype=np.float32)
            hits.add(idx)
    return hits


def load_pretrained_embeddings(
    vocab: Vocabulary,
    word_vec_path: str | Path | None,
    entity_vec_path: str | Path | None,
    word_dim: int = 300,
    entity_dim: int = 100,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, dict[str, float]]:
    """Initial word and entity tables; rows missing from the files are U(-0.1, 0.1)."""
    rng = np.random.default_rng(seed)
    words = rng.uniform(-0.1, 0.1, size=(vocab.n_words, word_dim)).astype(np.float32)
    ents = rng.uniform(-0.1, 0.1, size=(vocab.n_entities, entity_dim)).astype(np.float32)
    coverage = {"word": 0.0, "entity": 0.0}
    if word_vec_path:
        hits = _read_vectors(word_vec_path, word_dim, vocab.word_to_id, words)
        coverage["word"] = len(hits) / max(vocab.n_words - 1, 1)
    if entity_vec_path:
        hits = _read_vectors(entity_vec_path, entity_dim, vocab.entity_to_id, ents)
        coverage["entity"] = len(hits) / max(vocab.n_entities - 1, 1)
    words[PAD] = 0.0
    ents[PAD] = 0.0
    log.info("embedding coverage: words %.4f, entities %.4f", coverage["word"], coverage["entity"])
    return words, ents, coverage


@dataclass(frozen=True)
class SubtopicGroup:
    subtopic_id: int
    click_count: int
    ratio: float
    news_ids: tuple[str, ...]


@dataclass(frozen=True)
class TopicGroup:
    topic_id: int
    click_count: int
    ratio: float
    subtopics: tuple[SubtopicGroup, ...]


@dataclass(frozen=True)
class InterestIndex:
    M: int
    topics: tuple[TopicGroup, ...]

    def topic_ratio(self, topic_id: int) -> float:
        for tg in self.topics:
            if tg.topic_id == topic_id:
                return tg.ratio
        return 0.0

    def subtopic_ratio(self, subtopic_id: int) -> float:
        for tg in self.topics:
            for sg in tg.subtopics:
                if sg.subtopic_id == subtopic_id:
                    return sg.ratio
        return 0.0

    def subtopic_groups(self) -> list[SubtopicGroup]:
        return [sg for tg in self.topics for sg in tg.subtopics]

    @property
    def news_ids(self) -> list[str]:
        return [n for sg in self.subtopic_groups() for n in sg.news_ids]


def build_interest_index(
    history: Sequence[str], catalog: Catalog, max_history: int = MAX_HISTORY
) -> InterestIndex:
    """Group the most recent clicks into a topic -> subtopic -> news tree.

    Groups are ordered by descending click count, ties by ascending id; news
    inside a group keep their history order.
    """
    known = [n for n in history if n in catalog]
    if len(known) != len(history):
        log.warning("dropped %d history clicks missing from catalog", len(history) - len(known))
    clicks = known[-max_history:] if max_history > 0 else []
    M = len(clicks)
    if M == 0:
        return InterestIndex(0, ())

    by_sub: dict[int, list[str]] = {}
    parent: dict[int, int] = {}
    for nid in clicks:
        row = catalog.index[nid]
        s = int(catalog.subtopic_ids[row])
        by_sub.setdefault(s, []).append(nid)
        parent[s] = int(catalog.topic_ids[row])

    by_topic: dict[int, list[SubtopicGroup]] = {}
    for s, members in by_sub.items():
        by_topic.setdefault(parent[s], []).append(
            SubtopicGroup(s, len(members), len(members) / M, tuple(members))
        )

    topics = []
    for t, subs in by_topic.items():
        subs.sort(key=lambda g: (-g.click_count, g.subtopic_id))
        count = sum(g.click_count for g in subs)
        topics.append(TopicGroup(t, count, count / M, tuple(subs)))
    topics.sort(key=lambda g: (-g.click_count, g.topic_id))
    return InterestIndex(M, tuple(topics))


@dataclass(frozen=True)
class TrainingSample:
    interest_index: InterestIndex
    positive: str
    negatives: tuple[str, ...]


def sample_training_instances(
    impression: Impression,
    K: int,
    rng: np.random.Generator | int,
    index: InterestIndex,
) -> list[TrainingSample]:
    """One NCE sample per clicked candidate with ``K`` negatives from the same impression.

    Negatives are drawn without replacement when at least ``K`` exist and
    with replacement otherwise. Impressions without negatives yield nothing.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    negs = impression.negatives
    if not negs:
        return []
    out = []
    for pos in impression.positives:
        picks = rng.choice(len(negs), size=K, replace=len(negs) < K)
        out.append(TrainingSample(index, pos, tuple(negs[i] for i in picks)))
    return out


def split_impressions(
    train: list[Impression],
    test: list[Impression],
    mode: str = "dev-as-test",
    val_fraction: float = 0.05,
    seed: int = 0,
) -> tuple[list[Impression], list[Impression], list[Impression]]:
    """Return (train, validation, test) impression lists."""
    rng = np.random.default_rng(seed)
    if mode == "dev-as-test":
        perm = rng.permutation(len(train))
        n_val = int(round(len(train) * val_fraction))
        val_idx = set(perm[:n_val].tolist())
        tr = [imp for i, imp in enumerate(train) if i not in val_idx]
        va = [imp for i, imp in enumerate(train) if i in val_idx]
        return tr, va, list(test)
    if mode == "dev-split":
        perm = rng.permutation(len(test))
        half = len(test) // 2
        val_idx = set(perm[:half].tolist())
        va = [imp for i, imp in enumerate(test) if i in val_idx]
        te = [imp for i, imp in enumerate(test) if i not in val_idx]
        return list(train), va, te
    raise ValueError(f"unknown split mode {mode!r}")


def dataset_statistics(
    catalog: Catalog, vocab: Vocabulary, behaviors: Iterable[Sequence[Impression]]
) -> dict[str, int]:
    """Counts in the layout of the usual dataset summary table."""
    users: set[str] = set()
    clicks = 0
    impressions = 0
    for imps in behaviors:
        for imp in imps:
            users.add(imp.user_id)
            clicks += sum(lab for _, lab in imp.candidates)
            impressions += 1
    return {
        "news": len(catalog),
        "topics": len(set(catalog.topic_ids.tolist())),
        "subtopics": len(set(catalog.subtopic_ids.tolist())),
        "users": len(users),
        "clicks": clicks,
        "impressions": impressions,
        "words": vocab.n_words - 1,
        "entities": vocab.n_entities - 1,
    }


def referential_integrity(impressions: Iterable[Impression], catalog: Catalog) -> Counter:
    """Count news ids referenced by behaviors that the catalog cannot resolve."""
    missing: Counter = Counter()
    for imp in impressions:
        for nid in imp.history:
            if nid not in catalog:
                missing[nid] += 1
        for nid, _ in imp.candidates:
            if nid not in catalog:
                missing[nid] += 1
    return missing
