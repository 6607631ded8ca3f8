"""Synthetic MIND-format corpora with known user interest profiles.

Each subtopic owns a sparse word distribution (plus words shared across its
topic and a little background mass), so a title carries recoverable
subtopic signal. A user's interest profile over subtopics is

    p(s) ~ (a[topic(s)] * b[s]) ** kappa,   a, b ~ U(0, 1) per user,

which is uniform for kappa -> 0 and collapses onto one subtopic as kappa
grows. History clicks and candidate labels are both drawn from the profile.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SyntheticSpec
from .data import Catalog, Impression, Vocabulary, parse_behaviors, parse_news_catalog


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    news_lines: list[str]
    train_lines: list[str]
    test_lines: list[str]
    subtopic_names: list[tuple[str, str]]
    profiles: dict[str, np.ndarray]  # user id -> probability over subtopic_names

    def catalog(self) -> tuple[Catalog, Vocabulary]:
        catalog, vocab, _ = parse_news_catalog(io.StringIO("".join(self.news_lines)))
        return catalog, vocab

    def impressions(self) -> tuple[list[Impression], list[Impression]]:
        train, _ = parse_behaviors(io.StringIO("".join(self.train_lines)))
        test, _ = parse_behaviors(io.StringIO("".join(self.test_lines)))
        return train, test

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "news": out / "news.tsv",
            "train_behaviors": out / "behaviors_train.tsv",
            "test_behaviors": out / "behaviors_test.tsv",
        }
        paths["news"].write_text("".join(self.news_lines), encoding="utf-8")
        paths["train_behaviors"].write_text("".join(self.train_lines), encoding="utf-8")
        paths["test_behaviors"].write_text("".join(self.test_lines), encoding="utf-8")
        return paths


def _word_distributions(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    n_sub = spec.n_topics * spec.subtopics_per_topic
    V = spec.vocab_size
    dists = np.zeros((n_sub, V))
    words_per_sub = max(3, V // (2 * n_sub))
    words_per_topic = max(3, V // (4 * spec.n_topics))
    topic_words = [rng.choice(V, words_per_topic, replace=False) for _ in range(spec.n_topics)]
    for s in range(n_sub):
        t = s // spec.subtopics_per_topic
        own = rng.choice(V, words_per_sub, replace=False)
        dists[s, own] += rng.dirichlet(np.ones(words_per_sub)) * 0.7
        dists[s, topic_words[t]] += rng.dirichlet(np.ones(words_per_topic)) * 0.3
        dists[s] *= 1.0 - spec.background_mass
        dists[s] += spec.background_mass / V
    return dists


def _profile(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    a = rng.uniform(size=spec.n_topics)
    b = rng.uniform(size=spec.n_topics * spec.subtopics_per_topic)
    affinity = np.repeat(a, spec.subtopics_per_topic) * b
    # work in log space so large kappa degrades to an argmax instead of underflow
    logits = spec.kappa * np.log(affinity)
    p = np.exp(logits - logits.max())
    return p / p.sum()


def _news_line(nid, topic, sub, words, entities) -> str:
    ents = [
        {"Label": e, "Type": "S", "WikidataId": e, "Confidence": 1.0,
         "OccurrenceOffsets": [i], "SurfaceForms": [e]}
        for i, e in enumerate(entities)
    ]
    title = " ".join(words)
    return "\t".join([nid, topic, sub, title, "", "", json.dumps(ents), "[]"]) + "\n"


def generate(spec: SyntheticSpec) -> SyntheticCorpus:
    """Catalog, train/test behaviors and ground-truth profiles, fully determined by ``spec.seed``."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    news_seed, user_seed = root.spawn(2)
    rng = np.random.default_rng(news_seed)

    n_sub = spec.n_topics * spec.subtopics_per_topic
    names = [(f"topic{s // spec.subtopics_per_topic}", f"sub{s}") for s in range(n_sub)]
    dists = _word_distributions(spec, rng)
    vocab_words = [f"w{i}" for i in range(spec.vocab_size)]

    # the first n_sub articles cover every subtopic in order, so parsed ids follow generator ids
    news_sub = np.concatenate([
        np.arange(min(n_sub, spec.n_news)),
        rng.integers(0, n_sub, size=max(spec.n_news - n_sub, 0)),
    ])
    news_lines = []
    for i, s in enumerate(news_sub):
        words = rng.choice(spec.vocab_size, size=spec.title_len, p=dists[s])
        n_ent = rng.integers(0, 4)
        ents = rng.choice(spec.entities_per_subtopic, size=n_ent, replace=False) if n_ent else []
        news_lines.append(_news_line(
            f"N{i}", names[s][0], names[s][1],
            [vocab_words[w] for w in words], [f"Q{s}_{e}" for e in ents],
        ))
    by_sub = [np.flatnonzero(news_sub == s) for s in range(n_sub)]

    def pick_news(urng, subtopic, exclude):
        pool = by_sub[subtopic]
        choices = [n for n in urng.permutation(pool)[:8] if n not in exclude]
        return int(choices[0]) if choices else int(urng.choice(pool))

    train_lines, test_lines = [], []
    profiles = {}
    imp_counter = 0
    user_rngs = [np.random.default_rng(s) for s in user_seed.spawn(spec.n_users)]
    for u, urng in enumerate(user_rngs):
        uid = f"U{u}"
        prof = _profile(spec, urng)
        profiles[uid] = prof
        history: list[int] = []
        seen: set[int] = set()
        for s in urng.choice(n_sub, size=spec.clicks_per_user, p=prof):
            n = pick_news(urng, s, seen)
            history.append(n)
            seen.add(n)
        hist_str = " ".join(f"N{n}" for n in history)

        for k in range(spec.impressions_per_user + 1):
            cands: list[int] = []
            taken = set(seen)
            # half the slate follows the user's interests, half is uniform over the catalog
            n_interest = spec.candidates_per_impression // 2
            for s in urng.choice(n_sub, size=n_interest, p=prof):
                n = pick_news(urng, s, taken)
                cands.append(n)
                taken.add(n)
            while len(cands) < spec.candidates_per_impression:
                n = int(urng.integers(spec.n_news))
                if n not in taken:
                    cands.append(n)
                    taken.add(n)
            weights = prof[news_sub[cands]] + 1e-3
            clicked = set(urng.choice(
                len(cands), size=spec.positives_per_impression, replace=False, p=weights / weights.sum()
            ).tolist())
            urng.shuffle(order := np.arange(len(cands)))
            slate = " ".join(f"N{cands[i]}-{int(i in clicked)}" for i in order)
            imp_counter += 1
            line = f"{imp_counter}\t{uid}\t\t{hist_str}\t{slate}\n"
            (test_lines if k == spec.impressions_per_user else train_lines).append(line)

    return SyntheticCorpus(spec, news_lines, train_lines, test_lines, names, profiles)
