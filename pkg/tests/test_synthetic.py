import numpy as np
import pytest
from scipy import stats

from hierec.config import ConfigError, SyntheticSpec
from hierec.data import build_interest_index, parse_behaviors, parse_news_catalog
from hierec.synthetic import generate

from .conftest import TINY_SPEC


def test_same_seed_same_corpus():
    a, b = generate(SyntheticSpec(**TINY_SPEC)), generate(SyntheticSpec(**TINY_SPEC))
    assert a.news_lines == b.news_lines and a.train_lines == b.train_lines and a.test_lines == b.test_lines
    assert all(np.array_equal(a.profiles[u], b.profiles[u]) for u in a.profiles)
    c = generate(SyntheticSpec(**{**TINY_SPEC, "seed": 1}))
    assert c.train_lines != a.train_lines


def test_files_round_trip_and_counts(tmp_path):
    spec = SyntheticSpec(**TINY_SPEC)
    corpus = generate(spec)
    paths = corpus.write(tmp_path)
    catalog, vocab, pstats = parse_news_catalog(paths["news"])
    train, _ = parse_behaviors(paths["train_behaviors"])
    test, _ = parse_behaviors(paths["test_behaviors"])
    assert len(catalog) == spec.n_news and pstats.skipped == 0
    assert vocab.n_topics == spec.n_topics
    assert vocab.n_subtopics == spec.n_topics * spec.subtopics_per_topic
    assert len(train) == spec.n_users * spec.impressions_per_user and len(test) == spec.n_users
    for imp in train + test:
        assert len(imp.candidates) == spec.candidates_per_impression
        assert len(imp.positives) == spec.positives_per_impression
        assert len(imp.history) == spec.clicks_per_user
        assert all(n in catalog for n in imp.candidate_ids)
    # parsed subtopic ids follow the generator's subtopic order
    for s, (topic, sub) in enumerate(corpus.subtopic_names):
        assert vocab.subtopic_to_id[(topic, sub)] == s


def test_infinite_concentration_gives_one_subtopic():
    corpus = generate(SyntheticSpec(**{**TINY_SPEC, "kappa": 1e6}))
    catalog, _ = corpus.catalog()
    _, test = corpus.impressions()
    for imp in test:
        assert len({catalog[n].subtopic_id for n in imp.history}) == 1


def test_flat_profile_gives_uniform_topics():
    spec = SyntheticSpec(**{**TINY_SPEC, "kappa": 1e-9, "n_users": 300, "clicks_per_user": 20})
    corpus = generate(spec)
    catalog, _ = corpus.catalog()
    _, test = corpus.impressions()
    counts = np.bincount([catalog[n].topic_id for imp in test for n in imp.history], minlength=spec.n_topics)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_click_ratios_converge_to_profile():
    spec = SyntheticSpec(**{**TINY_SPEC, "n_users": 5, "clicks_per_user": 1000, "n_news": 400, "kappa": 2.0})
    corpus = generate(spec)
    catalog, _ = corpus.catalog()
    _, test = corpus.impressions()
    for imp in test:
        index = build_interest_index(imp.history, catalog, max_history=1000)
        empirical = np.zeros(len(corpus.subtopic_names))
        for sg in index.subtopic_groups():
            empirical[sg.subtopic_id] = sg.ratio
        assert np.abs(empirical - corpus.profiles[imp.user_id]).max() < 0.1


def test_invalid_spec():
    with pytest.raises(ConfigError):
        generate(SyntheticSpec(kappa=0))
    with pytest.raises(ConfigError):
        generate(SyntheticSpec(candidates_per_impression=2, positives_per_impression=2))
