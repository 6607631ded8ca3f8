import io
import json

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hierec.config import MatchConfig, ModelConfig, SyntheticSpec
from hierec.data import InterestIndex, SubtopicGroup, TopicGroup, build_interest_index
from hierec.hierarchy import InterestTree, build_interest_tree
from hierec.matching import (
    ScoreBreakdown,
    breakdowns,
    combine_scores,
    score_candidate,
    subtopic_level_score,
    topic_level_score,
    user_level_score,
    write_breakdowns_jsonl,
)
from hierec.model import HieRec, make_batch
from hierec.synthetic import generate

from .conftest import TINY_MODEL, TINY_SPEC

finite = st.floats(-1e3, 1e3, allow_nan=False)


def index_with(topic_id, topic_clicks, sub_id, sub_clicks, M):
    sub = SubtopicGroup(sub_id, sub_clicks, sub_clicks / M, ("N",) * sub_clicks)
    rest = SubtopicGroup(sub_id + 1, topic_clicks - sub_clicks, (topic_clicks - sub_clicks) / M, ())
    subs = (sub, rest) if topic_clicks > sub_clicks else (sub,)
    return InterestIndex(M, (TopicGroup(topic_id, topic_clicks, topic_clicks / M, subs),))


def test_user_level_score_examples():
    n = torch.tensor([1.0, 1.0, 0.0])
    assert user_level_score(n, InterestTree(torch.tensor([1.0, -1.0, 5.0]))) == 0
    assert user_level_score(n, InterestTree(n.clone())) == 2
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=400), rng.normal(size=400)
    got = user_level_score(torch.as_tensor(a), InterestTree(torch.as_tensor(b)))
    assert float(got) == pytest.approx(float(np.dot(a, b)), abs=1e-9)


def test_topic_level_ratio_and_zero_rule():
    cand = torch.tensor([3.0, 0.0])
    tree = InterestTree(torch.zeros(2), topic_reps={7: torch.tensor([1.0, 4.0])})
    index = index_with(7, 10, 1, 10, 50)
    raw, w, o_t = topic_level_score(cand, 7, tree, index)
    assert float(raw) == 3.0 and w == 0.2 and float(o_t) == pytest.approx(0.6)
    assert [float(x) for x in topic_level_score(cand, 8, tree, index)] == [0.0, 0.0, 0.0]
    full = index_with(7, 50, 1, 50, 50)
    raw, w, o_t = topic_level_score(cand, 7, tree, full)
    assert w == 1.0 and float(o_t) == float(raw)


def test_subtopic_level_ratio_and_zero_rule():
    cand = torch.tensor([2.0, 0.0])
    tree = InterestTree(torch.zeros(2), subtopic_reps={3: torch.tensor([1.0, 9.0])})
    raw, w, o_s = subtopic_level_score(cand, 3, tree, index_with(0, 10, 3, 5, 10))
    assert float(raw) == 2.0 and w == 0.5 and float(o_s) == 1.0
    assert [float(x) for x in subtopic_level_score(cand, 4, tree, index_with(0, 10, 3, 5, 10))] == [0, 0, 0]
    raw, w, o_s = subtopic_level_score(cand, 3, tree, index_with(0, 10, 3, 10, 10))
    assert float(o_s) == float(raw)


def test_combine_examples():
    cfg = MatchConfig()
    assert combine_scores(1.0, 1.0, 1.0, cfg) == pytest.approx(1.0)
    assert combine_scores(2.0, 0.0, 0.0, cfg) == pytest.approx(1.4)
    masked = cfg.masked(subtopic=False, topic=False, user=True)
    assert combine_scores(5.0, 7.0, 2.0, masked) == pytest.approx(0.15 * 2.0)


@given(finite, finite, finite, st.floats(0.01, 0.8), st.floats(0.01, 0.18))
def test_combine_identity_monotone_and_masks(o_s, o_t, o_g, ls, lt):
    cfg = MatchConfig(lambda_s=ls, lambda_t=lt)
    o = combine_scores(o_s, o_t, o_g, cfg)
    assert o == pytest.approx(ls * o_s + lt * o_t + (1 - ls - lt) * o_g, abs=1e-9)
    assert combine_scores(o_s + 1, o_t, o_g, cfg) > o
    assert combine_scores(o_s, o_t + 1, o_g, cfg) > o
    assert combine_scores(o_s, o_t, o_g + 1, cfg) > o
    no_s = cfg.masked(False, True, True)
    assert combine_scores(o_s, o_t, o_g, no_s) == pytest.approx(lt * o_t + (1 - ls - lt) * o_g, abs=1e-9)
    assert combine_scores(o_s + 123.0, o_t, o_g, no_s) == combine_scores(o_s, o_t, o_g, no_s)


@pytest.fixture(scope="module")
def setup():
    corpus = generate(SyntheticSpec(**TINY_SPEC))
    catalog, vocab = corpus.catalog()
    _, test = corpus.impressions()
    torch.manual_seed(0)
    model = HieRec(vocab.n_words, vocab.n_entities, vocab.n_topics, vocab.n_subtopics,
                   ModelConfig(**TINY_MODEL), dropout=0.0).double().eval()
    return catalog, test, model


def test_cold_start_scores_zero(setup):
    catalog, _, model = setup
    index = build_interest_index([], catalog)
    tree = build_interest_tree(index, catalog, model.news_encoder, model.hierarchy)
    bd = score_candidate(catalog[next(iter(catalog))], tree, index, model.news_encoder, MatchConfig())
    assert bd.o == 0 and bd.o_g == 0 and bd.o_t == 0 and bd.o_s == 0


def test_clicked_topic_unclicked_subtopic(setup):
    catalog, _, model = setup
    ids = list(catalog)
    first = catalog[ids[0]]
    sibling = next(catalog[n] for n in ids
                   if catalog[n].topic_id == first.topic_id and catalog[n].subtopic_id != first.subtopic_id)
    index = build_interest_index([ids[0]], catalog)
    tree = build_interest_tree(index, catalog, model.news_encoder, model.hierarchy)
    bd = score_candidate(sibling, tree, index, model.news_encoder, MatchConfig())
    assert bd.o_s == 0 and bd.o_s_raw == 0 and bd.w_s == 0
    assert bd.o_t != 0 and bd.w_t == 1.0


def test_batched_components_match_single_scoring(setup):
    catalog, test, model = setup
    cfg = MatchConfig()
    imps = test[:5]
    indices = [build_interest_index(imp.history, catalog) for imp in imps]
    batch = make_batch(indices, [imp.candidate_ids for imp in imps], catalog, dtype=torch.float64)
    with torch.no_grad():
        comp, _ = model(batch, catalog)
    rows = breakdowns(comp, cfg)
    k = 0
    for imp, index in zip(imps, indices):
        tree = build_interest_tree(index, catalog, model.news_encoder, model.hierarchy)
        for nid in imp.candidate_ids:
            single = score_candidate(catalog[nid], tree, index, model.news_encoder, cfg)
            for field in ("o_g", "o_t_raw", "o_s_raw", "w_t", "w_s", "o_t", "o_s", "o"):
                assert getattr(rows[k], field) == pytest.approx(getattr(single, field), abs=1e-10)
            k += 1
    # ranking within an impression ignores a constant shift of o_g
    o = comp.combine(cfg).view(len(imps), -1)
    shifted = comp.o_g + 5.0
    o2 = combine_scores(comp.o_s, comp.o_t, shifted, cfg).view(len(imps), -1)
    assert torch.equal(torch.argsort(o, dim=1), torch.argsort(o2, dim=1))


def test_breakdowns_jsonl():
    bd = ScoreBreakdown(1.0, 2.0, 3.0, 0.5, 0.25, 1.0, 0.75, 0.9)
    buf = io.StringIO()
    write_breakdowns_jsonl([("I1", "N1", 1, bd)], buf)
    rec = json.loads(buf.getvalue())
    assert rec["impression_id"] == "I1" and rec["o_s"] == 0.75 and rec["label"] == 1
