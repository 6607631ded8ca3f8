import json
import os

import pytest
import torch
import yaml
from hypothesis import settings

from hierec.config import SyntheticSpec

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))
torch.set_num_threads(1)

TINY_SPEC = dict(
    n_topics=3, subtopics_per_topic=2, vocab_size=80, n_news=120, n_users=40, clicks_per_user=8,
    candidates_per_impression=6, positives_per_impression=1, impressions_per_user=1, title_len=5,
)
TINY_MODEL = dict(
    word_dim=8, entity_dim=4, text_heads=2, text_head_dim=4, entity_heads=1, entity_head_dim=4,
    news_dim=8, query_dim=4, count_dim=3,
)


def news_row(nid, topic, sub, title, entities=()):
    ents = [{"Label": e, "Type": "P", "WikidataId": e, "Confidence": 1.0,
             "OccurrenceOffsets": [i], "SurfaceForms": [e]} for i, e in enumerate(entities)]
    return "\t".join([nid, topic, sub, title, "abstract", "http://x", json.dumps(ents), "[]"]) + "\n"


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(**TINY_SPEC)


@pytest.fixture
def tiny_config(tmp_path):
    """Path to a YAML config for a seconds-scale synthetic experiment."""
    cfg = {
        "seeds": [0],
        "data": {"synthetic": TINY_SPEC},
        "model": TINY_MODEL,
        "train": {"epochs": 2, "learning_rate": 0.001},
        "recall": {"ks": [10, 20]},
        "sweep": {"lambda_s": [0.6, 0.7], "lambda_t": [0.1, 0.15]},
        "ablate": {"retrain": False},
    }
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


# one line per acceptance criterion, printed after the run so it survives output capture
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
