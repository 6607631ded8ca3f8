"""From an experiment config to prepared data, trained models and reports.

Command implementations live here so the CLI stays a thin argument layer
and tests can drive the same code paths in-process.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import pickle
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, MatchConfig
from .data import (
    Catalog,
    Impression,
    Vocabulary,
    dataset_statistics,
    load_pretrained_embeddings,
    parse_behaviors,
    parse_news_catalog,
    split_impressions,
)
from .evaluation import (
    ImpressionScores,
    metrics_report,
    paired_t_test,
    recall_curves,
    score_impressions,
)
from .model import HieRec, load_checkpoint
from .synthetic import generate
from .training import build_model, train

log = logging.getLogger(__name__)

ABLATIONS = {
    "user": (False, False, True),
    "user+topic": (False, True, True),
    "user+subtopic": (True, False, True),
    "full": (True, True, True),
}


@dataclass
class Prepared:
    catalog: Catalog
    vocab: Vocabulary
    train: list[Impression]
    val: list[Impression]
    test: list[Impression]
    stats: dict
    word_table: np.ndarray | None = None
    entity_table: np.ndarray | None = None
    coverage: dict | None = None


def _data_key(cfg: ExperimentConfig) -> str:
    payload = json.dumps(
        {"data": dataclasses.asdict(cfg.data), "title": cfg.model.max_title_len,
         "entities": cfg.model.max_entities},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def prepare(cfg: ExperimentConfig, out_dir: Path, use_cache: bool = True) -> tuple[Prepared, bool]:
    """Parse (or generate) the corpus; parsed artifacts are cached under ``out_dir/cache``.

    Returns the prepared data and whether it came from the cache.
    """
    cache = out_dir / "cache" / f"prepared-{_data_key(cfg)}.pkl"
    if use_cache and cache.exists():
        with open(cache, "rb") as fh:
            catalog_path = cache.with_suffix(".npz")
            bundle = pickle.load(fh)
        bundle["catalog"] = Catalog.load(catalog_path)
        bundle["vocab"] = Vocabulary.from_json(bundle["vocab"])
        prepared = Prepared(**bundle)
        return _split(prepared, cfg), True

    d = cfg.data
    if d.synthetic is not None:
        corpus = generate(d.synthetic)
        paths = corpus.write(out_dir / "synthetic")
        news_paths = [paths["news"]]
        train_path, test_path = paths["train_behaviors"], paths["test_behaviors"]
    else:
        news_paths = list(d.news)
        train_path, test_path = d.train_behaviors, d.test_behaviors
        for p in [*news_paths, train_path, test_path]:
            if p is None or not Path(p).exists():
                raise FileNotFoundError(f"missing data file: {p}")

    catalog, vocab, _ = parse_news_catalog(
        news_paths, max_title_len=cfg.model.max_title_len, max_entities=cfg.model.max_entities
    )
    train_imps, _ = parse_behaviors(train_path)
    test_imps, _ = parse_behaviors(test_path)
    stats = dataset_statistics(catalog, vocab, [train_imps, test_imps])

    word_table = entity_table = None
    coverage = None
    if d.word_vectors or d.entity_vectors:
        word_table, entity_table, coverage = load_pretrained_embeddings(
            vocab, d.word_vectors, d.entity_vectors, cfg.model.word_dim, cfg.model.entity_dim,
            seed=cfg.train.seed,
        )
        stats["embedding_coverage"] = coverage

    prepared = Prepared(catalog, vocab, train_imps, [], test_imps, stats, word_table, entity_table, coverage)
    cache.parent.mkdir(parents=True, exist_ok=True)
    catalog.save(cache.with_suffix(".npz"))
    bundle = {
        "train": train_imps, "val": [], "test": test_imps, "stats": stats, "vocab": vocab.to_json(),
        "word_table": word_table, "entity_table": entity_table, "coverage": coverage,
    }
    with open(cache, "wb") as fh:
        pickle.dump(bundle, fh)
    return _split(prepared, cfg), False


def _split(p: Prepared, cfg: ExperimentConfig) -> Prepared:
    tr, va, te = split_impressions(p.train + p.val, p.test, cfg.data.split, cfg.train.val_fraction,
                                   seed=cfg.train.seed)
    return dataclasses.replace(p, train=tr, val=va, test=te)


def train_model(
    cfg: ExperimentConfig, data: Prepared, seed: int, match: MatchConfig | None, out_dir: Path | None
):
    train_cfg = dataclasses.replace(cfg.train, seed=seed)
    model = build_model(data.vocab, cfg.model, train_cfg, data.word_table, data.entity_table, seed=seed)
    report = train(model, data.catalog, data.train, data.val, train_cfg, match or cfg.match,
                   cfg.evaluation, out_dir)
    return model, report


def mean_std(values: list[dict]) -> dict:
    keys = values[0].keys()
    return {
        k: {"mean": float(np.mean([v[k] for v in values])), "std": float(np.std([v[k] for v in values]))}
        for k in keys
    }


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_prepare(cfg: ExperimentConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    data, cached = prepare(cfg, out)
    log.info("prepared data %s", "from cache" if cached else "from source files")
    report = {
        "stats": data.stats,
        "splits": {"train": len(data.train), "val": len(data.val), "test": len(data.test)},
        "seconds": time.perf_counter() - t0,
    }
    write_json(out / "dataset_stats.json", report)
    return report


def run_train(cfg: ExperimentConfig, out: Path) -> dict:
    data, _ = prepare(cfg, out)
    runs = {}
    for seed in cfg.seeds:
        _, report = train_model(cfg, data, seed, cfg.match, out / f"seed{seed}")
        runs[str(seed)] = report.to_dict()
        runs[str(seed)]["checkpoint"] = str(Path(report.checkpoint).relative_to(out))
    write_json(out / "train_report.json", runs)
    return runs


def _checkpoint(out: Path, seed: int) -> HieRec:
    path = out / f"seed{seed}" / "checkpoint"
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint at {path}; run 'train' first")
    model, _ = load_checkpoint(path)
    return model


def cached_scores(cfg: ExperimentConfig, data: Prepared, out: Path, seed: int) -> ImpressionScores:
    """Per-component test scores of the trained model, stored once per seed for rescoring."""
    path = out / f"seed{seed}" / "test_scores.pkl"
    ckpt = out / f"seed{seed}" / "checkpoint" / "params.npz"
    if path.exists() and ckpt.exists() and path.stat().st_mtime >= ckpt.stat().st_mtime:
        with open(path, "rb") as fh:
            return pickle.load(fh)
    model = _checkpoint(out, seed)
    scores = score_impressions(model, data.catalog, data.test, cfg.evaluation.batch_size)
    with open(path, "wb") as fh:
        pickle.dump(scores, fh)
    return scores


def run_evaluate(cfg: ExperimentConfig, out: Path) -> dict:
    data, _ = prepare(cfg, out)
    per_seed = {}
    for seed in cfg.seeds:
        scores = cached_scores(cfg, data, out, seed)
        rep = metrics_report(scores.labels, scores.combined(cfg.match), cfg.evaluation.tie_half,
                             tuple(cfg.evaluation.ndcg_ks))
        per_seed[str(seed)] = rep
    result = {
        "per_seed": {seed: rep.to_dict() for seed, rep in per_seed.items()},
        "summary": mean_std([rep.headline() for rep in per_seed.values()]),
    }
    write_json(out / "metrics.json", result)
    return result


def run_ablate(cfg: ExperimentConfig, out: Path) -> dict:
    """The four score-mask variants; retrained per variant unless ``ablate.retrain`` is off."""
    data, _ = prepare(cfg, out)
    rows = {name: [] for name in ABLATIONS}
    per_imp = {name: [] for name in ABLATIONS}
    for seed in cfg.seeds:
        for name, mask in ABLATIONS.items():
            match = cfg.match.masked(*mask)
            if cfg.ablate.retrain:
                model, _ = train_model(cfg, data, seed, match, out / "ablate" / f"{name}-seed{seed}")
                scores = score_impressions(model, data.catalog, data.test, cfg.evaluation.batch_size)
            else:
                scores = cached_scores(cfg, data, out, seed)
            rep = metrics_report(scores.labels, scores.combined(match), cfg.evaluation.tie_half,
                                 tuple(cfg.evaluation.ndcg_ks))
            rows[name].append(rep.headline())
            per_imp[name].extend(rep.per_impression["auc"])
    result = {
        "variants": {name: mean_std(v) for name, v in rows.items()},
        "per_seed": rows,
        "t_test_full_vs_user": paired_t_test(per_imp["full"], per_imp["user"]),
    }
    write_json(out / "ablation.json", result)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "auc", "mrr", "ndcg5", "ndcg10"])
        for name, stats in result["variants"].items():
            w.writerow([name] + [f"{stats[k]['mean']:.4f}" for k in ("auc", "mrr", "ndcg5", "ndcg10")])
    return result


def run_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    """Grid over (lambda_s, lambda_t), rescoring cached components unless ``sweep.retrain``."""
    data, _ = prepare(cfg, out)
    grid = []
    for ls in cfg.sweep.lambda_s:
        for lt in cfg.sweep.lambda_t:
            match = dataclasses.replace(cfg.match, lambda_s=ls, lambda_t=lt)
            match.validate()
            vals = []
            for seed in cfg.seeds:
                if cfg.sweep.retrain:
                    model, _ = train_model(cfg, data, seed, match, out / "sweep" / f"{ls}-{lt}-seed{seed}")
                    scores = score_impressions(model, data.catalog, data.test, cfg.evaluation.batch_size)
                else:
                    scores = cached_scores(cfg, data, out, seed)
                rep = metrics_report(scores.labels, scores.combined(match), cfg.evaluation.tie_half,
                                     tuple(cfg.evaluation.ndcg_ks))
                vals.append(rep.headline())
            grid.append({"lambda_s": ls, "lambda_t": lt, **{k: v["mean"] for k, v in mean_std(vals).items()}})
    write_json(out / "sweep.json", {"grid": grid})
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["lambda_s", "lambda_t", "auc", "mrr", "ndcg5", "ndcg10"])
        w.writeheader()
        w.writerows(grid)
    return {"grid": grid}


def run_recall(cfg: ExperimentConfig, out: Path) -> dict:
    data, _ = prepare(cfg, out)
    per_seed = {}
    for seed in cfg.seeds:
        model = _checkpoint(out, seed)
        per_seed[str(seed)] = recall_curves(model, data.catalog, data.test, cfg.recall).to_dict()
    summary = {}
    for method in next(iter(per_seed.values()))["methods"]:
        summary[method] = {}
        for metric in ("recall", "ilad"):
            curves = np.array([rep["methods"][method][metric] for rep in per_seed.values()])
            summary[method][metric] = {"mean": curves.mean(axis=0).tolist(), "std": curves.std(axis=0).tolist()}
    write_json(out / "recall.json", {"per_seed": per_seed, "summary": summary})
    with open(out / "recall.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "method", "k", "recall", "ilad"])
        for seed, rep in per_seed.items():
            for method, curves in rep["methods"].items():
                for k, r, d in zip(rep["ks"], curves["recall"], curves["ilad"]):
                    w.writerow([seed, method, k, f"{r:.6f}", f"{d:.6f}"])
    return {"per_seed": per_seed, "summary": summary}
