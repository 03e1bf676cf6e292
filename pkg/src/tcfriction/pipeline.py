"""Stage runners. Each stage reads and writes only the documented work files.

Work directory layout::

    tasks.jsonl      canonical task table (ingest)
    ingest.json      input checksums and counts (ingest)
    cache.jsonl      append-only score cache (score; path configurable)
    corpus.json      canonical scored corpus (score)
    aggregate.json   occupation metrics, group headlines, exclusions (aggregate)
    tests.json       group comparison results (analyze)
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .aggregate import (
    GroupHeadline,
    OccupationMetrics,
    aggregate_all,
    group_headline,
    join_scores,
    omitted_occupations,
)
from .config import PipelineConfig, file_sha256
from .errors import MissingStageInput
from .frictionmap import emit_summary_pack, quadrant_classify, resolve_thresholds
from .ingest import (
    RoleGroup,
    build_task_table,
    dedup_tasks,
    dump_task_table,
    load_task_table,
    parse_task_ratings,
    parse_task_statements,
    whitespace_variants,
)
from .scorer import MockBackend, RemoteBackend, ScoreCache, ScoredCorpus, score_corpus
from .stats import TestResult, compare_groups

logger = logging.getLogger(__name__)


@dataclass
class StageReport:
    stage: str
    records_in: int
    records_out: int
    duration_s: float
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "records_in": self.records_in,
            "records_out": self.records_out,
            "duration_s": round(self.duration_s, 3),
            "warnings": self.warnings,
        }


def _write_atomic(path: Path, data: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def _read(path: Path, stage: str, producer: str) -> str:
    if not path.is_file():
        raise MissingStageInput(f"{stage}: {path} not found; run the {producer} stage first")
    return path.read_text(encoding="utf-8")


def make_backend(cfg: PipelineConfig):
    if cfg.backend == "mock":
        return MockBackend()
    return RemoteBackend(cfg.endpoint, cfg.deployment, cfg.api_version, cfg.api_key,
                         timeout=cfg.request_timeout)


def run_ingest(cfg: PipelineConfig) -> StageReport:
    t0 = time.perf_counter()
    with open(cfg.statements_path, encoding="utf-8", newline="") as fh:
        statements = parse_task_statements(fh, str(cfg.statements_path))
    with open(cfg.ratings_path, encoding="utf-8", newline="") as fh:
        ratings = parse_task_ratings(fh, str(cfg.ratings_path))
    table = build_task_table(statements, ratings, cfg.health_filter())
    unique, _ = dedup_tasks(table)
    variants = whitespace_variants(unique)
    info = {
        "inputs": {
            "statements": {"file": cfg.statements_path.name,
                           "sha256": file_sha256(cfg.statements_path)},
            "ratings": {"file": cfg.ratings_path.name, "sha256": file_sha256(cfg.ratings_path)},
        },
        "counts": {
            "statement_rows": len(statements),
            "rating_rows": len(ratings),
            "table_rows": len(table),
            "occupations": len({r.soc_code for r in table}),
            "unique_tasks": len(unique),
        },
        "weight_sources": dict(sorted(Counter(r.weight_source.value for r in table).items())),
        "whitespace_variants": [list(p) for p in variants],
    }
    _write_atomic(cfg.work_dir / "tasks.jsonl", dump_task_table(table))
    _write_atomic(cfg.work_dir / "ingest.json", _dump_json(info))
    warnings = [f"task texts differ only by whitespace: {a!r} / {b!r}" for a, b in variants]
    return StageReport("ingest", len(statements), len(table), time.perf_counter() - t0, warnings)


def run_score(cfg: PipelineConfig, backend=None, **score_kwargs) -> StageReport:
    t0 = time.perf_counter()
    table = load_task_table(_read(cfg.work_dir / "tasks.jsonl", "score", "ingest"))
    unique, _ = dedup_tasks(table)
    backend = backend or make_backend(cfg)
    cache = ScoreCache(cfg.resolved_cache_path)
    try:
        corpus = score_corpus(unique, backend, cache, cfg.policy(), **score_kwargs)
    finally:
        if hasattr(backend, "close"):
            backend.close()
    _write_atomic(cfg.work_dir / "corpus.json", corpus.dumps())
    warnings = [f"{len(corpus.failures)} task(s) failed scoring and are excluded"] if corpus.failures else []
    return StageReport("score", len(table), len(corpus.scores) + len(corpus.failures),
                       time.perf_counter() - t0, warnings)


def run_aggregate(cfg: PipelineConfig) -> StageReport:
    t0 = time.perf_counter()
    table = load_task_table(_read(cfg.work_dir / "tasks.jsonl", "aggregate", "ingest"))
    corpus = ScoredCorpus.loads(_read(cfg.work_dir / "corpus.json", "aggregate", "score"))
    rows, exclusions = join_scores(table, corpus)
    metrics = aggregate_all(rows, exclusions)
    headlines = []
    for group in (RoleGroup.NON_CLINICIAN, RoleGroup.CLINICIAN):
        if any(r.role_group == group for r in rows):
            headlines.append(group_headline(rows, group, metrics, cfg.headline_pooling))
    omitted = omitted_occupations(metrics, exclusions)
    doc = {
        "metrics": [m.as_dict() for m in metrics],
        "headlines": [h.as_dict() for h in headlines],
        "exclusions": exclusions,
        "omitted_occupations": omitted,
        "headline_pooling": cfg.headline_pooling,
    }
    _write_atomic(cfg.work_dir / "aggregate.json", _dump_json(doc))
    warnings = [f"occupation {soc} omitted: every task failed scoring" for soc in omitted]
    return StageReport("aggregate", len(table), len(metrics), time.perf_counter() - t0, warnings)


def _load_aggregate(cfg, stage):
    doc = json.loads(_read(cfg.work_dir / "aggregate.json", stage, "aggregate"))
    metrics = [OccupationMetrics.from_dict(d) for d in doc["metrics"]]
    headlines = [GroupHeadline.from_dict(d) for d in doc["headlines"]]
    return doc, metrics, headlines


def run_analyze(cfg: PipelineConfig) -> StageReport:
    t0 = time.perf_counter()
    _, metrics, _ = _load_aggregate(cfg, "analyze")
    tests = compare_groups(metrics, cfg.mw_method)
    _write_atomic(cfg.work_dir / "tests.json", _dump_json([t.as_dict() for t in tests]))
    return StageReport("analyze", len(metrics), len(tests), time.perf_counter() - t0)


def run_report(cfg: PipelineConfig) -> StageReport:
    t0 = time.perf_counter()
    doc, metrics, headlines = _load_aggregate(cfg, "report")
    tests = [TestResult.from_dict(d) for d in
             json.loads(_read(cfg.work_dir / "tests.json", "report", "analyze"))]
    ingest_info = json.loads(_read(cfg.work_dir / "ingest.json", "report", "ingest"))
    corpus = ScoredCorpus.loads(_read(cfg.work_dir / "corpus.json", "report", "score"))
    thresholds = resolve_thresholds(metrics, cfg.tci_cut, cfg.sd_cut)
    points = quadrant_classify(metrics, thresholds)
    model_ids = sorted({s.meta.model_id for s in corpus.scores.values()})
    provenance = {
        "tool": {"name": "tcfriction", "version": __version__},
        "inputs": ingest_info["inputs"],
        "counts": dict(ingest_info["counts"],
                       scored_tasks=len(corpus.scores), failed_tasks=len(corpus.failures),
                       occupations_reported=len(metrics)),
        "weight_sources": ingest_info["weight_sources"],
        "config": cfg.snapshot(),
        "backend": {"backend_id": corpus.backend_id, "model_ids": model_ids,
                    "policy": corpus.policy},
        "exclusions": doc["exclusions"],
        "omitted_occupations": doc["omitted_occupations"],
        "repaired_tasks": sum(1 for s in corpus.scores.values() if s.meta.repaired),
    }
    pack = emit_summary_pack(metrics, headlines, tests, points, cfg.output_dir,
                             thresholds=thresholds, provenance=provenance, figure=cfg.figure)
    return StageReport("report", len(metrics), len(pack.manifest), time.perf_counter() - t0)


def run_all(cfg: PipelineConfig, backend=None, **score_kwargs) -> list[StageReport]:
    return [
        run_ingest(cfg),
        run_score(cfg, backend, **score_kwargs),
        run_aggregate(cfg),
        run_analyze(cfg),
        run_report(cfg),
    ]


def run_stage(stage: str, cfg: PipelineConfig, backend=None) -> list[StageReport]:
    runners = {
        "ingest": run_ingest,
        "aggregate": run_aggregate,
        "analyze": run_analyze,
        "report": run_report,
    }
    if stage == "run":
        return run_all(cfg, backend)
    if stage == "score":
        return [run_score(cfg, backend)]
    return [runners[stage](cfg)]
