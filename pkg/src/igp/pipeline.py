"""End-to-end run engine: configuration, per-query records, the probing
rollout cache used by sweeps, and dataset-level aggregation.

Each run writes one directory: a config snapshot, per-query records as
JSON-Lines, and a one-row summary CSV. Records are replayable: a record plus
the corpus reconstructs the exact final prompt. Timing fields are the only
nondeterministic content, so replay comparisons exclude them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from .core import (
    CandidateSet,
    EvidenceBudget,
    Passage,
    PromptBundle,
    DEFAULT_PROMPTS,
    Query,
    load_corpus,
    load_dataset,
    render_answer_prompt,
)
from .evaluate import (
    QrelSet,
    SampleResult,
    dataset_summary,
    f1_best_of_refs,
    is_closed_set_yes_no,
    load_qrels,
    ndcg_at_k,
)
from .probe import (
    HttpBackend,
    ProbeBackend,
    ProbeConfig,
    Rollout,
    StubBackend,
    UnsupportedCapabilityError,
)
from .retrieve import Bm25Params, InvertedIndex, load_index, search
from .select import (
    DEFAULT_YESNO_TEMPLATE,
    RankedList,
    igp_rerank,
    qlm_rerank,
    retriever_ranked,
    truncate,
    whitespace_token_count,
    yesno_rerank,
)

API_KEY_ENV = "IGP_API_KEY"

RERANK_METHODS = ("none", "ig", "igp", "qlm", "yesno")

SUMMARY_COLUMNS = ("method", "topm", "tp", "f1", "tk", "nte", "ndcg", "n")


@dataclass
class RunConfig:
    """Everything one end-to-end run needs. Exactly one probing backend may
    be configured (stub table file, or HTTP endpoint plus model name)."""

    index_path: str
    dataset_path: str
    out_dir: str
    corpus_path: Optional[str] = None
    qrels_path: Optional[str] = None
    stub_path: Optional[str] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    rerank: str = "igp"
    tp: float = 0.05
    top_m: int = 5
    token_guard: Optional[int] = None
    top_n: int = 5
    top_k: int = 128
    max_tokens: int = 32
    answer_max_tokens: int = 32
    parallelism: int = 4
    generate: bool = True
    labeled_only: bool = False
    common_horizon: bool = False
    failure_ceiling: float = 0.0
    yesno_template: str = DEFAULT_YESNO_TEMPLATE

    def __post_init__(self) -> None:
        if self.rerank not in RERANK_METHODS:
            raise ValueError(f"unknown rerank method {self.rerank!r}")
        if (self.stub_path is None) == (self.endpoint is None):
            raise ValueError("configure exactly one backend: stub_path or endpoint")
        if self.endpoint is not None and not self.model:
            raise ValueError("an HTTP backend needs a model name")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @property
    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(top_k=self.top_k, max_tokens=self.max_tokens)

    @property
    def budget(self) -> EvidenceBudget:
        return EvidenceBudget(top_m=self.top_m, token_guard=self.token_guard)


def make_backend(config: RunConfig) -> ProbeBackend:
    if config.stub_path is not None:
        return StubBackend.load(config.stub_path)
    return HttpBackend(
        base_url=config.endpoint,
        model=config.model,
        api_key=os.environ.get(API_KEY_ENV),
    )


class CountingBackend(ProbeBackend):
    """Wrapper that counts probing calls; used for per-query accounting."""

    def __init__(self, inner: ProbeBackend):
        self._inner = inner
        self._lock = threading.Lock()
        self.calls = 0

    def _bump(self) -> None:
        with self._lock:
            self.calls += 1

    def greedy_rollout(self, prompt, cfg):
        self._bump()
        return self._inner.greedy_rollout(prompt, cfg)

    def force_score(self, prompt, continuation, cfg):
        self._bump()
        return self._inner.force_score(prompt, continuation, cfg)

    def first_step_distribution(self, prompt, cfg):
        self._bump()
        return self._inner.first_step_distribution(prompt, cfg)

    def complete_text(self, prompt, max_tokens):
        self._bump()
        return self._inner.complete_text(prompt, max_tokens)


class RolloutCache:
    """Memoizes probing rollouts across the runs of a sweep.

    Keyed by (prompt hash, max-token cap). The Top-K width is not part of the
    key: a rollout probed at some width serves any smaller width, since the
    uncertainty math truncates the recorded entries itself. A cached rollout
    probed at a narrower width than requested is re-probed.
    """

    def __init__(self, probe_k: Optional[int] = None):
        self._probe_k = probe_k
        self._lock = threading.Lock()
        self._store: dict[tuple[str, int], tuple[int, Rollout]] = {}
        self.hits = 0
        self.misses = 0

    def source(self, backend: ProbeBackend, cfg: ProbeConfig):
        probe_cfg = cfg if self._probe_k is None else replace(cfg, top_k=max(cfg.top_k, self._probe_k))

        def fetch(prompt: str) -> Rollout:
            key = (hashlib.sha256(prompt.encode("utf-8")).hexdigest(), probe_cfg.max_tokens)
            with self._lock:
                cached = self._store.get(key)
                if cached is not None and cached[0] >= cfg.top_k:
                    self.hits += 1
                    return cached[1]
            rollout = backend.greedy_rollout(prompt, probe_cfg)
            with self._lock:
                self._store[key] = (probe_cfg.top_k, rollout)
                self.misses += 1
            return rollout

        return fetch


@dataclass
class RunRecord:
    """Per-query provenance: everything behind each number in the summary."""

    query_id: str
    question: str
    method: str
    candidates: list[dict]
    scores: list[dict]
    admitted_ids: list[str]
    final_prompt: str
    prediction: Optional[str]
    f1: Optional[float]
    input_tokens: int
    ndcg: Optional[float]
    probe_calls: int
    probe_failures: int
    timings: dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None

    def to_json_dict(self) -> dict:
        return asdict(self)


def _score_dicts(ranked: RankedList) -> list[dict]:
    out = []
    for entry in ranked.entries:
        item: dict = {
            "passage_id": entry.passage.id,
            "kind": entry.score_kind,
            "score": None if entry.error is not None else entry.score,
            "admitted": entry.admitted,
            "error": entry.error,
        }
        if entry.ig is not None:
            item["nu_unconditional"] = entry.ig.nu_unconditional.value
            item["nu_conditional"] = entry.ig.nu_conditional.value
        out.append(item)
    return out


def rerank_candidates(
    query: Query,
    candidates: CandidateSet,
    backend: ProbeBackend,
    config: RunConfig,
    prompts: PromptBundle = DEFAULT_PROMPTS,
    rollout_source=None,
) -> RankedList:
    """Dispatch to the configured rerank method. "ig" is pure information-
    gain reordering (threshold disabled); "none" keeps retriever order."""
    if not candidates.candidates:
        return RankedList(query_id=query.id, entries=())
    method = config.rerank
    if method == "none":
        return retriever_ranked(candidates)
    if method in ("ig", "igp"):
        t_p = float("-inf") if method == "ig" else config.tp
        return igp_rerank(
            query,
            candidates,
            backend,
            config.probe_config,
            t_p,
            prompts=prompts,
            parallelism=config.parallelism,
            common_horizon=config.common_horizon,
            rollout_source=rollout_source,
        )
    if method == "qlm":
        return qlm_rerank(
            query,
            candidates,
            backend,
            config.probe_config,
            prompts=prompts,
            parallelism=config.parallelism,
        )
    if method == "yesno":
        return yesno_rerank(
            query,
            candidates,
            backend,
            config.probe_config,
            yesno_template=config.yesno_template,
            parallelism=config.parallelism,
        )
    raise ValueError(f"unknown rerank method {method!r}")


def run_query(
    query: Query,
    index: InvertedIndex,
    backend: ProbeBackend,
    config: RunConfig,
    qrels: Optional[QrelSet] = None,
    prompts: PromptBundle = DEFAULT_PROMPTS,
    rollout_source=None,
) -> RunRecord:
    """retrieve -> rerank -> truncate -> render -> (generate) -> score."""
    counting = CountingBackend(backend)
    t0 = time.monotonic()
    candidates = search(
        index,
        query.question,
        Bm25Params(top_n=config.top_n),
        query_id=query.id,
    )
    ranked = rerank_candidates(
        query, candidates, counting, config, prompts, rollout_source
    )
    t_rerank = time.monotonic()
    selected = truncate(ranked, config.budget, whitespace_token_count)
    prompt = render_answer_prompt(query, selected.passages, prompts)

    prediction: Optional[str] = None
    if config.generate:
        try:
            prediction = counting.complete_text(prompt, config.answer_max_tokens)
        except UnsupportedCapabilityError:
            prediction = None
    t_generate = time.monotonic()

    f1: Optional[float] = None
    if prediction is not None and query.gold_answers:
        f1 = f1_best_of_refs(
            prediction,
            query.gold_answers,
            closed_set_yes_no=is_closed_set_yes_no(query.gold_answers),
        )

    ndcg: Optional[float] = None
    if qrels is not None and query.id in qrels:
        ndcg = ndcg_at_k(list(ranked.admitted_ids), qrels[query.id], config.top_m)

    score_dicts = _score_dicts(ranked)
    return RunRecord(
        query_id=query.id,
        question=query.question,
        method=config.rerank,
        candidates=[
            {"passage_id": p.id, "retriever_score": s}
            for p, s in candidates.candidates
        ],
        scores=score_dicts,
        admitted_ids=list(ranked.admitted_ids),
        final_prompt=prompt,
        prediction=prediction,
        f1=f1,
        input_tokens=whitespace_token_count(prompt),
        ndcg=ndcg,
        probe_calls=counting.calls,
        probe_failures=sum(1 for s in score_dicts if s["error"]),
        timings={
            "rerank_s": t_rerank - t0,
            "generate_s": t_generate - t_rerank,
            "total_s": time.monotonic() - t0,
        },
    )


def _mean(values: list[float]) -> Optional[float]:
    if not values:
        return None
    return math.fsum(values) / len(values)


@dataclass
class RunResult:
    records: list[RunRecord]  # includes failed queries, error field set
    summary: dict
    failed: int

    @property
    def failure_rate(self) -> float:
        return self.failed / len(self.records) if self.records else 0.0


def run_dataset(
    config: RunConfig,
    backend: Optional[ProbeBackend] = None,
    cache: Optional[RolloutCache] = None,
    prompts: PromptBundle = DEFAULT_PROMPTS,
) -> RunResult:
    """Run the whole dataset, persist records and the summary row, and return
    both. Per-query failures are recorded and skipped; the caller decides
    whether the failure rate breaches the configured ceiling."""
    index = load_index(config.index_path)
    queries = load_dataset(config.dataset_path)
    qrels = load_qrels(config.qrels_path) if config.qrels_path else None
    if config.labeled_only and qrels is not None:
        queries = [q for q in queries if q.gold_answers and q.id in qrels]
    if backend is None:
        backend = make_backend(config)
    rollout_source = cache.source(backend, config.probe_config) if cache else None

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(asdict(config), indent=2, sort_keys=True), encoding="utf-8"
    )

    def process(query: Query) -> RunRecord:
        try:
            return run_query(
                query, index, backend, config, qrels, prompts, rollout_source
            )
        except Exception as exc:
            return RunRecord(
                query_id=query.id,
                question=query.question,
                method=config.rerank,
                candidates=[],
                scores=[],
                admitted_ids=[],
                final_prompt="",
                prediction=None,
                f1=None,
                input_tokens=0,
                ndcg=None,
                probe_calls=0,
                probe_failures=0,
                error=f"{type(exc).__name__}: {exc}",
            )

    workers = min(config.parallelism, max(len(queries), 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(process, queries))
    else:
        records = [process(q) for q in queries]

    ok = [r for r in records if r.error is None]
    failed = len(records) - len(ok)

    f1_values = [r.f1 for r in ok if r.f1 is not None]
    ndcg_values = [r.ndcg for r in ok if r.ndcg is not None]
    if ok and len(f1_values) == len(ok):
        agg = dataset_summary(
            [
                SampleResult(r.query_id, r.prediction or "", r.f1, r.input_tokens, r.ndcg)
                for r in ok
            ]
        )
        f1_mean, tk_mean, n = agg.f1_mean, agg.tk_mean, agg.n_samples
    else:
        f1_mean = _mean(f1_values)
        tk_mean = _mean([float(r.input_tokens) for r in ok])
        n = len(ok)

    summary = {
        "method": config.rerank,
        "topm": config.top_m,
        "tp": config.tp if config.rerank == "igp" else "",
        "f1": f1_mean if f1_mean is not None else "",
        "tk": tk_mean if tk_mean is not None else "",
        "nte": "",
        "ndcg": _mean(ndcg_values) if ndcg_values else "",
        "n": n,
    }

    with open(out_dir / "records.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_dict(), sort_keys=True) + "\n")
    write_summary_csv(out_dir / "summary.csv", [summary])

    return RunResult(records=records, summary=summary, failed=failed)


def write_summary_csv(path: str | Path, rows: list[dict], extra_columns: tuple = ()) -> None:
    columns = list(SUMMARY_COLUMNS) + [c for c in extra_columns if c not in SUMMARY_COLUMNS]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_summary_csv(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def load_records(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_passage_map(corpus_path: str | Path) -> dict[str, Passage]:
    return {p.id: p for p in load_corpus(corpus_path)}
