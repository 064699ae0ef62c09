"""Evidence selection: information-gain rerank with threshold pruning, the
budget-truncation executor, and the generator-as-scorer rerank baselines.

Reranking produces a RankedList whose entries carry an admitted flag; the
truncate executor then keeps at most M admitted passages (optionally guarded
by a hard passage-token budget) without knowing or caring which scoring
method produced the list. Swapping the scorer never changes truncation
behavior for the same list.

Per-passage probing failures never abort a query: the failed candidate is
scored as rejected-with-error and recorded. Only an unavailable unconditional
baseline (no reference point for any score) aborts.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TypeVar

from .core import (
    CandidateSet,
    EvidenceBudget,
    Passage,
    PromptBundle,
    DEFAULT_PROMPTS,
    Query,
    render_probe_prompt,
)
from .probe import ProbeBackend, ProbeConfig, Rollout, UnsupportedCapabilityError
from .uncertainty import (
    IgScore,
    information_gain_from_rollouts,
    topk_renormalize,
)

SCORE_KINDS = ("ig", "qlm", "yesno", "retriever")

# Invented default; the generator-as-classifier baseline needs some fixed
# question prompt and none is standardized. Override via yesno_template.
DEFAULT_YESNO_TEMPLATE = (
    "User: {question}\n"
    "Context:\n"
    "{context}\n"
    "Does this document answer the question? Answer Yes or No.\n"
    "Assistant:"
)


class BaselineUnavailableError(Exception):
    """The backend lacks a capability this baseline requires."""


def whitespace_token_count(text: str) -> int:
    """Default token counter. A backend tokenizer can be injected instead
    when exact accounting against a specific model is needed."""
    return len(text.split())


TokenCounter = Callable[[str], int]
RolloutSource = Callable[[str], Rollout]


@dataclass(frozen=True)
class RankedEntry:
    passage: Passage
    score: float
    score_kind: str
    admitted: bool
    retriever_rank: int
    retriever_score: float
    ig: Optional[IgScore] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class RankedList:
    """Candidates sorted by score descending; ties break by original
    retriever rank, then passage id. Admission via a threshold is always
    prefix-closed: no lower-scored entry is admitted over a higher one."""

    query_id: str
    entries: tuple[RankedEntry, ...]

    @property
    def admitted_entries(self) -> tuple[RankedEntry, ...]:
        return tuple(e for e in self.entries if e.admitted)

    @property
    def admitted_ids(self) -> tuple[str, ...]:
        return tuple(e.passage.id for e in self.admitted_entries)


@dataclass(frozen=True)
class SelectedEvidence:
    query_id: str
    passages: tuple[Passage, ...]
    total_tokens: int


def _sort_entries(entries: Sequence[RankedEntry]) -> tuple[RankedEntry, ...]:
    return tuple(
        sorted(entries, key=lambda e: (-e.score, e.retriever_rank, e.passage.id))
    )


T = TypeVar("T")


def _map_candidates(
    fn: Callable[[int], T], count: int, parallelism: int
) -> list[T]:
    if parallelism <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=min(parallelism, count)) as pool:
        return list(pool.map(fn, range(count)))


def igp_rerank(
    query: Query,
    candidates: CandidateSet,
    backend: ProbeBackend,
    cfg: ProbeConfig,
    t_p: float,
    prompts: PromptBundle = DEFAULT_PROMPTS,
    parallelism: int = 1,
    common_horizon: bool = False,
    rollout_source: Optional[RolloutSource] = None,
) -> RankedList:
    """Rerank candidates by information gain and admit those with IG >= t_p.

    The no-evidence rollout is probed exactly once and shared across all
    candidates; the per-candidate conditional rollouts fan out concurrently
    up to ``parallelism`` workers. Passing ``t_p = -inf`` disables pruning and
    reduces to pure IG reordering. A ``rollout_source`` can be injected to
    serve rollouts from a cache instead of probing.
    """
    if not candidates.candidates:
        raise ValueError("candidates must be non-empty")
    probe: RolloutSource = rollout_source or (
        lambda p: backend.greedy_rollout(p, cfg)
    )
    # Unconditional NU unavailable means no candidate can be scored: abort.
    uncond = probe(render_probe_prompt(query, None, prompts))

    def score(i: int) -> RankedEntry:
        passage, retriever_score = candidates.candidates[i]
        try:
            cond = probe(render_probe_prompt(query, passage, prompts))
            ig = information_gain_from_rollouts(
                uncond,
                cond,
                cfg.top_k,
                passage_id=passage.id,
                mt=cfg.max_tokens,
                common_horizon=common_horizon,
            )
        except Exception as exc:
            return RankedEntry(
                passage=passage,
                score=-math.inf,
                score_kind="ig",
                admitted=False,
                retriever_rank=i,
                retriever_score=retriever_score,
                error=f"{type(exc).__name__}: {exc}",
            )
        return RankedEntry(
            passage=passage,
            score=ig.ig,
            score_kind="ig",
            admitted=ig.ig >= t_p,
            retriever_rank=i,
            retriever_score=retriever_score,
            ig=ig,
        )

    entries = _map_candidates(score, len(candidates.candidates), parallelism)
    return RankedList(query_id=candidates.query_id, entries=_sort_entries(entries))


def qlm_rerank(
    query: Query,
    candidates: CandidateSet,
    backend: ProbeBackend,
    cfg: ProbeConfig,
    prompts: PromptBundle = DEFAULT_PROMPTS,
    parallelism: int = 1,
) -> RankedList:
    """Query-likelihood baseline: score each candidate by the mean per-token
    logprob of the question forced after the document-conditioned probing
    prompt. No pruning; every scored candidate is admitted."""
    if not candidates.candidates:
        return RankedList(query_id=candidates.query_id, entries=())

    def score(i: int) -> RankedEntry:
        passage, retriever_score = candidates.candidates[i]
        prompt = render_probe_prompt(query, passage, prompts)
        try:
            lps = backend.force_score(prompt, query.question, cfg)
        except UnsupportedCapabilityError:
            raise
        except Exception as exc:
            return RankedEntry(
                passage=passage,
                score=-math.inf,
                score_kind="qlm",
                admitted=False,
                retriever_rank=i,
                retriever_score=retriever_score,
                error=f"{type(exc).__name__}: {exc}",
            )
        return RankedEntry(
            passage=passage,
            score=math.fsum(lps) / len(lps),
            score_kind="qlm",
            admitted=True,
            retriever_rank=i,
            retriever_score=retriever_score,
        )

    try:
        entries = _map_candidates(score, len(candidates.candidates), parallelism)
    except UnsupportedCapabilityError as exc:
        raise BaselineUnavailableError(
            f"query-likelihood baseline unavailable: {exc}"
        ) from exc
    return RankedList(query_id=candidates.query_id, entries=_sort_entries(entries))


_AFFIRMATIVE = "yes"


def yesno_rerank(
    query: Query,
    candidates: CandidateSet,
    backend: ProbeBackend,
    cfg: ProbeConfig,
    yesno_template: str = DEFAULT_YESNO_TEMPLATE,
    parallelism: int = 1,
) -> RankedList:
    """Yes/No baseline: score each candidate by the renormalized first-step
    probability mass on the affirmative token (case-insensitive "Yes" after
    whitespace stripping; 0 when absent from the Top-K set). No pruning."""
    if not candidates.candidates:
        return RankedList(query_id=candidates.query_id, entries=())
    slot_re = re.compile(r"\{(question|context)\}")

    def score(i: int) -> RankedEntry:
        passage, retriever_score = candidates.candidates[i]
        slots = {"question": query.question, "context": passage.text}
        prompt = slot_re.sub(lambda m: slots[m.group(1)], yesno_template)
        try:
            step = backend.first_step_distribution(prompt, cfg)
            mass = math.fsum(
                p
                for tok, p in topk_renormalize(step)
                if tok.strip().lower() == _AFFIRMATIVE
            )
        except Exception as exc:
            return RankedEntry(
                passage=passage,
                score=-math.inf,
                score_kind="yesno",
                admitted=False,
                retriever_rank=i,
                retriever_score=retriever_score,
                error=f"{type(exc).__name__}: {exc}",
            )
        return RankedEntry(
            passage=passage,
            score=mass,
            score_kind="yesno",
            admitted=True,
            retriever_rank=i,
            retriever_score=retriever_score,
        )

    entries = _map_candidates(score, len(candidates.candidates), parallelism)
    return RankedList(query_id=candidates.query_id, entries=_sort_entries(entries))


def retriever_ranked(candidates: CandidateSet) -> RankedList:
    """Pass-through ranking in retriever order with all candidates admitted."""
    entries = tuple(
        RankedEntry(
            passage=passage,
            score=retriever_score,
            score_kind="retriever",
            admitted=True,
            retriever_rank=i,
            retriever_score=retriever_score,
        )
        for i, (passage, retriever_score) in enumerate(candidates.candidates)
    )
    return RankedList(query_id=candidates.query_id, entries=_sort_entries(entries))


def truncate(
    ranked: RankedList,
    budget: EvidenceBudget,
    token_counter: TokenCounter = whitespace_token_count,
) -> SelectedEvidence:
    """Budget executor: keep admitted entries in order, at most M of them.

    When the token guard is set, the admitted prefix is scanned and the scan
    stops before the first passage whose inclusion would exceed the guard; no
    later, shorter passage is pulled forward to fill the gap.
    """
    kept: list[Passage] = []
    total = 0
    for entry in ranked.admitted_entries:
        if len(kept) >= budget.top_m:
            break
        n = token_counter(entry.passage.text)
        if budget.token_guard is not None and total + n > budget.token_guard:
            break
        kept.append(entry.passage)
        total += n
    return SelectedEvidence(
        query_id=ranked.query_id, passages=tuple(kept), total_tokens=total
    )
