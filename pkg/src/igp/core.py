"""Shared domain types, the fixed prompt templates, and dataset/corpus loading.

All types are immutable after construction and safe to share across workers.
Prompt rendering is a pure function of its inputs: identical inputs always
produce byte-identical strings.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence


@dataclass(frozen=True)
class Passage:
    """One retrievable evidence unit with a corpus-unique id."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("passage id must be non-empty")
        if not self.text:
            raise ValueError(f"passage {self.id!r} has empty text")


@dataclass(frozen=True)
class Query:
    """A question with optional gold answers (empty for unlabeled runs)."""

    id: str
    question: str
    gold_answers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.question:
            raise ValueError(f"query {self.id!r} has empty question")
        if any(not a for a in self.gold_answers):
            raise ValueError(f"query {self.id!r} has an empty gold answer")


@dataclass(frozen=True)
class CandidateSet:
    """First-stage retrieval output: (passage, retriever score) pairs,
    ordered by score descending, no duplicate passage ids."""

    query_id: str
    candidates: tuple[tuple[Passage, float], ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        prev: Optional[float] = None
        for passage, score in self.candidates:
            if passage.id in seen:
                raise ValueError(f"duplicate candidate id {passage.id!r}")
            seen.add(passage.id)
            if prev is not None and score > prev:
                raise ValueError("candidates not ordered by score descending")
            prev = score

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def passages(self) -> tuple[Passage, ...]:
        return tuple(p for p, _ in self.candidates)


@dataclass(frozen=True)
class EvidenceBudget:
    """Truncation contract: keep at most ``top_m`` passages, optionally
    guarded by a hard passage-token budget."""

    top_m: int
    token_guard: Optional[int] = None

    def __post_init__(self) -> None:
        if self.top_m < 1:
            raise ValueError("top_m must be >= 1")
        if self.token_guard is not None and self.token_guard < 1:
            raise ValueError("token_guard must be >= 1 when set")


DEFAULT_ANSWER_TEMPLATE = (
    "System: You are given a question and a set of documents.\n"
    "Answer the question using only the information in the documents.\n"
    "Output only the answer.\n"
    "\n"
    "User: Documents:\n"
    "{reference}\n"
    "\n"
    "Question: {question}\n"
    "Answer:"
)

DEFAULT_PROBE_UNCONDITIONAL = "User: {question}\nAssistant:"

DEFAULT_PROBE_CONDITIONAL = "User: {question}\nContext:\n{context}\nAssistant:"

_SLOT_RE = re.compile(r"\{(reference|question|context)\}")


def _render(template: str, slots: dict[str, str]) -> str:
    # Single-pass substitution: slot text inserted from user content is never
    # re-scanned, so braces inside passages or questions cannot inject slots.
    return _SLOT_RE.sub(lambda m: slots[m.group(1)], template)


@dataclass(frozen=True)
class PromptBundle:
    """The two fixed prompt templates: final answer generation and the short
    uncertainty-probing pair (no-evidence / single-evidence)."""

    answer_template: str = DEFAULT_ANSWER_TEMPLATE
    probe_unconditional: str = DEFAULT_PROBE_UNCONDITIONAL
    probe_conditional: str = DEFAULT_PROBE_CONDITIONAL

    def __post_init__(self) -> None:
        for slot in ("{reference}", "{question}"):
            if slot not in self.answer_template:
                raise ValueError(f"answer_template missing {slot}")
        if "{question}" not in self.probe_unconditional:
            raise ValueError("probe_unconditional missing {question}")
        for slot in ("{question}", "{context}"):
            if slot not in self.probe_conditional:
                raise ValueError(f"probe_conditional missing {slot}")


DEFAULT_PROMPTS = PromptBundle()


def format_reference(passages: Sequence[Passage]) -> str:
    """Serialize passages as ``[DOC 1] ...`` blocks joined by newlines.

    Indices always restart at 1 over the retained passages, regardless of
    their original retrieval ranks. The empty list yields an empty block.
    """
    return "\n".join(f"[DOC {i}] {p.text}" for i, p in enumerate(passages, 1))


def render_answer_prompt(
    query: Query,
    passages: Sequence[Passage],
    prompts: PromptBundle = DEFAULT_PROMPTS,
) -> str:
    """Render the final answer-generation prompt over the retained evidence."""
    return _render(
        prompts.answer_template,
        {"reference": format_reference(passages), "question": query.question},
    )


def render_probe_prompt(
    query: Query,
    passage: Optional[Passage] = None,
    prompts: PromptBundle = DEFAULT_PROMPTS,
) -> str:
    """Render the probing prompt; with a passage the conditional template is
    used, otherwise the no-evidence template. For a fixed query the two
    renderings differ only in the context block."""
    if passage is None:
        return _render(prompts.probe_unconditional, {"question": query.question})
    return _render(
        prompts.probe_conditional,
        {"question": query.question, "context": passage.text},
    )


def load_corpus(path: str | Path) -> Iterator[Passage]:
    """Stream passages from a JSON-Lines corpus of {"id", "contents"} objects."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON") from exc
            yield Passage(id=str(obj["id"]), text=obj["contents"])


def load_dataset(path: str | Path) -> list[Query]:
    """Load queries from a JSON-Lines dataset of
    {"id", "question", "golden_answers"} objects."""
    queries: list[Query] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON") from exc
            queries.append(
                Query(
                    id=str(obj["id"]),
                    question=obj["question"],
                    gold_answers=tuple(obj.get("golden_answers", ())),
                )
            )
    return queries
