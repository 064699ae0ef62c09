#!/usr/bin/env python3
"""Generate a small self-contained demo world for the CLI walkthrough.

Writes a corpus, a dataset, qrels, and a scripted stub-backend table into a
target directory. The stub is keyed on the exact prompts the pipeline will
render: conditional probes on gold passages collapse uncertainty, probes on
distractors inflate it, and only the gold-only answer prompt yields the
correct answer. That makes gain-based pruning visibly beat retriever order
on both quality and token cost, at desk scale, with no model attached.

Usage:
    python scripts/make_demo_fixture.py demo/
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from igp.core import Passage, Query, render_answer_prompt, render_probe_prompt
from igp.retrieve import Analyzer, Bm25Params, build_index, search
from igp.select import DEFAULT_YESNO_TEMPLATE

TOPICS = [
    ("q0", "where does one find the cobalt lantern today", "ivory harbor"),
    ("q1", "where does one find the marble compass today", "cedar vault"),
    ("q2", "where does one find the copper astrolabe today", "granite spire"),
]


def pad(word: str, n: int) -> str:
    return " ".join(f"{word}{j}" for j in range(n))


def build(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    passages: dict[str, Passage] = {}
    corpus_rows, dataset_rows, qrel_lines = [], [], []
    queries: list[Query] = []
    gold_of: dict[str, str] = {}

    def add(pid: str, text: str) -> None:
        passages[pid] = Passage(pid, text)
        corpus_rows.append({"id": pid, "contents": text})

    for i, (qid, question, answer) in enumerate(TOPICS):
        terms = " ".join(question.split()[-3:-1])  # the two topic words
        queries.append(Query(qid, question, (answer,)))
        dataset_rows.append(
            {"id": qid, "question": question, "golden_answers": [answer]}
        )
        gold_id = f"{qid}-gold"
        gold_of[qid] = gold_id
        add(f"{qid}-strong1", f"{terms} " * 4 + pad(f"lore{i}x", 50))
        add(f"{qid}-strong2", f"{terms} " * 3 + pad(f"myth{i}x", 48))
        add(gold_id, f"{terms} rests within {answer} according to keepers " + pad(f"note{i}x", 8))
        add(f"{qid}-weak1", f"{terms} " + pad(f"dust{i}x", 36))
        add(f"{qid}-weak2", f"{terms} " + pad(f"mist{i}x", 36))
        for j in range(10):
            add(f"{qid}-filler{j}", pad(f"tide{i}f{j}x", 24))
        qrel_lines += [
            f"{qid}\t{qid}-strong1\t2",
            f"{qid}\t{qid}-strong2\t1",
            f"{qid}\t{gold_id}\t0",
        ]

    (out_dir / "corpus.jsonl").write_text(
        "\n".join(json.dumps(r) for r in corpus_rows) + "\n", encoding="utf-8"
    )
    (out_dir / "dataset.jsonl").write_text(
        "\n".join(json.dumps(r) for r in dataset_rows) + "\n", encoding="utf-8"
    )
    (out_dir / "qrels.tsv").write_text("\n".join(qrel_lines) + "\n", encoding="utf-8")

    uniform = {"top_logprobs": {"a": 0.0, "b": 0.0, "c": 0.0, "d": 0.0}}
    onehot = {"top_logprobs": {"a": 0.0, "b": -1000.0, "c": -1000.0, "d": -1000.0}}
    table: dict = {
        "prompts": {},
        "default": {"steps": [uniform, uniform], "text": "unknown answer"},
    }

    index = build_index((Passage(r["id"], r["contents"]) for r in corpus_rows), Analyzer())
    for query in queries:
        gold_id = gold_of[query.id]
        retrieved = search(index, query.question, Bm25Params(top_n=5), query.id)
        table["prompts"][render_probe_prompt(query, None)] = {
            "steps": [uniform, uniform, uniform, onehot]
        }
        for passage in retrieved.passages:
            profile = [onehot, onehot] if passage.id == gold_id else [uniform, uniform]
            table["prompts"][render_probe_prompt(query, passage)] = {"steps": profile}
            yes = -0.1 if passage.id == f"{query.id}-strong2" else -2.4
            yesno_prompt = DEFAULT_YESNO_TEMPLATE.replace(
                "{question}", query.question
            ).replace("{context}", passage.text)
            table["prompts"][yesno_prompt] = {
                "steps": [{"top_logprobs": {"Yes": yes, "No": -2.5 - yes}}]
            }
        answer = query.gold_answers[0]
        top5 = list(retrieved.passages)
        table["prompts"][render_answer_prompt(query, [passages[gold_id]])] = {"text": answer}
        table["prompts"][render_answer_prompt(query, [top5[0]])] = {"text": "unknown answer"}
        table["prompts"][render_answer_prompt(query, top5)] = {"text": "unknown answer"}
        strong2 = passages[f"{query.id}-strong2"]
        table["prompts"][render_answer_prompt(query, [strong2])] = {
            "text": answer.split()[0] + " annex"
        }

    (out_dir / "stub.json").write_text(json.dumps(table, indent=1), encoding="utf-8")

    print(f"demo world -> {out_dir}")
    print("try:")
    print(f"  igp index --corpus {out_dir}/corpus.jsonl --out {out_dir}/bm25.idx")
    print(
        f"  igp run --index {out_dir}/bm25.idx --dataset {out_dir}/dataset.jsonl"
        f" --qrels {out_dir}/qrels.tsv --stub {out_dir}/stub.json"
        f" --topk 4 --max-tokens 8 --rerank igp --tp 0.05 --topm 5"
        f" --out {out_dir}/run-igp"
    )
    print(
        f"  igp sweep --index {out_dir}/bm25.idx --dataset {out_dir}/dataset.jsonl"
        f" --qrels {out_dir}/qrels.tsv --stub {out_dir}/stub.json"
        f" --topk 4 --max-tokens 8 --topm 5 --param tp --values=-inf,0,0.05"
        f" --out {out_dir}/sweep-tp"
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()
    build(args.out_dir)


if __name__ == "__main__":
    main()
