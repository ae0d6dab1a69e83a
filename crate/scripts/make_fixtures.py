#!/usr/bin/env python3
"""Regenerates the mock scenarios under fixtures/.

Each scenario directory holds a dataset, an answer-pool script for the mock
generator, a corpus for the retriever, an optional alias table for the mock
entailment judge, and a run config.
"""

import json
import math
import os
import sys

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")


def write_jsonl(path, rows):
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def pool(*pairs):
    return [{"text": t, "prob": p} for t, p in pairs]


def config(alias_table=False, timing=True):
    lines = [
        "seed = 7",
        "",
        "[sampling]",
        "n = 10",
        "temperature = 1.0",
        "",
        "[router]",
        "tau_low = 0.4",
        "tau_high = 0.9",
        "",
        "[multistep]",
        "max_steps = 3",
        "",
        "[retriever]",
        "k = 5",
        'corpus = "corpus.jsonl"',
        "",
        "[generator]",
        'backend = "mock"',
        'mock_scenario = "scenario.json"',
        "",
        "[entailment]",
        'backend = "mock"',
    ]
    if alias_table:
        lines.append('alias_table = "aliases.json"')
    lines += ["", "[runner]", "parallelism = 4"]
    if timing:
        lines += [
            'timing = "simulated"',
            "",
            "[runner.simulated]",
            "per_sample_ms = 40",
            "greedy_ms = 60",
            "entailment_ms = 5",
            "retrieval_ms = 15",
        ]
    return "\n".join(lines) + "\n"


def scripted():
    """20 confident, 20 two-way split, 20 ten-way split questions.

    Split questions are fixed by one retrieval round. Ten-way questions need
    two: the first round finds a bridge document naming an intermediate
    entity, which narrows the pool to two candidates; the redraft names that
    entity, and the second round finds the document with the answer.
    """
    dataset, scenario, corpus = [], {}, []
    for i in range(1, 21):
        qid = f"q{i:02d}"
        ans = f"Aldren{i:02d}"
        dataset.append({"id": qid, "question": f"Who founded brisk{i:02d}?", "answers": [ans]})
        scenario[qid] = pool((ans, 1.0))
    for i in range(21, 41):
        qid = f"q{i:02d}"
        right, wrong = f"Harbor{i:02d}b", f"Harbor{i:02d}a"
        dataset.append({"id": qid, "question": f"Which harbor serves tolvin{i:02d}?", "answers": [right]})
        scenario[qid] = {
            "pool": pool((wrong, 0.5), (right, 0.5)),
            "with_context": [{"contains": [f"tolvin{i:02d}"], "pool": pool((right, 1.0))}],
        }
        corpus.append({
            "doc_id": f"m{i:02d}",
            "title": f"Tolvin{i:02d}",
            "text": f"The port of tolvin{i:02d} is {right}.",
        })
    for i in range(41, 61):
        qid = f"q{i:02d}"
        answer = f"Marnis{i:02d}"
        dataset.append({"id": qid, "question": f"Which river flows past zorvak{i:02d}?", "answers": [answer]})
        scenario[qid] = {
            "pool": pool(*[(f"Guess{i:02d}{c}", 0.1) for c in "abcdefghij"]),
            "with_context": [
                {"contains": [f"marnis{i:02d}"], "pool": pool((answer, 1.0))},
                {
                    "contains": [f"zorvak{i:02d}"],
                    "pool": pool((f"Velden{i:02d}", 0.5), (f"Weldon{i:02d}", 0.5)),
                },
            ],
        }
        corpus.append({
            "doc_id": f"b{i:02d}",
            "title": f"Zorvak{i:02d}",
            "text": f"zorvak{i:02d} lies on the banks of the velden{i:02d} stream.",
        })
        corpus.append({
            "doc_id": f"f{i:02d}",
            "title": f"Velden{i:02d}",
            "text": f"The velden{i:02d} stream is also called marnis{i:02d}.",
        })
    for i in range(1, 6):
        corpus.append({"doc_id": f"x{i:02d}", "title": "Filler", "text": f"Unrelated filler passage number {i}."})
    return dataset, scenario, corpus, None


def synonyms():
    """Pools of interchangeable names for one entity, next to genuinely
    uncertain and fully confident questions."""
    dataset, scenario, corpus, aliases = [], {}, [], []
    for i in range(1, 11):
        qid = f"syn{i:02d}"
        names = [f"Ashgrove{i:02d}", f"Old Ashgrove{i:02d}", f"Grovetown{i:02d}", f"Ash City{i:02d}", f"AG{i:02d}"]
        aliases.append(names)
        dataset.append({"id": qid, "question": f"Which town hosts the kiln fair {i:02d}?", "answers": names})
        scenario[qid] = {
            "pool": pool(*[(n, 0.2) for n in names]),
            "with_context": [{"contains": [f"kilnfair{i:02d}"], "pool": pool((names[0], 1.0))}],
        }
        corpus.append({
            "doc_id": f"s{i:02d}",
            "title": f"Kiln fair {i:02d}",
            "text": f"The kilnfair{i:02d} is held every spring in {names[0]}.",
        })
    for i in range(1, 6):
        qid = f"unc{i:02d}"
        right = f"Pelham{i:02d}"
        dataset.append({"id": qid, "question": f"Who painted mural {i:02d} of cresthall?", "answers": [right]})
        scenario[qid] = {
            "pool": pool(*[(f"Painter{i:02d}{c}", 0.1) for c in "abcdefghij"]),
            "with_context": [{"contains": [f"mural{i:02d}"], "pool": pool((right, 1.0))}],
        }
        corpus.append({
            "doc_id": f"u{i:02d}",
            "title": f"Cresthall mural {i:02d}",
            "text": f"Cresthall mural{i:02d} was painted by {right}.",
        })
    for i in range(1, 6):
        qid = f"con{i:02d}"
        right = f"Dunmore{i:02d}"
        dataset.append({"id": qid, "question": f"What is the surname of baron {i:02d}?", "answers": [right]})
        scenario[qid] = pool((right, 1.0))
    return dataset, scenario, corpus, aliases


def singletons():
    """Ten distinct equiprobable answers per question, so every sample forms
    its own cluster. Sequence scores fall off at a per-question rate, which
    spreads the entropies across questions."""
    dataset, scenario, corpus = [], {}, []
    for i in range(12):
        qid = f"dis{i:02d}"
        rate = 0.05 * i
        right = f"Answer{i:02d}j"
        entries = []
        for j, c in enumerate("abcdefghij"):
            entries.append({"text": f"Answer{i:02d}{c}", "prob": 0.1, "token_logprobs": [-0.5 - rate * j]})
        dataset.append({"id": qid, "question": f"What does sigil {i:02d} denote?", "answers": [right]})
        scenario[qid] = {
            "pool": entries,
            "with_context": [{"contains": [f"sigil{i:02d}"], "pool": pool((right, 1.0))}],
        }
        corpus.append({"doc_id": f"d{i:02d}", "title": f"Sigil {i:02d}", "text": f"The sigil{i:02d} denotes {right}."})
    return dataset, scenario, corpus, None


def main():
    for name, build, timing in [("scripted", scripted, True), ("synonyms", synonyms, False), ("singletons", singletons, False)]:
        d = os.path.join(ROOT, name)
        os.makedirs(d, exist_ok=True)
        dataset, scenario, corpus, aliases = build()
        write_jsonl(os.path.join(d, "dataset.jsonl"), dataset)
        write_json(os.path.join(d, "scenario.json"), scenario)
        write_jsonl(os.path.join(d, "corpus.jsonl"), corpus)
        if aliases is not None:
            write_json(os.path.join(d, "aliases.json"), aliases)
        with open(os.path.join(d, "config.toml"), "w") as f:
            f.write(config(alias_table=aliases is not None, timing=timing))
    return 0


if __name__ == "__main__":
    sys.exit(main())
