#!/usr/bin/env python3
"""Regenerate the bundled demo fixture under src/notekg/assets/demo/.

The demo is a 6-note synthetic corpus plus a fully scripted backend. The
expected knowledge graph (kg_golden.json) is hand-traced here with the naive
oracle implementations from tests/oracles.py - deliberately NOT with the
notekg pipeline - so the end-to-end acceptance test compares the real
pipeline against an independent trace.

Run from the repo root: python tools/make_demo_assets.py
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from oracles import naive_aggregate, oracle_similarity  # noqa: E402

OUT = ROOT / "src" / "notekg" / "assets" / "demo"

DISEASE = "amd"

NOTES = [
    {
        "id": "nb01",
        "text": (
            "Wet ARMD OD - patient educated on condition. Discussed diet and use of "
            "macular degeneration vitamins. Wet ARMD OD - patient educated on "
            "condition. Discussed diet and use of macular degeneration vitamins. "
            "Return in one month."
        ),
    },
    {
        "id": "nb02",
        "text": (
            "Wet ARMD OD - patient educated on condition. Discussed diet and use of "
            "macular degeneration vitamins."
        ),
    },
    {
        "id": "nb03",
        "text": (
            "Dry ARMD OU - Explained that there is no specific treatment at this "
            "time. Can convert to wet ARMD, which is treatable. Monitor closely "
            "with Amsler grid."
        ),
    },
    {
        "id": "nb04",
        "text": (
            "2 small Druse OD - clinically does not look like ARMD. Patient has a "
            "family history of ARMD, recommend starting on AREDS and WACS vitamins. "
            "Eat green leafy vegetables like spinach five times a week and fish at "
            "least two times a week."
        ),
    },
    {
        "id": "nb05",
        "text": (
            "Age-related macular degeneration discussed with patient today. Risk "
            "factors reviewed including smoking and genetics. Recommended smoking "
            "cessation counseling and dietary changes."
        ),
    },
    {
        "id": "nb06",
        "text": (
            "Routine eye exam today. No ocular pathology noted. Patient advised to "
            "return in one year for follow up."
        ),
    },
]

ALIASES = {"amd": ["armd", "age-related macular degeneration"]}

IDK = "I do not know."
RAMBLE = (
    "it is not clear what the question is asking. it is not clear what the "
    "context is."
)
ECHO = "effect: [ENTITY_1], [ENTITY_2], [ENTITY_3]..."

# (question_id, note_id) -> (response text, score or None)
RESPONSES: dict[tuple[str, str], tuple[str, float | None]] = {
    # Treatment
    ("T1", "nb01"): ("treat: avastin", 0.5),
    ("T1", "nb03"): ("treat: avastin", 0.5),
    ("T1", "nb04"): ("treat: areds vitamins", 0.45),
    ("T1", "nb05"): ("treat: spinach and fish", 0.4),
    ("T2", "nb01"): ("treat: avastin", 0.5),
    ("T2", "nb03"): ("treat: areds vitamin", 0.3),
    ("T2", "nb04"): ("treat: spinach and fish", 0.4),
    ("T2", "nb05"): ("treat: new trial", 0.05),
    ("T3", "nb01"): ("treat: avastin", 0.5),
    ("T3", "nb03"): ("treat: areds vitamins", 0.45),
    ("T3", "nb04"): ("treat: cataract surgery", 0.6),
    ("T3", "nb05"): (IDK, None),
    ("T4", "nb01"): ("treat: avastin", 0.5),
    ("T4", "nb03"): ("treat: spinach and fish", 0.4),
    ("T4", "nb04"): ("treat: areds vitamin", 0.3),
    ("T4", "nb05"): ("treat: new trial", 0.05),
    ("T5", "nb01"): ("treat: avastin", 0.5),
    ("T5", "nb03"): ("treat: areds vitamins", 0.45),
    ("T5", "nb04"): ("treat: areds vitamin", 0.3),
    ("T5", "nb05"): ("treat: cataract surgery", 0.6),
    # Factor
    ("F1", "nb01"): (IDK, None),
    ("F1", "nb03"): (IDK, None),
    ("F1", "nb04"): ("factor: factor: family history", 0.25),
    ("F1", "nb05"): ("factor: smoking", 0.6),
    ("F2", "nb01"): (IDK, None),
    ("F2", "nb03"): ("factor: drusen", 0.3),
    ("F2", "nb04"): ("factor: family history", 0.25),
    ("F2", "nb05"): ("factor: smoking", 0.6),
    ("F3", "nb01"): (IDK, None),
    ("F3", "nb03"): ("factor: drusen", 0.3),
    ("F3", "nb04"): ("factor: factor: family history", 0.25),
    ("F3", "nb05"): ("factor: smoking", 0.6),
    ("F4", "nb01"): (IDK, None),
    ("F4", "nb03"): (IDK, None),
    ("F4", "nb04"): (ECHO, None),
    ("F4", "nb05"): ("factor: smoking", 0.6),
    ("F5", "nb01"): (IDK, None),
    ("F5", "nb03"): ("factor: drusen", 0.3),
    ("F5", "nb04"): (IDK, None),
    ("F5", "nb05"): (IDK, None),
    # Coexists-with
    ("E1", "nb01"): (IDK, None),
    ("E1", "nb03"): ("coexists_with: drusen", 0.35),
    ("E1", "nb04"): (IDK, None),
    ("E1", "nb05"): (IDK, None),
    ("E2", "nb01"): ("coexists_with: drusen", 0.35),
    ("E2", "nb03"): ("effect: metamorphopsia", 0.45),
    ("E2", "nb04"): (IDK, None),
    ("E2", "nb05"): (IDK, None),
    ("E3", "nb01"): ("coexists_with: drusen", 0.35),
    ("E3", "nb03"): (IDK, None),
    ("E3", "nb04"): ("effect: metamorphopsia", 0.45),
    ("E3", "nb05"): (IDK, None),
    ("E4", "nb01"): ("coexists_with: drusen", 0.35),
    ("E4", "nb03"): (IDK, None),
    ("E4", "nb04"): (IDK, None),
    ("E4", "nb05"): ("effect: metamorphopsia", 0.45),
    ("E5", "nb01"): (RAMBLE, None),
    ("E5", "nb03"): (IDK, None),
    ("E5", "nb04"): (IDK, None),
    ("E5", "nb05"): (IDK, None),
}

CATEGORY_OF = {"T": "treatment", "F": "factor", "E": "coexists_with"}
CATEGORY_INDEX = {"treatment": 0, "factor": 1, "coexists_with": 2}

STOPWORDS = {
    w.strip()
    for w in (ROOT / "src" / "notekg" / "assets" / "stopwords.txt").read_text().splitlines()
    if w.strip()
}

IDENTIFIED = ["nb01", "nb03", "nb04", "nb05"]


def norm(text: str) -> str:
    import re

    tokens = [
        t for t in re.sub(r"[^a-z0-9]+", " ", text.lower()).split() if t not in STOPWORDS
    ]
    return " ".join(tokens)


def check_fixture_assumptions() -> None:
    # nb02 must be the only near-duplicate (of nb01), and nb01 must win on word count.
    texts = {n["id"]: n["text"] for n in NOTES}
    for a in texts:
        for b in texts:
            if a >= b:
                continue
            sim = oracle_similarity(texts[a], texts[b])
            expected_dup = {a, b} == {"nb01", "nb02"}
            assert (sim > 0.8) == expected_dup, (a, b, sim)
    assert len(texts["nb01"].split()) > len(texts["nb02"].split())
    assert len(RESPONSES) == 60, len(RESPONSES)
    for qid, note_id in RESPONSES:
        assert note_id in IDENTIFIED, (qid, note_id)


def trace_golden():
    """Naive end-to-end trace of the scripted run (independent of notekg)."""
    preds = []
    dont_know = unstructured = 0
    for (qid, note_id), (text, score) in RESPONSES.items():
        if text == IDK:
            dont_know += 1
            continue
        if text in (RAMBLE, ECHO):
            unstructured += 1
            continue
        category = CATEGORY_OF[qid[0]]
        label, _, rest = text.partition(":")
        rest = rest.strip()
        if rest.lower().startswith(f"{label.lower()}:"):
            rest = rest[len(label) + 1 :].strip()
        used_score = math.exp(math.fsum([math.log(score)]) / 1)
        for entity in (e.strip() for e in rest.split(",")):
            normalized = norm(entity)
            if used_score < 0.08 or not normalized:
                continue
            preds.append((normalized, DISEASE, CATEGORY_INDEX[category], used_score, entity))

    aggregated = naive_aggregate(
        [(e, d, c, s) for e, d, c, s, _ in preds], occurrence_threshold=3, probability_threshold=0.1
    )

    # Attach the best (highest-score, longest, lexicographically smallest) surface.
    surfaces: dict[tuple[str, str, int], list[tuple[str, float]]] = {}
    for e, d, c, s, surface in preds:
        surfaces.setdefault((e, d, c), []).append((surface, s))

    relations = []
    for disease, cat, entity, avg, count in aggregated:
        members = surfaces[(entity, disease, cat)]
        surface = min(members, key=lambda m: (-m[1], -len(m[0]), m[0]))[0]
        relations.append(
            {
                "disease": disease,
                "category_index": cat,
                "entity_key": entity,
                "surface": surface,
                "avg": avg,
                "count": count,
            }
        )

    # Grouping per (disease, category) with single-link > 0.8, then span split.
    final: dict[tuple[str, str], dict] = {}
    partitions: dict[int, list[dict]] = {}
    for rel in relations:
        partitions.setdefault(rel["category_index"], []).append(rel)
    for cat, rels in sorted(partitions.items()):
        n = len(rels)
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i in range(n):
            for j in range(i + 1, n):
                if oracle_similarity(rels[i]["entity_key"], rels[j]["entity_key"]) > 0.8:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
        groups: dict[int, list[dict]] = {}
        for i, rel in enumerate(rels):
            groups.setdefault(find(i), []).append(rel)
        for members in groups.values():
            rep = min(members, key=lambda r: (-r["avg"], -len(r["entity_key"]), r["entity_key"]))
            import re

            for value in re.split(r"\s*,\s*|\s+and\s+", rep["surface"]):
                value = value.strip()
                key = norm(value)
                if not value or not key:
                    continue
                candidate = {
                    "disease": rep["disease"],
                    "category_index": cat,
                    "entity_key": key,
                    "surface": value,
                    "avg": rep["avg"],
                    "count": rep["count"],
                }
                existing = final.get((rep["disease"], key))
                if existing is None or (
                    candidate["avg"],
                    candidate["count"],
                    -candidate["category_index"],
                ) > (existing["avg"], existing["count"], -existing["category_index"]):
                    final[(rep["disease"], key)] = candidate

    category_names = {v: k for k, v in CATEGORY_INDEX.items()}
    edges = [
        {
            "from": rel["disease"],
            "to": rel["surface"],
            "category": category_names[rel["category_index"]],
            "avg_score": rel["avg"],
            "count": rel["count"],
        }
        for (_, _), rel in sorted(final.items())
    ]
    entity_nodes = [
        {"label": rel["surface"], "kind": "entity"} for _, rel in sorted(final.items())
    ]
    kg = {
        "schema_version": 1,
        "nodes": [{"label": DISEASE, "kind": "disease"}] + entity_nodes,
        "edges": edges,
    }

    gold = [
        {
            "disease": DISEASE,
            "category": name,
            "values": sorted(
                rel["surface"]
                for rel in final.values()
                if rel["category_index"] == idx
            ),
        }
        for name, idx in CATEGORY_INDEX.items()
    ]
    print(f"trace: {len(preds)} preds, {len(relations)} aggregated, {len(final)} final")
    print(f"safety: dont_know={dont_know} unstructured={unstructured}")
    return kg, gold


def main() -> None:
    check_fixture_assumptions()
    OUT.mkdir(parents=True, exist_ok=True)

    with (OUT / "notes.jsonl").open("w") as handle:
        for note in NOTES:
            handle.write(json.dumps(note) + "\n")

    (OUT / "aliases.json").write_text(json.dumps(ALIASES, indent=2) + "\n")

    by_key = {}
    for (qid, note_id), (text, score) in sorted(RESPONSES.items()):
        entry: dict = {"text": text}
        if score is not None:
            entry["token_logprobs"] = [math.log(score)]
        by_key[f"{qid}|{note_id}"] = entry
    (OUT / "backend_script.json").write_text(
        json.dumps({"schema_version": 1, "by_key": by_key}, indent=2, sort_keys=True) + "\n"
    )

    config = {
        "relation_occurrence_number": 3,
        "relation_probability": 0.1,
        "postprocess_min_score": 0.08,
        "grouping_similarity": 0.8,
        "threshold_preprocessing": 0.8,
        "threshold_notes_identification": 0.8,
        "min_words": 5,
        "prompt_style": "guided",
        "backend": "demo",
        "backends": {"demo": {"kind": "scripted", "script": "backend_script.json"}},
        "alias_provider": {"kind": "file", "path": "aliases.json"},
        "ner_provider": {"kind": "none"},
    }
    (OUT / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")

    kg, gold = trace_golden()
    (OUT / "kg_golden.json").write_text(json.dumps(kg, indent=2, sort_keys=True) + "\n")
    (OUT / "gold.json").write_text(json.dumps(gold, indent=2) + "\n")
    print(f"wrote demo assets to {OUT}")


if __name__ == "__main__":
    main()
