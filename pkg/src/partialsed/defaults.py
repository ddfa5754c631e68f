"""Packaged default vocabulary and candidate table.

The default event list covers the 25 annotated classes of the TUT-style
corpora the pipeline targets; the candidate table is an editable starting
point (regenerate it against a live endpoint with
``partialsed labels to-partial --llm``).
"""

from __future__ import annotations

import json
from importlib import resources

from .labelkit import CandidateTable


def _data_text(name: str) -> str:
    return resources.files("partialsed").joinpath("_data", name).read_text("utf-8")


def default_vocab() -> tuple[list[str], list[str]]:
    """(events, scenes) shipped with the package."""
    payload = json.loads(_data_text("tut_vocab.json"))
    return list(payload["events"]), list(payload["scenes"])


def default_candidate_table() -> CandidateTable:
    mapping: dict[str, set[str]] = {}
    lines = _data_text("default_candidates.csv").splitlines()
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        scene, event = line.split(",", 1)
        mapping.setdefault(scene, set()).add(event)
    return CandidateTable({s: frozenset(e) for s, e in mapping.items()},
                          provenance="file")
