"""Desk-scale care models: a thin/rich stroke pair and a sepsis pair with organ automata.

Each bundle ships as one JSON document holding the thin (rural) model, the
rich (center) model, and the many-to-one projection from center states onto
rural states. State inventories and all thresholds except the 180 mmHg
hypertension bound are placeholders that exist to exercise the runtime; they
are not clinical guidance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from ..automaton import AutomatonDef, ModelError, load_model

SCENARIO_MEASUREMENTS = {
    "systolic_bp": "mmHg",
    "heart_rate": "bpm",
    "spo2": "%",
    "glucose": "mg/dL",
    "teg_index": "",
}


@dataclass(frozen=True)
class ModelBundle:
    disease: str
    rural: AutomatonDef
    center: AutomatonDef
    projection: dict[int, int]  # center uid -> rural uid, total over center states
    organs: tuple[AutomatonDef, ...]
    scenario_measurements: dict[str, str]


def _read_doc(name: str) -> dict:
    data = resources.files(__package__).joinpath(f"data/{name}.json").read_text()
    return json.loads(data)


def load_bundle(doc: dict) -> ModelBundle:
    """Validate and build a bundle; raises ModelError listing every violation."""
    rural = load_model(doc["rural"])
    center = load_model(doc["center"])
    problems: list[str] = []

    rural_states = {s.uid: s.name for s in rural.states}
    center_states = {s.uid: s.name for s in center.states}
    for uid, name in rural_states.items():
        if uid not in center_states:
            problems.append(f"rural state {name!r} ({uid}) missing from center model")
        elif center_states[uid] != name:
            problems.append(f"shared uid {uid} names differ: {name!r} vs {center_states[uid]!r}")
    if len(center_states) <= len(rural_states):
        problems.append("center model must be a strict superset of the rural model")

    projection = {int(k): int(v) for k, v in doc.get("projection", {}).items()}
    for uid in center_states:
        if uid not in projection:
            problems.append(f"projection is missing center state {uid}")
    for src, dst in projection.items():
        if src not in center_states:
            problems.append(f"projection maps unknown center state {src}")
        if dst not in rural_states:
            problems.append(f"projection targets unknown rural state {dst}")
        if src in rural_states and dst != src:
            problems.append(f"projection must be the identity on shared state {src}")
    if set(projection.values()) != set(rural_states):
        problems.append("projection must be onto the rural state set")

    organs = tuple(load_model(o) for o in doc.get("organs", []))
    if problems:
        raise ModelError(problems)
    return ModelBundle(
        disease=doc.get("disease", "unnamed"),
        rural=rural,
        center=center,
        projection=projection,
        organs=organs,
        scenario_measurements=dict(doc.get("scenario_measurements", SCENARIO_MEASUREMENTS)),
    )


def _patch_dwell(doc: dict, by_name: dict[str, float]) -> None:
    for side in ("rural", "center"):
        for state in doc.get(side, {}).get("states", []):
            if state.get("name") in by_name:
                state["max_dwell_s"] = by_name[state["name"]]


def stroke_bundle(tpa_dwell_s: float = 300.0, aspirin_dwell_s: float = 600.0) -> ModelBundle:
    """The stroke pair; dwell bounds are model-authored and overridable."""
    doc = _read_doc("stroke")
    _patch_dwell(doc, {"tPA Therapy": tpa_dwell_s, "Supporting Therapy (Aspirin)": aspirin_dwell_s})
    return load_bundle(doc)


def sepsis_bundle() -> ModelBundle:
    """The sepsis pair: thin/rich disease automata plus cardiac/pulmonary/kidney organs."""
    return load_bundle(_read_doc("sepsis"))


BUNDLES = {"stroke": stroke_bundle, "sepsis": sepsis_bundle}


def bundle_by_name(name: str) -> ModelBundle:
    try:
        return BUNDLES[name]()
    except KeyError:
        raise ModelError([f"unknown model bundle {name!r}"]) from None
