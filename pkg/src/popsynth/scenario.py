"""Synthetic stand-in scenarios with known generating networks.

``toy``: three micro sources sharing a three-attribute core, small enough
for exact recovery checks. ``barcelona``: the default 71-attribute schema
split over one macro table and four micro samples with the sizes of the
Barcelona use case.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .bayesnet import CPT, BayesianNetwork, NetworkStructure, enumerate_joint, sample, write_model
from .schema import (AttributeDef, CoreSpec, DataSourceDescriptor, Schema,
                     default_barcelona_schema, write_schema)

SCENARIOS = ("toy", "barcelona")


# -- toy -------------------------------------------------------------------

def toy_schema() -> Schema:
    sd, mot = "socio-demographic", "motivational"
    A = AttributeDef
    attrs = (
        A("District", ("Nord", "Centre", "Sud"), sd, "main", territorial=True),
        A("Age", ("15-34", "35-54", "55-74"), sd, "main", ordinal=True),
        A("Nationality", ("national", "foreign"), sd, "main"),
        A("Education", ("basic", "secondary", "tertiary"), sd, "main", ordinal=True),
        A("Income", ("low", "middle", "high"), sd, "main", ordinal=True),
        A("Fr", ("0-1", "2", "3+"), sd, "network", ordinal=True),
        A("align_religion", ("agreement", "disagreement", "indifference"), mot, "ideologies"),
        A("interest_politics", ("1", "2", "3", "4"), mot, "opinions", ordinal=True),
    )
    core = ("District", "Age", "Nationality")
    sources = (
        DataSourceDescriptor("census", "micro", core + ("Education", "Income"),
                             is_richest=True, scope="District", year=2011),
        DataSourceDescriptor("panel", "micro", core + ("Fr",), weight_column="weight",
                             scope="District", year=2012),
        DataSourceDescriptor("survey", "micro", core + ("align_religion", "interest_politics"),
                             scope="District", year=2021),
    )
    return Schema(attrs, sources, CoreSpec(core))


def toy_truth() -> BayesianNetwork:
    """Generating network of the toy scenario."""
    schema = toy_schema()
    tables = {
        "District": ((), [[0.35, 0.35, 0.30]]),
        "Age": ((), [[0.35, 0.35, 0.30]]),
        # rows: (District, Age) with Age varying fastest
        "Nationality": (("District", "Age"), [
            [0.55, 0.45], [0.70, 0.30], [0.85, 0.15],
            [0.65, 0.35], [0.80, 0.20], [0.90, 0.10],
            [0.75, 0.25], [0.85, 0.15], [0.95, 0.05],
        ]),
        "Education": (("Age",), [[0.15, 0.40, 0.45], [0.30, 0.40, 0.30], [0.60, 0.30, 0.10]]),
        "Income": (("Education",), [[0.65, 0.30, 0.05], [0.30, 0.55, 0.15], [0.10, 0.40, 0.50]]),
        "Fr": (("Age",), [[0.15, 0.25, 0.60], [0.30, 0.35, 0.35], [0.50, 0.30, 0.20]]),
        "align_religion": (("Nationality",), [[0.50, 0.30, 0.20], [0.25, 0.45, 0.30]]),
        "interest_politics": (("align_religion",), [
            [0.15, 0.25, 0.35, 0.25], [0.35, 0.35, 0.20, 0.10], [0.10, 0.20, 0.30, 0.40],
        ]),
    }
    nodes = schema.names
    edges = [(p, c) for c, (ps, _) in tables.items() for p in ps]
    cpts = {c: CPT(c, ps, np.array(rows)) for c, (ps, rows) in tables.items()}
    meta = {a.name: {"layer": a.layer, "type": a.attr_type, "ordinal": a.ordinal}
            for a in schema.attributes}
    return BayesianNetwork(NetworkStructure(nodes, edges), cpts, schema.states(), meta)


# -- barcelona -------------------------------------------------------------

def _dirichlet_rows(rng: np.random.Generator, q: int, k: int, conc: float) -> np.ndarray:
    rows = rng.dirichlet(np.full(k, conc), size=q)
    rows = 0.9 * rows + 0.1 / k  # keep every state reachable
    return rows / rows.sum(axis=1, keepdims=True)


def barcelona_truth(seed: int = 2024) -> BayesianNetwork:
    """Random generating network over the default schema.

    Core: District and Age parent Nationality; Gender is a root. Each owned
    attribute draws one or two parents among the core and the attributes
    its source declared before it, so the truth obeys the merge constraints.
    """
    schema = default_barcelona_schema()
    rng = np.random.default_rng(seed)
    core = list(schema.core.core_attributes)
    parents: dict[str, list[str]] = {c: [] for c in core}
    parents["Nationality"] = ["District", "Age"]
    fixed = {"Education": ["Age"], "Income": ["Education", "Gender"],
             "Unemployment": ["Age", "Gender"], "align_religion": ["Nationality"],
             "ideology_self": ["ideology_parents"], "ideology_parents": ["Age"],
             "importance_work": ["Age"]}
    for src in schema.sources:
        owned = [a for a in src.attributes if a not in core]
        for i, x in enumerate(owned):
            if x in fixed:
                parents[x] = fixed[x]
                continue
            pool = ["Age", "Gender", "Nationality"] + owned[max(0, i - 4):i]
            k = int(rng.integers(1, 3))
            parents[x] = sorted(rng.choice(pool, size=min(k, len(pool)), replace=False).tolist())
    nodes = schema.names
    pos = {n: i for i, n in enumerate(nodes)}
    cpts = {}
    for n in nodes:
        ps = tuple(sorted(parents[n], key=pos.__getitem__))
        q = int(np.prod([schema.attribute(p).cardinality for p in ps])) if ps else 1
        cpts[n] = CPT(n, ps, _dirichlet_rows(rng, q, schema.attribute(n).cardinality, 1.5))
    edges = [(p, c) for c in nodes for p in cpts[c].parents]
    meta = {a.name: {"layer": a.layer, "type": a.attr_type, "ordinal": a.ordinal}
            for a in schema.attributes}
    return BayesianNetwork(NetworkStructure(nodes, edges), cpts, schema.states(), meta)


BARCELONA_SIZES = {"opendata": 1_600_000, "ipums": 120_000, "panel": 1_500,
                   "bcn_values": 1_300, "cat_values": 3_100}


# -- file writers ----------------------------------------------------------

def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _micro_file(path: Path, net: BayesianNetwork, cols, draws: np.ndarray,
                recode: Optional[dict] = None, weights: Optional[np.ndarray] = None,
                weight_column: Optional[str] = None, missing: Optional[np.ndarray] = None):
    recode = recode or {}
    idx = [net.nodes.index(c) for c in cols]
    labels = []
    for c in cols:
        states = net.states[c]
        labels.append(np.array([recode.get(c, {}).get(s, s) for s in states], dtype=object))
    columns = []
    for j, c in enumerate(cols):
        col = labels[j][draws[:, idx[j]]]
        if missing is not None:
            col = np.where(missing[:, j], "NA", col)
        columns.append(col)
    header = list(cols)
    if weights is not None:
        header.append(weight_column)
        columns.append(np.array([repr(round(float(x), 6)) for x in weights], dtype=object))
    _write_rows(path, header, zip(*columns))


def _macro_file(path: Path, net: BayesianNetwork, cols, total: int):
    sub = net.subnetwork(_ancestral_closure(net, cols))
    joint = enumerate_joint(sub).marginalize(cols)
    counts = np.rint(joint.probs * total).astype(np.int64)
    rows = []
    for combo in np.ndindex(*counts.shape):
        rows.append([net.states[c][i] for c, i in zip(cols, combo)] + [int(counts[combo])])
    _write_rows(path, list(cols) + ["count"], rows)


def _ancestral_closure(net: BayesianNetwork, cols) -> list[str]:
    keep, stack = set(cols), list(cols)
    while stack:
        for p in net.structure.parents(stack.pop()):
            if p not in keep:
                keep.add(p)
                stack.append(p)
    return [n for n in net.nodes if n in keep]


def _config_doc(schema: Schema, sources: dict, merge: dict, sample_n: int,
                output: str = "out") -> dict:
    return {
        "schema": "schema.yaml",
        "sources": sources,
        "merge": merge,
        "learn": {"smoothing_alpha": 1.0, "em_tolerance": 1e-6, "em_max_iters": 100,
                  "hc_epsilon": 1e-9, "hc_max_iters": 10000, "seed": 0},
        "sample": {"n": sample_n, "seed": 42, "evidence": {}, "workers": 1},
        "validate": {"references": None, "joint_sets": None, "scatter": False},
        "output": output,
    }


def write_toy(dest, n: int = 50_000, seed: int = 7) -> Path:
    """Write the toy scenario (schema, raw files, config, truth model) to ``dest``."""
    dest = Path(dest)
    (dest / "data").mkdir(parents=True, exist_ok=True)
    schema = toy_schema()
    truth = toy_truth()
    write_schema(schema, dest / "schema.yaml")
    write_model(truth, dest / "truth_model.json")
    rng = np.random.default_rng(seed)
    draws = {sid: sample(truth, n, seed + i + 1) for i, sid in enumerate(("census", "panel", "survey"))}

    # census codes District numerically and needs a harmonization map
    census = schema.source("census")
    district_codes = {"Nord": "1", "Centre": "2", "Sud": "3"}
    _micro_file(dest / "data" / "census.csv", truth, census.attributes, draws["census"],
                recode={"District": district_codes})

    panel = schema.source("panel")
    _micro_file(dest / "data" / "panel.csv", truth, panel.attributes, draws["panel"],
                weights=rng.uniform(0.5, 2.0, size=n), weight_column="weight")

    survey = schema.source("survey")
    miss = rng.random((n, len(survey.attributes))) < 0.01
    miss[:, :3] = False
    _micro_file(dest / "data" / "survey.csv", truth, survey.attributes, draws["survey"],
                recode={"Nationality": {"national": "ES", "foreign": "XX"}}, missing=miss)

    sources = {
        "census": {"path": "data/census.csv",
                   "harmonization": {"District": {v: k for k, v in district_codes.items()}}},
        "panel": {"path": "data/panel.csv"},
        "survey": {"path": "data/survey.csv", "missing_policy": "listwise-delete",
                   "harmonization": {"Nationality": {"ES": "national", "XX": "foreign"}}},
    }
    merge = {"core_mode": "learnt", "sources": {s: {"mode": "learnt"} for s in sources}}
    doc = _config_doc(schema, sources, merge, sample_n=100_000)
    (dest / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    return dest / "config.yaml"


def write_barcelona(dest, seed: int = 2024, sizes: Optional[dict] = None) -> Path:
    """Write the five-source Barcelona-shaped stand-in scenario to ``dest``."""
    dest = Path(dest)
    (dest / "data").mkdir(parents=True, exist_ok=True)
    sizes = {**BARCELONA_SIZES, **(sizes or {})}
    schema = default_barcelona_schema()
    truth = barcelona_truth(seed)
    write_schema(schema, dest / "schema.yaml")
    write_model(truth, dest / "truth_model.json")
    rng = np.random.default_rng(seed)
    sources = {}
    for i, src in enumerate(schema.sources):
        path = dest / "data" / f"{src.id}.csv"
        if src.kind == "macro":
            _macro_file(path, truth, src.attributes, sizes[src.id])
        else:
            draws = sample(truth, sizes[src.id], seed + 100 + i)
            w = rng.uniform(0.5, 2.0, size=sizes[src.id]) if src.weight_column else None
            _micro_file(path, truth, src.attributes, draws, weights=w,
                        weight_column=src.weight_column)
        sources[src.id] = {"path": f"data/{src.id}.csv"}
    merge = {
        "core_mode": "crafted",
        "core_edges": [["District", "Nationality"], ["Age", "Nationality"]],
        "sources": {s.id: {"mode": "crafted"} for s in schema.sources},
    }
    doc = _config_doc(schema, sources, merge, sample_n=10_000)
    doc["validate"]["joint_sets"] = [["Age", "Education"], ["Education", "Income"],
                                     ["Nationality", "align_religion"]]
    (dest / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    return dest / "config.yaml"


def write_scenario(name: str, dest, **kw) -> Path:
    if name == "toy":
        return write_toy(dest, **kw)
    if name == "barcelona":
        return write_barcelona(dest, **kw)
    raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
