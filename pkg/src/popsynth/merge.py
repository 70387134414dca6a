"""Core-anchored fusion of per-source networks into one population model.

Every source shares the *core* attributes. The core structure and its CPTs
are fitted once on the richest micro sample and then frozen: each other
source may only attach its own attributes below the core, never point back
into it, and never link to another source's attributes.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import permutations
from typing import Mapping, Optional, Sequence

import numpy as np

from .bayesnet import CPT, BayesianNetwork, NetworkStructure, StructureError
from .ingest import PreparedDataset, complete_cases
from .learn import LearnConfig, family_counts, fit_parameters, hill_climb, normalize_counts
from .schema import CoreSpec, DataSourceDescriptor, Schema

log = logging.getLogger(__name__)

MODES = ("learnt", "crafted")
CPT_CELL_CAP = 10**6


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class SourcePlan:
    mode: str = "learnt"
    parents: Mapping[str, tuple] = field(default_factory=dict)


@dataclass(frozen=True)
class MergePlan:
    core: CoreSpec
    richest: str
    sources: Mapping[str, SourcePlan]
    core_mode: str = "learnt"
    core_edges: tuple = ()
    territorial: Optional[str] = None
    cpt_cell_cap: int = CPT_CELL_CAP

    @property
    def core_set(self) -> frozenset:
        return frozenset(self.core.core_attributes)

    def validate(self, descriptors: Mapping[str, DataSourceDescriptor]) -> None:
        core = self.core_set
        if self.core_mode not in MODES:
            raise MergeError(f"unknown core mode {self.core_mode!r}")
        if self.richest not in descriptors:
            raise MergeError(f"richest source {self.richest!r} has no data")
        if descriptors[self.richest].kind != "micro":
            raise MergeError(f"richest source {self.richest!r} must be micro data")
        for u, v in self.core_edges:
            if u not in core or v not in core:
                raise MergeError(f"core edge {u}->{v} leaves the core")
        for sid, sp in self.sources.items():
            if sid not in descriptors:
                raise MergeError(f"plan names unknown source {sid!r}")
            d = descriptors[sid]
            if sp.mode not in MODES:
                raise MergeError(f"source {sid!r}: unknown mode {sp.mode!r}")
            if d.kind == "macro" and sp.mode == "learnt":
                raise MergeError(f"source {sid!r}: macro data only supports crafted mode")
            missing = core - set(d.attributes)
            if missing:
                raise MergeError(f"core attribute(s) {sorted(missing)} absent from source {sid!r}")
            allowed = core & set(d.attributes)
            for child, ps in sp.parents.items():
                if child not in d.attributes or child in core:
                    raise MergeError(f"source {sid!r}: parent policy for non-owned node {child!r}")
                bad = set(ps) - allowed
                if bad:
                    raise MergeError(
                        f"source {sid!r}: parents {sorted(bad)} of {child!r} are not core attributes"
                    )


def plan_from_schema(schema: Schema, modes: Optional[Mapping[str, str]] = None,
                     parents: Optional[Mapping[str, Mapping[str, Sequence[str]]]] = None,
                     core_mode: str = "learnt", core_edges: Sequence = ()) -> MergePlan:
    """Build a plan; macro sources default to crafted, micro ones to learnt."""
    modes = dict(modes or {})
    parents = parents or {}
    srcs = {}
    for d in schema.sources:
        mode = modes.get(d.id, "crafted" if d.kind == "macro" else "learnt")
        pol = {k: tuple(v) for k, v in (parents.get(d.id) or {}).items()}
        srcs[d.id] = SourcePlan(mode, pol)
    return MergePlan(schema.core, schema.richest.id, srcs, core_mode,
                     tuple(tuple(e) for e in core_edges), schema.territorial)


def default_core_edges(plan: MergePlan) -> tuple:
    """Territorial unit parents every other core attribute, when it is core."""
    t = plan.territorial
    if t is None or t not in plan.core_set:
        return ()
    return tuple((t, c) for c in plan.core.core_attributes if c != t)


def _owned(attrs: Sequence[str], core: frozenset) -> list[str]:
    return [a for a in attrs if a not in core]


def craft_structure(source: DataSourceDescriptor, plan: MergePlan,
                    states: Mapping[str, Sequence[str]],
                    core_edges: Optional[Sequence] = None) -> NetworkStructure:
    """Star-like structure: core attributes parent every attribute the source owns.

    Default parents are all core attributes (plus the territorial unit when
    the source carries it outside the core); ``plan.sources[id].parents``
    overrides per node. Core-internal edges are copied from the core
    structure.
    """
    core = plan.core_set
    sp = plan.sources.get(source.id, SourcePlan("crafted"))
    core_edges = plan.core_edges if core_edges is None else core_edges
    core_nodes = [c for c in plan.core.core_attributes]
    owned = _owned(source.attributes, core)
    t = plan.territorial
    edges = set(map(tuple, core_edges))
    for x in owned:
        if x in sp.parents:
            ps = list(sp.parents[x])
        else:
            ps = list(core_nodes)
            if t is not None and t in source.attributes and t not in core and x != t:
                ps.append(t)
        cells = len(states[x])
        for p in ps:
            cells *= len(states[p])
        if cells > plan.cpt_cell_cap:
            raise MergeError(
                f"CPT of {x!r} would need {cells} cells (cap {plan.cpt_cell_cap}); "
                f"restrict its parents in the merge plan"
            )
        edges.update((p, x) for p in ps)
    return NetworkStructure(core_nodes + owned, edges)


def macro_to_cpt(ds: PreparedDataset, child: str, parents: Sequence[str],
                 alpha: float = 0.0) -> CPT:
    """CPT of ``child`` given ``parents`` from contingency counts."""
    for a in [child, *parents]:
        if a not in ds.columns:
            raise MergeError(f"attribute {a!r} absent from macro table {ds.source_id!r}")
    col = {c: i for i, c in enumerate(ds.columns)}
    counts = family_counts(ds.records.astype(np.int64), ds.effective_weights, col[child],
                           [col[p] for p in parents], len(ds.states[child]),
                           [len(ds.states[p]) for p in parents])
    return CPT(child, tuple(parents), normalize_counts(counts, alpha))


def _reorder(s: NetworkStructure, order: Sequence[str], **kw) -> NetworkStructure:
    pos = {n: i for i, n in enumerate(order)}
    nodes = sorted(s.nodes, key=pos.__getitem__)
    return NetworkStructure(nodes, s.edges, **kw)


def forbidden_for(core_nodes: Sequence[str], core_edges, owned: Sequence[str]) -> set:
    core_edges = set(map(tuple, core_edges))
    out = {(a, b) for a, b in permutations(core_nodes, 2) if (a, b) not in core_edges}
    out.update((x, c) for x in owned for c in core_nodes)
    return out


def config_hash(config: LearnConfig, plan: MergePlan) -> str:
    doc = {
        "learn": asdict(config),
        "plan": {
            "core": list(plan.core.core_attributes),
            "richest": plan.richest,
            "core_mode": plan.core_mode,
            "core_edges": [list(e) for e in plan.core_edges],
            "sources": {k: {"mode": v.mode, "parents": {c: list(p) for c, p in sorted(v.parents.items())}}
                        for k, v in sorted(plan.sources.items())},
            "cpt_cell_cap": plan.cpt_cell_cap,
        },
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def merge_sources(datasets: Sequence[PreparedDataset], plan: MergePlan,
                  config: LearnConfig = LearnConfig(), schema: Optional[Schema] = None,
                  workers: int = 1) -> BayesianNetwork:
    """Fuse per-source datasets into one network anchored on the core.

    Steps: check the core is in every source; take the richest micro source;
    learn or craft the core structure on it and fit its CPTs; for every
    source, learn or craft a structure over core + owned attributes with the
    core edges required and all other core edges plus every owned->core edge
    forbidden; re-check that nothing conflicts with the core; fit CPTs of
    owned attributes on their own source only.
    """
    by_id = {d.source_id: d for d in datasets}
    descriptors = {
        d.source_id: (schema.source(d.source_id) if schema is not None else
                      DataSourceDescriptor(d.source_id, d.kind, d.columns,
                                           is_richest=d.source_id == plan.richest))
        for d in datasets
    }
    for sid in plan.sources:
        if sid not in by_id:
            raise MergeError(f"no dataset for planned source {sid!r}")
    plan.validate(descriptors)
    core = plan.core_set
    core_attrs = list(plan.core.core_attributes)
    for d in datasets:
        missing = core - set(d.columns)
        if missing:
            raise MergeError(f"core attribute(s) {sorted(missing)} absent from source {d.source_id!r}")

    owner: dict[str, str] = {}
    for d in datasets:
        for a in _owned(d.columns, core):
            if a in owner:
                raise MergeError(
                    f"non-core attribute {a!r} appears in sources {owner[a]!r} and {d.source_id!r}"
                )
            owner[a] = d.source_id

    if schema is not None:
        order = schema.order(list(core) + list(owner))
    else:
        order = core_attrs + [a for d in datasets for a in _owned(d.columns, core)]
    pos = {n: i for i, n in enumerate(order)}
    core_order = [n for n in order if n in core]
    states = {}
    for d in datasets:
        for c in d.columns:
            if c in states and tuple(states[c]) != tuple(d.states[c]):
                raise MergeError(f"sources disagree on the states of {c!r}")
            states[c] = tuple(d.states[c])

    # core structure and parameters from the richest source
    rich = by_id[plan.richest]
    if plan.core_mode == "learnt":
        s_core = hill_climb(complete_cases(rich, core_order), core_order, config=config)
    else:
        edges = plan.core_edges or default_core_edges(plan)
        s_core = NetworkStructure(core_order, edges)
    s_core = _reorder(s_core, order)
    core_params, core_method = fit_parameters(s_core, rich, config)
    core_edges = sorted(s_core.edges, key=lambda e: (pos[e[0]], pos[e[1]]))
    log.info("core structure on %s: %d edges", plan.richest, len(core_edges))

    def attach(d: PreparedDataset):
        owned = [a for a in order if owner.get(a) == d.source_id]
        if not owned:
            return d.source_id, None, {}, {}
        sp = plan.sources.get(d.source_id, SourcePlan("crafted" if d.kind == "macro" else "learnt"))
        nodes = core_order + owned
        forbidden = forbidden_for(core_order, core_edges, owned)
        if sp.mode == "learnt":
            s_ds = hill_climb(complete_cases(d, nodes), nodes, required=core_edges,
                              forbidden=forbidden, config=config)
        else:
            s_ds = craft_structure(descriptors[d.source_id], plan, states, core_edges)
        s_ds = _reorder(s_ds, order)
        conflicts = [(u, v) for u, v in s_ds.edges
                     if (v in core and u not in core)
                     or (u in core and v in core and (u, v) not in set(core_edges))]
        if conflicts:
            raise MergeError(f"internal consistency: source {d.source_id!r} produced edges "
                             f"conflicting with the core: {sorted(conflicts)}")
        if d.kind == "macro":
            params = {x: macro_to_cpt(d, x, s_ds.parents(x), config.smoothing_alpha) for x in owned}
            method = "macro"
        else:
            params, method = fit_parameters(s_ds, d, config)
        prov = {x: {"source": d.source_id, "structure": sp.mode, "method": method} for x in owned}
        return d.source_id, s_ds, {x: params[x] for x in owned}, prov

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(attach, datasets))
    else:
        parts = [attach(d) for d in datasets]

    edges = set(core_edges)
    cpts = {n: core_params[n] for n in core_order}
    provenance = {n: {"source": plan.richest, "structure": plan.core_mode, "method": core_method}
                  for n in core_order}
    constraints = {}
    for sid, s_ds, params, prov in parts:
        if s_ds is None:
            continue
        edges.update(s_ds.edges)
        cpts.update(params)
        provenance.update(prov)
        constraints[sid] = {
            "required": [list(e) for e in core_edges],
            "forbidden": [list(e) for e in sorted(
                forbidden_for(core_order, core_edges, [a for a in order if owner.get(a) == sid]),
                key=lambda e: (pos[e[0]], pos[e[1]]))],
        }
    structure = NetworkStructure(order, edges)
    meta = {}
    if schema is not None:
        for n in order:
            a = schema.attribute(n)
            meta[n] = {"layer": a.layer, "type": a.attr_type, "ordinal": a.ordinal}
    metadata = {
        "core": core_attrs,
        "richest": plan.richest,
        "config_hash": config_hash(config, plan),
        "provenance": {n: provenance[n] for n in order},
        "constraints": constraints,
    }
    return BayesianNetwork(structure, cpts, {n: states[n] for n in order}, meta, metadata)
