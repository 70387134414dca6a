"""Discrete Bayesian networks: DAG structure, CPTs, exact queries, sampling.

CPT layout is normative: a node's table has one row per parent
configuration, with parents taken in node-declaration order and the last
parent varying fastest (C order), and one column per node state.
"""
from __future__ import annotations

import heapq
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .freq import FrequencyTable
from .rng import CounterRNG

log = logging.getLogger(__name__)

MODEL_FORMAT = "popsynth-bn/1"
ENUMERATION_CAP = 10**7
ROW_TOL = 1e-9
DEFAULT_MAX_TRIES = 10_000
CHUNK = 1 << 16


class StructureError(ValueError):
    pass


class CycleError(StructureError):
    pass


class EnumerationCapError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


Edge = tuple[str, str]


class NetworkStructure:
    """A DAG over named nodes with required/forbidden edge constraints.

    Mutations that would create a cycle, add a forbidden edge or drop a
    required edge raise and leave the structure untouched.
    """

    def __init__(self, nodes: Sequence[str], edges: Iterable[Edge] = (),
                 required: Iterable[Edge] = (), forbidden: Iterable[Edge] = ()):
        self.nodes = tuple(nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise StructureError("duplicate node names")
        self._pos = {n: i for i, n in enumerate(self.nodes)}
        self.required = frozenset(tuple(e) for e in required)
        self.forbidden = frozenset(tuple(e) for e in forbidden)
        for u, v in self.required | self.forbidden:
            self._check_nodes(u, v)
        if self.required & self.forbidden:
            raise StructureError(
                f"edges both required and forbidden: {sorted(self.required & self.forbidden)}"
            )
        self._parents: dict[str, set] = {n: set() for n in self.nodes}
        self._children: dict[str, set] = {n: set() for n in self.nodes}
        for u, v in sorted(set(map(tuple, edges)) | self.required):
            self.add_edge(u, v)

    # -- queries -----------------------------------------------------------
    @property
    def edges(self) -> frozenset:
        return frozenset((p, c) for c, ps in self._parents.items() for p in ps)

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges, key=lambda e: (self._pos[e[0]], self._pos[e[1]]))

    def parents(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(self._parents[node], key=self._pos.__getitem__))

    def children(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(self._children[node], key=self._pos.__getitem__))

    def has_edge(self, u: str, v: str) -> bool:
        return u in self._parents[v]

    def has_path(self, src: str, dst: str) -> bool:
        stack, seen = [src], {src}
        while stack:
            x = stack.pop()
            if x == dst:
                return True
            for c in self._children[x]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return False

    def roots(self) -> list[str]:
        return [n for n in self.nodes if not self._parents[n]]

    def topological_order(self) -> list[str]:
        """Kahn's algorithm, ties broken lexicographically by node name."""
        indeg = {n: len(self._parents[n]) for n in self.nodes}
        heap = [n for n, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            n = heapq.heappop(heap)
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, c)
        if len(order) != len(self.nodes):
            raise CycleError("graph contains a cycle")
        return order

    # -- mutation ----------------------------------------------------------
    def _check_nodes(self, u, v):
        for x in (u, v):
            if x not in self._pos:
                raise StructureError(f"unknown node {x!r}")
        if u == v:
            raise CycleError(f"self-loop on {u!r}")

    def can_add(self, u: str, v: str) -> bool:
        return (u != v and not self.has_edge(u, v) and (u, v) not in self.forbidden
                and not self.has_path(v, u))

    def add_edge(self, u: str, v: str) -> None:
        self._check_nodes(u, v)
        if (u, v) in self.forbidden:
            raise StructureError(f"edge {u}->{v} is forbidden")
        if self.has_edge(u, v):
            return
        if self.has_path(v, u):
            raise CycleError(f"edge {u}->{v} would create a cycle")
        self._parents[v].add(u)
        self._children[u].add(v)

    def remove_edge(self, u: str, v: str) -> None:
        if (u, v) in self.required:
            raise StructureError(f"edge {u}->{v} is required")
        if not self.has_edge(u, v):
            raise StructureError(f"no edge {u}->{v}")
        self._parents[v].discard(u)
        self._children[u].discard(v)

    def reverse_edge(self, u: str, v: str) -> None:
        if (v, u) in self.forbidden:
            raise StructureError(f"edge {v}->{u} is forbidden")
        self.remove_edge(u, v)
        try:
            self.add_edge(v, u)
        except StructureError:
            self._parents[v].add(u)
            self._children[u].add(v)
            raise

    def copy(self) -> "NetworkStructure":
        return NetworkStructure(self.nodes, self.edges, self.required, self.forbidden)

    def __eq__(self, other):
        return (isinstance(other, NetworkStructure) and self.nodes == other.nodes
                and self.edges == other.edges)

    def __repr__(self):
        edges = ", ".join(f"{u}->{v}" for u, v in self.sorted_edges())
        return f"NetworkStructure(nodes={list(self.nodes)}, edges=[{edges}])"


def skeleton(structure: NetworkStructure) -> frozenset:
    return frozenset(frozenset(e) for e in structure.edges)


def v_structures(structure: NetworkStructure) -> frozenset:
    out = set()
    for c in structure.nodes:
        for a, b in combinations(structure.parents(c), 2):
            if not structure.has_edge(a, b) and not structure.has_edge(b, a):
                out.add((frozenset((a, b)), c))
    return frozenset(out)


def markov_equivalent(s1: NetworkStructure, s2: NetworkStructure) -> bool:
    """Same skeleton and same immoralities (Verma & Pearl)."""
    return skeleton(s1) == skeleton(s2) and v_structures(s1) == v_structures(s2)


@dataclass(frozen=True, eq=False)
class CPT:
    child: str
    parents: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=np.float64, copy=True)
        if t.ndim != 2:
            raise ValueError(f"CPT for {self.child!r} must be 2-D")
        t.flags.writeable = False
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "parents", tuple(self.parents))

    def identical(self, other: "CPT") -> bool:
        return (self.child == other.child and self.parents == other.parents
                and self.table.shape == other.table.shape
                and self.table.tobytes() == other.table.tobytes())


ParameterSet = dict  # node name -> CPT


def config_index(values: np.ndarray, cards: Sequence[int]) -> np.ndarray:
    """Parent-configuration row index; ``values`` is (n, len(cards)), last varies fastest."""
    idx = np.zeros(values.shape[0], dtype=np.int64)
    for j, c in enumerate(cards):
        idx = idx * int(c) + values[:, j]
    return idx


@dataclass(frozen=True, eq=False)
class BayesianNetwork:
    structure: NetworkStructure
    cpts: Mapping[str, CPT]
    states: Mapping[str, tuple[str, ...]]
    node_meta: Mapping[str, dict] = field(default_factory=dict)
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        s = self.structure
        object.__setattr__(self, "states", {n: tuple(self.states[n]) for n in s.nodes})
        object.__setattr__(self, "cpts", {n: self.cpts[n] for n in s.nodes})
        if set(self.cpts) != set(s.nodes):
            raise StructureError("CPT set does not match structure nodes")
        s.topological_order()
        for n in s.nodes:
            cpt = self.cpts[n]
            if cpt.parents != s.parents(n):
                raise StructureError(
                    f"CPT parents of {n!r} {cpt.parents} differ from structure {s.parents(n)}"
                )
            q = int(np.prod([self.card(p) for p in cpt.parents])) if cpt.parents else 1
            if cpt.table.shape != (q, self.card(n)):
                raise StructureError(
                    f"CPT of {n!r} has shape {cpt.table.shape}, expected {(q, self.card(n))}"
                )
            t = cpt.table
            if (t < 0).any() or (t > 1).any() or not np.isfinite(t).all():
                raise ValueError(f"CPT of {n!r} has entries outside [0, 1]")
            if np.abs(t.sum(axis=1) - 1.0).max() > ROW_TOL:
                raise ValueError(f"CPT rows of {n!r} do not sum to 1")

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.structure.nodes

    def card(self, node: str) -> int:
        return len(self.states[node])

    def cards(self, nodes: Optional[Sequence[str]] = None) -> tuple[int, ...]:
        return tuple(self.card(n) for n in (self.nodes if nodes is None else nodes))

    def state_index(self, node: str, value) -> int:
        if isinstance(value, str):
            try:
                return self.states[node].index(value)
            except ValueError:
                raise ValueError(f"{value!r} is not a state of {node!r}") from None
        v = int(value)
        if not 0 <= v < self.card(node):
            raise ValueError(f"state index {v} out of range for {node!r}")
        return v

    def subnetwork(self, nodes: Sequence[str]) -> "BayesianNetwork":
        """Restriction to ``nodes``; they must be closed under taking parents."""
        nodes = [n for n in self.nodes if n in set(nodes)]
        for n in nodes:
            missing = set(self.structure.parents(n)) - set(nodes)
            if missing:
                raise StructureError(f"{n!r} has parents outside the subset: {sorted(missing)}")
        edges = [(u, v) for u, v in self.structure.edges if u in nodes and v in nodes]
        return BayesianNetwork(
            NetworkStructure(nodes, edges),
            {n: self.cpts[n] for n in nodes},
            {n: self.states[n] for n in nodes},
            {n: self.node_meta[n] for n in nodes if n in self.node_meta},
        )


# -- exact queries ---------------------------------------------------------

def joint_probability(net: BayesianNetwork, assignment: Mapping[str, object]) -> float:
    """Product over nodes of P(node state | parent states)."""
    missing = [n for n in net.nodes if n not in assignment]
    if missing:
        raise ValueError(f"assignment is missing nodes {missing}")
    idx = {n: net.state_index(n, assignment[n]) for n in net.nodes}
    p = 1.0
    for n in net.nodes:
        cpt = net.cpts[n]
        row = 0
        for par in cpt.parents:
            row = row * net.card(par) + idx[par]
        p *= float(cpt.table[row, idx[n]])
    return p


def _factor(net: BayesianNetwork, node: str, axes_of: Mapping[str, int], ndim: int) -> np.ndarray:
    cpt = net.cpts[node]
    fam = list(cpt.parents) + [node]
    t = cpt.table.reshape(net.cards(fam))
    axes = [axes_of[x] for x in fam]
    order = np.argsort(axes)
    t = t.transpose(order)
    shape = [1] * ndim
    for x in fam:
        shape[axes_of[x]] = net.card(x)
    return t.reshape(shape)


def enumerate_joint(net: BayesianNetwork, cap: int = ENUMERATION_CAP) -> FrequencyTable:
    """Full joint table with one axis per node (node order)."""
    cells = int(np.prod(net.cards(), dtype=object))
    if cells > cap:
        raise EnumerationCapError(f"joint has {cells} cells, cap is {cap}")
    axes_of = {n: i for i, n in enumerate(net.nodes)}
    joint = np.ones(net.cards())
    for n in net.nodes:
        joint = joint * _factor(net, n, axes_of, len(net.nodes))
    return FrequencyTable(net.nodes, joint)


def marginal(net: BayesianNetwork, attrs: Sequence[str], cap: int = ENUMERATION_CAP) -> FrequencyTable:
    """Exact marginal by summing the enumerated joint (small networks only)."""
    for a in attrs:
        if a not in net.states:
            raise KeyError(f"unknown attribute {a!r}")
    return enumerate_joint(net, cap).marginalize(attrs)


# -- sampling --------------------------------------------------------------

def _cdf_table(table: np.ndarray) -> np.ndarray:
    """Inner cut points per row; cuts after the last positive state are +inf."""
    cdf = np.cumsum(table, axis=1)[:, :-1]
    tail = np.cumsum(table[:, ::-1], axis=1)[:, ::-1][:, 1:]
    return np.where(tail > 0, cdf, np.inf)


class _Sampler:
    def __init__(self, net: BayesianNetwork, seed: int, evidence: Mapping[str, int],
                 max_tries: int):
        self.net = net
        self.rng = CounterRNG(seed)
        self.order = net.structure.topological_order()
        self.col = {n: i for i, n in enumerate(net.nodes)}
        self.cdf = {n: _cdf_table(net.cpts[n].table) for n in net.nodes}
        self.pcols = {n: [self.col[p] for p in net.cpts[n].parents] for n in net.nodes}
        self.pcards = {n: net.cards(net.cpts[n].parents) for n in net.nodes}
        roots = set(net.structure.roots())
        self.clamp = {n: v for n, v in evidence.items() if n in roots}
        self.checks = [(self.col[n], v) for n, v in evidence.items() if n not in roots]
        self.max_tries = max_tries
        dtype = np.int16 if max(net.cards()) < 2**15 else np.int32
        self.dtype = dtype

    def block(self, start: int, stop: int) -> np.ndarray:
        net, rng = self.net, self.rng
        keys = rng.record_keys(np.arange(start, stop, dtype=np.uint64))
        out = np.empty((stop - start, len(net.nodes)), dtype=self.dtype)
        pending = np.arange(stop - start)
        tries = self.max_tries if self.checks else 1
        n_order = len(self.order)
        for attempt in range(tries):
            sub = keys[pending]
            vals = np.empty((len(pending), len(net.nodes)), dtype=self.dtype)
            for pos, node in enumerate(self.order):
                j = self.col[node]
                if node in self.clamp:
                    vals[:, j] = self.clamp[node]
                    continue
                cdf = self.cdf[node]
                if self.pcols[node]:
                    cfg = config_index(vals[:, self.pcols[node]].astype(np.int64), self.pcards[node])
                    cuts = cdf[cfg]
                else:
                    cuts = cdf[0][None, :]
                u = rng.uniform(None, attempt * n_order + pos, keys=sub)
                vals[:, j] = (u[:, None] >= cuts).sum(axis=1)
            out[pending] = vals
            if not self.checks:
                pending = pending[:0]
                break
            ok = np.ones(len(pending), dtype=bool)
            for j, v in self.checks:
                ok &= vals[:, j] == v
            pending = pending[~ok]
            if pending.size == 0:
                break
        if pending.size:
            raise SamplingError(
                f"evidence not satisfied for record {start + int(pending[0])} after "
                f"{self.max_tries} tries; it may have (near) zero probability"
            )
        return out


def sample(net: BayesianNetwork, n: int, seed: int, evidence: Optional[Mapping[str, object]] = None,
           max_tries: int = DEFAULT_MAX_TRIES, workers: int = 1, chunk_size: int = CHUNK) -> np.ndarray:
    """Ancestral sampling; returns an (n, nodes) array of state indices.

    Record ``i`` draws its uniforms from the substream ``(seed, i)`` only,
    so any chunking or worker count gives bit-identical output. Evidence on
    root nodes is clamped; evidence on other nodes is met by per-record
    rejection with at most ``max_tries`` attempts.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    for k in evidence or {}:
        if k not in net.states:
            raise KeyError(f"evidence on unknown node {k!r}")
    ev = {k: net.state_index(k, v) for k, v in (evidence or {}).items()}
    sampler = _Sampler(net, seed, ev, max_tries)
    bounds = [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda b: sampler.block(*b), bounds))
    else:
        blocks = [sampler.block(*b) for b in bounds]
    return np.concatenate(blocks, axis=0)


# -- model file ------------------------------------------------------------

def model_to_dict(net: BayesianNetwork) -> dict:
    nodes = []
    for n in net.nodes:
        entry = {"name": n, "states": list(net.states[n])}
        entry.update(net.node_meta.get(n, {}))
        nodes.append(entry)
    s = net.structure
    return {
        "format": MODEL_FORMAT,
        "nodes": nodes,
        "edges": [list(e) for e in s.sorted_edges()],
        "cpts": {
            n: {"parents": list(net.cpts[n].parents),
                "rows": [[float(x) for x in row] for row in net.cpts[n].table]}
            for n in net.nodes
        },
        "metadata": dict(net.metadata),
    }


def dumps_model(net: BayesianNetwork) -> str:
    return json.dumps(model_to_dict(net), indent=1, sort_keys=False, ensure_ascii=False) + "\n"


def write_model(net: BayesianNetwork, path) -> None:
    Path(path).write_text(dumps_model(net), encoding="utf-8")


def model_from_dict(doc: dict) -> BayesianNetwork:
    try:
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"unsupported model format {doc.get('format')!r}")
        names = [x["name"] for x in doc["nodes"]]
        states = {x["name"]: tuple(x["states"]) for x in doc["nodes"]}
        meta = {x["name"]: {k: v for k, v in x.items() if k not in ("name", "states")}
                for x in doc["nodes"]}
        meta = {k: v for k, v in meta.items() if v}
        edges = [tuple(e) for e in doc["edges"]]
        structure = NetworkStructure(names, edges)
        cpts = {}
        for n in names:
            spec = doc["cpts"][n]
            try:
                t = np.array(spec["rows"], dtype=np.float64)
            except ValueError:
                raise ModelFormatError(f"CPT rows of {n!r} are ragged or non-numeric") from None
            if t.ndim != 2:
                raise ModelFormatError(f"CPT rows of {n!r} are ragged")
            sums = t.sum(axis=1)
            if np.abs(sums - 1.0).max() > ROW_TOL:
                raise ModelFormatError(f"CPT rows of {n!r} do not sum to 1")
            off = np.abs(sums - 1.0) > 4 * np.finfo(float).eps
            if off.any():
                t[off] /= sums[off, None]
            cpts[n] = CPT(n, tuple(spec["parents"]), t)
        return BayesianNetwork(structure, cpts, states, meta, doc.get("metadata", {}))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None


def read_model(path) -> BayesianNetwork:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"cannot parse model file {path}: {exc}") from None
    return model_from_dict(doc)
