"""Readable summaries and DOT export of a model file."""
from __future__ import annotations

from dataclasses import dataclass, field

from .bayesnet import BayesianNetwork

UNKNOWN = "unknown"


@dataclass
class ModelSummary:
    groups: dict = field(default_factory=dict)          # (layer, type) -> [nodes]
    interdependencies: dict = field(default_factory=dict)  # layer -> [edges]
    outer: list = field(default_factory=list)            # socio-demographic -> motivational
    reverse: list = field(default_factory=list)          # motivational -> socio-demographic
    n_edges: int = 0

    def lines(self) -> list[str]:
        out = [f"nodes: {sum(len(v) for v in self.groups.values())}", f"edges: {self.n_edges}", ""]
        for (layer, typ), nodes in self.groups.items():
            out.append(f"[{layer} / {typ}] " + ", ".join(nodes))
        out.append("")
        for layer, edges in self.interdependencies.items():
            out.append(f"Interdependencies ({layer}): {len(edges)}")
            out.extend(f"  {u} -> {v}" for u, v in edges)
        out.append(f"Outer dependencies (socio-demographic -> motivational): {len(self.outer)}")
        out.extend(f"  {u} -> {v}" for u, v in self.outer)
        if self.reverse:
            out.append(f"Reverse dependencies (motivational -> socio-demographic): {len(self.reverse)}")
            out.extend(f"  {u} -> {v}" for u, v in self.reverse)
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _layer(net: BayesianNetwork, n: str) -> str:
    return net.node_meta.get(n, {}).get("layer", UNKNOWN)


def inspect_model(net: BayesianNetwork) -> ModelSummary:
    s = ModelSummary(n_edges=len(net.structure.edges))
    for n in net.nodes:
        key = (_layer(net, n), net.node_meta.get(n, {}).get("type", UNKNOWN))
        s.groups.setdefault(key, []).append(n)
    for u, v in net.structure.sorted_edges():
        lu, lv = _layer(net, u), _layer(net, v)
        if lu == lv:
            s.interdependencies.setdefault(lu, []).append((u, v))
        elif lu == "socio-demographic" and lv == "motivational":
            s.outer.append((u, v))
        else:
            s.reverse.append((u, v))
    return s


def to_dot(net: BayesianNetwork) -> str:
    """Graphviz digraph, one cluster per layer."""
    def q(x):
        return '"' + str(x).replace("\\", "\\\\").replace('"', '\\"') + '"'

    lines = ["digraph model {", "  rankdir=TB;", "  node [shape=ellipse];"]
    layers: dict[str, list] = {}
    for n in net.nodes:
        layers.setdefault(_layer(net, n), []).append(n)
    for i, (layer, nodes) in enumerate(layers.items()):
        lines.append(f"  subgraph cluster_{i} {{")
        lines.append(f"    label={q(layer)};")
        lines.extend(f"    {q(n)};" for n in nodes)
        lines.append("  }")
    lines.extend(f"  {q(u)} -> {q(v)};" for u, v in net.structure.sorted_edges())
    lines.append("}")
    return "\n".join(lines) + "\n"
