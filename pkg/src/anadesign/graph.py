"""Multi-edge circuit graphs built from netlists.

Nodes are voltage nets. Every two-terminal component contributes one edge;
MOS devices decompose into their DG/GS/DS terminal-pair edges sharing the
device width, and baluns into a triangle of three inductor edges. Constants
are folded to numbers at build time; ``.param`` symbols stay symbolic until
``bind_parameters`` resolves them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .netlist import Netlist, NetlistError, ParamSpec

# diffusion extension used for the Ad/As computed attributes: area = W * 0.1 um
DIFFUSION_EXTENSION_M = 0.1e-6

MOS_PAIRS = (("DG", (0, 1)), ("DS", (0, 2)), ("GS", (1, 2)))  # indices into (d, g, s)
BALUN_PAIRS = (("M", (0, 1), "Lm"), ("P", (0, 2), "Lp"), ("S", (1, 2), "Ls"))

ETYPE_COLORS = {
    "nmos_DG": "#1f77b4", "nmos_DS": "#1f77b4", "nmos_GS": "#1f77b4",
    "pmos_DG": "#9467bd", "pmos_DS": "#9467bd", "pmos_GS": "#9467bd",
    "resistor": "#d62728", "capacitor": "#2ca02c", "inductor": "#ff7f0e",
    "varactor": "#8c564b", "vsource": "#e377c2", "isource": "#7f7f7f",
}


@dataclass
class Edge:
    component_id: str
    pair: str                       # terminal-pair tag; empty for simple components
    endpoints: tuple[str, str]      # unordered pair of net ids
    etype: str
    numeric: dict[str, float] = field(default_factory=dict)
    parametric: dict[str, str] = field(default_factory=dict)   # attr name -> symbol
    onehot: str = "none"            # source kind: dc | ac | none
    computed: dict[str, tuple[str, float]] = field(default_factory=dict)
    # computed attr -> (base attr, multiplier); resolved against the bound base value

    @property
    def label(self) -> str:
        return f"{self.component_id}_{self.pair}" if self.pair else self.component_id

    def attr_keys(self) -> frozenset[str]:
        return frozenset(self.numeric) | frozenset(self.parametric) | frozenset(self.computed)

    def sort_key(self) -> tuple[str, str]:
        return (self.component_id, self.pair)


@dataclass
class CircuitGraph:
    topology_id: str
    nodes: list[str]
    edges: list[Edge]
    parameters: dict[str, ParamSpec]

    @property
    def node_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    def symbols(self) -> list[str]:
        """Distinct symbols referenced by edges, in parameter-declaration order."""
        used = {s for e in self.edges for s in e.parametric.values()}
        return [p for p in self.parameters if p in used]

    def canonical_form(self) -> tuple:
        """Order-insensitive structural fingerprint for equality checks."""
        edges = tuple(sorted(
            (e.component_id, e.pair, tuple(sorted(e.endpoints)), e.etype,
             tuple(sorted(e.numeric.items())), tuple(sorted(e.parametric.items())),
             e.onehot, tuple(sorted(e.computed.items())))
            for e in self.edges))
        return (self.topology_id, tuple(sorted(self.nodes)), edges)


@dataclass
class BoundGraph:
    """Graph with every symbolic attribute resolved to an SI number.

    ``values`` retains the symbol table so later gradient-based stages can
    route derivatives from edge attributes back to the free parameters.
    """

    graph: CircuitGraph
    values: dict[str, float]                 # symbol -> SI value
    edge_attrs: list[dict[str, float]]       # aligned with graph.edges

    def attr_symbol(self, edge_idx: int, key: str) -> str | None:
        """Symbol a resolved attribute was bound from, if any."""
        edge = self.graph.edges[edge_idx]
        if key in edge.parametric:
            return edge.parametric[key]
        if key in edge.computed:
            base, _ = edge.computed[key]
            return edge.parametric.get(base)
        return None


def _resolve(value: float | str, constants: dict[str, float]) -> float | str:
    if isinstance(value, str) and value in constants:
        return constants[value]
    return value


def build_graph(netlist: Netlist, topology_id: str | None = None) -> CircuitGraph:
    """Expand components into the multi-edge graph; constants are folded."""
    edges: list[Edge] = []
    for comp in netlist.components:
        attrs = {k: _resolve(v, netlist.constants) for k, v in comp.attrs.items()}
        src = attrs.pop("src", "none") if comp.kind in ("vsource", "isource") else "none"

        if comp.kind in ("nmos", "pmos"):
            split = _split_attrs(attrs)
            for pair, (a, b) in MOS_PAIRS:
                edges.append(Edge(
                    component_id=comp.id, pair=pair,
                    endpoints=(comp.terminals[a], comp.terminals[b]),
                    etype=f"{comp.kind}_{pair}",
                    numeric=dict(split[0]), parametric=dict(split[1]),
                    computed={"Ad": ("W", DIFFUSION_EXTENSION_M),
                              "As": ("W", DIFFUSION_EXTENSION_M)},
                ))
        elif comp.kind == "balun":
            # T-equivalent: three coupled inductances become plain inductor edges
            for pair, (a, b), attr in BALUN_PAIRS:
                value = attrs[attr]
                numeric = {"L": value} if isinstance(value, float) else {}
                parametric = {} if isinstance(value, float) else {"L": value}
                edges.append(Edge(
                    component_id=comp.id, pair=pair,
                    endpoints=(comp.terminals[a], comp.terminals[b]),
                    etype="inductor", numeric=numeric, parametric=parametric,
                ))
        else:
            split = _split_attrs(attrs)
            edges.append(Edge(
                component_id=comp.id, pair="",
                endpoints=(comp.terminals[0], comp.terminals[1]),
                etype=comp.kind, numeric=dict(split[0]), parametric=dict(split[1]),
                onehot=src,
            ))

    edges.sort(key=Edge.sort_key)
    graph = CircuitGraph(
        topology_id=topology_id or netlist.name,
        nodes=netlist.nodes(),
        edges=edges,
        parameters=dict(netlist.parameters),
    )
    _check_schema_uniformity(graph)
    return graph


def _split_attrs(attrs: dict[str, float | str]) -> tuple[dict, dict]:
    numeric = {k: v for k, v in attrs.items() if isinstance(v, float)}
    parametric = {k: v for k, v in attrs.items() if isinstance(v, str)}
    return numeric, parametric


def _check_schema_uniformity(graph: CircuitGraph) -> None:
    seen: dict[str, frozenset[str]] = {}
    for e in graph.edges:
        keys = e.attr_keys()
        if e.etype in seen and seen[e.etype] != keys:
            raise NetlistError(
                f"edges of type {e.etype!r} carry differing attribute sets: "
                f"{sorted(seen[e.etype])} vs {sorted(keys)}")
        seen.setdefault(e.etype, keys)


def bind_parameters(graph: CircuitGraph, values: dict[str, float],
                    check_bounds: bool = True) -> BoundGraph:
    """Resolve every parametric attribute numerically.

    Out-of-bounds values are reported as errors rather than clipped;
    callers that want clipping clip before binding.
    """
    needed = {s for e in graph.edges for s in e.parametric.values()}
    missing = sorted(needed - set(values))
    if missing:
        raise KeyError(f"missing symbol(s) for binding: {', '.join(missing)}")
    if check_bounds:
        violations = []
        for sym in sorted(needed):
            spec = graph.parameters.get(sym)
            if spec is not None and not (spec.lower <= values[sym] <= spec.upper):
                violations.append(f"{sym}={values[sym]!r} outside [{spec.lower}, {spec.upper}]")
        if violations:
            raise ValueError("out-of-bounds parameter(s): " + "; ".join(violations))

    edge_attrs = []
    for e in graph.edges:
        resolved = dict(e.numeric)
        for key, sym in e.parametric.items():
            resolved[key] = values[sym]
        for key, (base, mult) in e.computed.items():
            resolved[key] = resolved[base] * mult
        edge_attrs.append(resolved)
    return BoundGraph(graph=graph, values=dict(values), edge_attrs=edge_attrs)


def export_dot(graph: CircuitGraph) -> str:
    """Deterministic DOT text; same-etype edges share a color."""
    lines = [f'graph "{graph.topology_id}" {{']
    for node in graph.nodes:
        lines.append(f'  "{node}";')
    for e in graph.edges:
        color = ETYPE_COLORS.get(e.etype, "#7f7f7f")
        u, v = e.endpoints
        lines.append(f'  "{u}" -- "{v}" [label="{e.label}", color="{color}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
