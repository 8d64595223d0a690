"""Topology registry: per-topology parameter specs, metric masks, and netlists.

The bundled library covers the 20 mm-wave topologies (ids 0-19) plus the
synthetic oracle families used for desk-scale training (ids 100+). Each
registry entry is one JSON document pointing at a netlist fixture; the
declared parameter specs must agree with the netlist's ``.param`` lines.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .graph import CircuitGraph, build_graph
from .netlist import Netlist, ParamSpec, parse_netlist
from .perf import METRICS, mask_from_names

REGISTRY_ENV_VAR = "FALCON_REGISTRY"

# library graphs must stay inside these structural bounds
NODE_RANGE = (4, 40)
EDGE_RANGE = (7, 70)


@dataclass
class ParameterVector:
    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.names),):
            raise ValueError("one value per parameter name required")

    @classmethod
    def from_dict(cls, spec: "TopologySpec", mapping: dict[str, float]) -> "ParameterVector":
        missing = [p.name for p in spec.parameters if p.name not in mapping]
        if missing:
            raise KeyError(f"missing parameter value(s): {', '.join(missing)}")
        names = tuple(p.name for p in spec.parameters)
        return cls(names, np.array([mapping[n] for n in names]))

    def to_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}


@dataclass
class TopologySpec:
    id: int
    code: str
    parameters: list[ParamSpec]
    metric_names: tuple[str, ...]
    area_budget_mm2: float
    netlist_path: str
    netlist: Netlist

    def __post_init__(self):
        if not self.metric_names:
            raise ValueError(f"{self.code}: empty metric set")
        for p in self.parameters:
            if not (p.lower < p.upper):
                raise ValueError(f"{self.code}: parameter {p.name} needs lower < upper")
            if p.scale <= 0:
                raise ValueError(f"{self.code}: parameter {p.name} needs positive scale")

    @property
    def metric_mask(self) -> np.ndarray:
        return mask_from_names(self.metric_names)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([p.lower for p in self.parameters])
        hi = np.array([p.upper for p in self.parameters])
        return lo, hi

    def scales(self) -> np.ndarray:
        return np.array([p.scale for p in self.parameters])

    def build_graph(self) -> CircuitGraph:
        return build_graph(self.netlist, topology_id=self.code)

    def clip(self, values: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds()
        return np.clip(values, lo, hi)


def _load_spec(doc: dict, base_dir: Path) -> TopologySpec:
    netlist_path = base_dir / doc["netlist"]
    netlist = parse_netlist(netlist_path.read_text())
    params = [ParamSpec(p["name"], float(p["lower"]), float(p["upper"]), float(p["scale"]))
              for p in doc["parameters"]]
    spec = TopologySpec(
        id=int(doc["id"]),
        code=doc["code"],
        parameters=params,
        metric_names=tuple(doc["metrics"]),
        area_budget_mm2=float(doc.get("area_budget_mm2", 1.0)),
        netlist_path=str(netlist_path),
        netlist=netlist,
    )
    declared = {p.name: p for p in netlist.parameters.values()}
    for p in params:
        got = declared.get(p.name)
        if got is None:
            raise ValueError(f"{spec.code}: parameter {p.name} absent from netlist")
        if (got.lower, got.upper, got.scale) != (p.lower, p.upper, p.scale):
            raise ValueError(f"{spec.code}: parameter {p.name} disagrees with netlist")
    extra = set(declared) - {p.name for p in params}
    if extra:
        raise ValueError(f"{spec.code}: netlist declares unlisted parameter(s) {sorted(extra)}")
    for name in spec.metric_names:
        if name not in METRICS:
            raise ValueError(f"{spec.code}: unknown metric {name}")
    return spec


class TopologyRegistry:
    def __init__(self, specs: list[TopologySpec]):
        self.by_code = {s.code: s for s in specs}
        self.by_id = {s.id: s for s in specs}
        if len(self.by_code) != len(specs):
            raise ValueError("duplicate topology codes in registry")
        if len(self.by_id) != len(specs):
            raise ValueError("duplicate topology ids in registry")

    def __len__(self) -> int:
        return len(self.by_code)

    def __iter__(self):
        return iter(sorted(self.by_code.values(), key=lambda s: s.id))

    def get(self, key: str | int) -> TopologySpec:
        if isinstance(key, int) or (isinstance(key, str) and key.isdigit()):
            spec = self.by_id.get(int(key))
        else:
            spec = self.by_code.get(key)
        if spec is None:
            raise KeyError(f"unknown topology {key!r}")
        return spec

    def library(self) -> list[TopologySpec]:
        """The 20-entry mm-wave topology library (ids 0-19)."""
        return [s for s in self if 0 <= s.id <= 19]

    def validate_structure(self) -> None:
        for spec in self.library():
            g = spec.build_graph()
            n, e = len(g.nodes), len(g.edges)
            if not (NODE_RANGE[0] <= n <= NODE_RANGE[1]):
                raise ValueError(f"{spec.code}: node count {n} outside {NODE_RANGE}")
            if not (EDGE_RANGE[0] <= e <= EDGE_RANGE[1]):
                raise ValueError(f"{spec.code}: edge count {e} outside {EDGE_RANGE}")


def _bundled_dir() -> Path:
    return Path(resources.files("anadesign") / "data")


def load_registry(path: str | Path | None = None) -> TopologyRegistry:
    """Load topology specs from a directory of JSON documents.

    Resolution order: explicit ``path`` argument, the FALCON_REGISTRY
    environment variable, then the bundled registry. Netlist paths inside
    the documents are resolved relative to the registry's parent directory
    (bundled layout keeps ``registry/`` and ``netlists/`` side by side).
    """
    if path is None:
        path = os.environ.get(REGISTRY_ENV_VAR)
    json_dir = Path(path) if path is not None else _bundled_dir() / "registry"
    root = json_dir.parent
    specs = []
    for doc_path in sorted(json_dir.glob("*.json")):
        doc = json.loads(doc_path.read_text())
        specs.append(_load_spec(doc, root))
    if not specs:
        raise FileNotFoundError(f"no topology documents found in {json_dir}")
    return TopologyRegistry(specs)
