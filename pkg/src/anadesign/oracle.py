"""Closed-form synthetic circuit families.

These stand in for the commercial simulator at desk scale: they generate
labeled training data and provide an independent check on inverse-design
results. Metric functions are smooth on each family's parameter box and
deliberately exercise different metric subsets (gain+bandwidth, oscillation,
pure gain).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .dataset import Record
from .perf import PerformanceVector
from .topology import TopologyRegistry, TopologySpec

import numpy as np


@dataclass
class OracleFamily:
    code: str
    spec: TopologySpec
    metric_fn: Callable[[dict[str, float]], dict[str, float]]

    def eval(self, params: dict[str, float], check_bounds: bool = True) -> PerformanceVector:
        if check_bounds:
            for p in self.spec.parameters:
                v = params[p.name]
                if not (p.lower <= v <= p.upper):
                    raise ValueError(
                        f"{self.code}: {p.name}={v!r} outside [{p.lower}, {p.upper}]")
        metrics = self.metric_fn(params)
        assert set(metrics) == set(self.spec.metric_names)
        return PerformanceVector.from_dict(metrics)


def _rc_amp(params: dict[str, float]) -> dict[str, float]:
    w_um = params["W"] / 1e-6
    r_ohm = params["R"]
    c_f = params["C"]
    gm = 1e-3 * w_um  # siemens
    return {
        "VGain": 20.0 * math.log10(gm * r_ohm),
        "BW": 1.0 / (2.0 * math.pi * r_ohm * c_f),
        "DCP": 0.2 * w_um,  # mW
    }


def _lc_osc(params: dict[str, float]) -> dict[str, float]:
    l_h = params["L"]
    c_f = params["C"]
    w_um = params["W"] / 1e-6
    return {
        "OscF": 1.0 / (2.0 * math.pi * math.sqrt(l_h * c_f)),
        "DCP": 0.3 * w_um,
        "OutP": 10.0 * math.log10(w_um),
    }


def _rdiv_att(params: dict[str, float]) -> dict[str, float]:
    r1, r2 = params["R1"], params["R2"]
    return {"VGain": 20.0 * math.log10(r2 / (r1 + r2))}


_METRIC_FNS = {"rc_amp": _rc_amp, "lc_osc": _lc_osc, "rdiv_att": _rdiv_att}

ORACLE_CODES = tuple(_METRIC_FNS)


def oracle_families(registry: TopologyRegistry) -> dict[str, OracleFamily]:
    out = {}
    for code, fn in _METRIC_FNS.items():
        out[code] = OracleFamily(code=code, spec=registry.get(code), metric_fn=fn)
    return out


def eval_oracle(family: OracleFamily, params: dict[str, float]) -> PerformanceVector:
    return family.eval(params)


def generate_dataset(families: list[OracleFamily], n_per_family: int,
                     seed: int) -> list[Record]:
    """Uniform (linear) parameter sampling inside each family's bounds."""
    records: list[Record] = []
    for fam in families:
        rng = np.random.default_rng([seed, fam.spec.id])
        lo, hi = fam.spec.bounds()
        samples = rng.uniform(lo, hi, size=(n_per_family, len(lo)))
        for row in samples:
            params = {name: float(v) for name, v in zip(fam.spec.param_names, row)}
            pv = fam.eval(params, check_bounds=False)
            records.append(Record(
                topology_id=fam.code,
                params=params,
                metrics=pv.to_dict(),
            ))
    return records
