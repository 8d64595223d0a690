"""Analytical layout models for passive components.

Deterministic, differentiable maps between component values and layout
geometry in a 45 nm flow: MIM capacitors (fixed 20 um length, tunable
width), silicided poly resistors (fixed 5 um width, tunable length), and
one-turn octagonal spiral inductors (10 um trace, tunable radius).

The simplified linear/power-law forms are canonical; the full physics
models are kept as documented alternates because their constants disagree
slightly. Values outside a single cell's range decompose into series or
parallel copies of in-range cells; the cell count is held piecewise
constant so gradients flow through per-cell geometry only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, index_select
from .graph import BoundGraph
from .topology import TopologySpec

# -- process constants -------------------------------------------------------------

CAP_AREA_DENSITY_FF_UM2 = 0.335   # parallel-plate density
CAP_FRINGE_FF_UM = 0.11           # fringing contribution per unit perimeter
CAP_LENGTH_UM = 20.0              # fixed MIM length
CAP_W_RANGE_UM = (6.05, 150.0)

RES_SHEET_OHM = 17.6              # silicided poly sheet resistance (ohm/sq)
RES_WIDTH_UM = 5.0                # fixed drawn width
RES_DELTA_W_UM = 0.048            # process width bias
RES_END_OHM = 1.0                 # per-terminal contact resistance
RES_RESIDUAL_OHM = 0.917
RES_L_RANGE_UM = (0.4, 5.0)

IND_COEFF_NH = 2.337e-3           # one-turn spiral, W=10 um, S=0
IND_EXPONENT = 1.164
IND_TRACE_W_UM = 10.0
IND_SPACING_UM = 0.0
IND_MIN_NH = 0.1

# single-cell value ranges used by the series/parallel decomposition
RES_CELL_OHM = (4.32, 20.42)
CAP_CELL_FF = (46.32, 1042.4)

AREA_NORM_UM2 = 1e6               # report areas in um^2, losses in mm^2

PASSIVE_ETYPES = {"resistor": "R", "capacitor": "C", "inductor": "L"}

# advisory circuit-level rules; no placement engine consumes these
CIRCUIT_RULES = {
    "inductor_spacing_um": 35.0,
    "guardring_spacing_um": 5.0,
    "diff_pair_symmetry_um": 0.5,
}

# cell-level constants echoed in DRC reports
DRC_CONSTANTS = {
    "cap": {"W_MIN": 6.05, "W_MAX": 150.0, "VV_SIZE": 4.0, "VV_SPACE": 2.0,
            "VV_EDGE_MIN": 1.0},
    "res": {"W_MIN": 0.462, "W_MAX": 5.0, "L_MIN": 0.4, "L_MAX": 5.0,
            "CA_SIZE": 0.06, "CA_SPACE": 0.10, "CA_EDGE": 0.11},
    "ind": {"M3_W_MIN": 2.0, "M3_W_MAX": 20.0, "M3_S_MIN": 2.0},
    "grid": {"MIN_GRID": 0.005},
}


def _val(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


# -- simplified single-cell models (canonical) ----------------------------------


def cap_from_width(w_um):
    """Capacitance [fF] of a single MIM cell of width ``w_um``."""
    if not (CAP_W_RANGE_UM[0] <= _val(w_um) <= CAP_W_RANGE_UM[1]):
        raise ValueError(f"cap width {_val(w_um)} um outside {CAP_W_RANGE_UM}")
    return 6.92 * w_um + 4.4


def cap_width(c_ff):
    """Width [um] realizing a single-cell capacitance ``c_ff``."""
    w = (c_ff - 4.4) / 6.92
    if not (CAP_W_RANGE_UM[0] - 1e-9 <= _val(w) <= CAP_W_RANGE_UM[1] + 1e-9):
        raise ValueError(f"capacitance {_val(c_ff)} fF outside single-cell range")
    return w


def cap_area(w_um):
    """Bounding area [um^2] of a single MIM cell."""
    if not (CAP_W_RANGE_UM[0] <= _val(w_um) <= CAP_W_RANGE_UM[1]):
        raise ValueError(f"cap width {_val(w_um)} um outside {CAP_W_RANGE_UM}")
    return 22.0 * w_um + 44.0


def res_from_length(l_um):
    """Resistance [ohm] of a single poly cell of length ``l_um``."""
    if not (RES_L_RANGE_UM[0] <= _val(l_um) <= RES_L_RANGE_UM[1]):
        raise ValueError(f"resistor length {_val(l_um)} um outside {RES_L_RANGE_UM}")
    return 3.5007 * l_um + 2.917


def res_length(r_ohm):
    """Length [um] realizing a single-cell resistance ``r_ohm``."""
    l = (r_ohm - 2.917) / 3.5007
    value = _val(l)
    # the cell range maps to lengths [0.4008, 5.0]; allow fp slack at the ends
    if not (RES_L_RANGE_UM[0] - 1e-9 <= value <= RES_L_RANGE_UM[1] + 1e-9):
        raise ValueError(f"resistance {_val(r_ohm)} ohm outside single-cell range")
    return l


def res_area(l_um):
    """Bounding area [um^2] of a single poly resistor cell."""
    if not (RES_L_RANGE_UM[0] - 1e-9 <= _val(l_um) <= RES_L_RANGE_UM[1] + 1e-9):
        raise ValueError(f"resistor length {_val(l_um)} um outside {RES_L_RANGE_UM}")
    return 5.2 * l_um + 8.362


def ind_from_radius(r_um):
    """Inductance [nH] of a one-turn spiral of radius ``r_um``."""
    if _val(r_um) <= 0:
        raise ValueError("inductor radius must be positive")
    return IND_COEFF_NH * r_um**IND_EXPONENT


def ind_radius(l_nh):
    """Radius [um] realizing inductance ``l_nh``."""
    if _val(l_nh) <= 0:
        raise ValueError("inductance must be positive")
    return (l_nh * (1.0 / IND_COEFF_NH)) ** (1.0 / IND_EXPONENT)


def ind_area(r_um):
    """Bounding area [um^2] of a one-turn spiral of radius ``r_um``."""
    if _val(r_um) <= 0:
        raise ValueError("inductor radius must be positive")
    return 4.0 * r_um**2 + 108.0 * r_um + 440.0


# -- full physics alternates ---------------------------------------------------


def mim_capacitance(l_um: float, w_um: float) -> float:
    """Area + fringing MIM model [fF]; reduces to the boxed form at L=20."""
    return (CAP_AREA_DENSITY_FF_UM2 * l_um * w_um
            + CAP_FRINGE_FF_UM * 2.0 * (l_um + w_um))


def poly_resistance(l_um: float, w_um: float = RES_WIDTH_UM) -> float:
    """Sheet-resistance model [ohm] with end and residual corrections."""
    return (RES_SHEET_OHM * l_um / (w_um + RES_DELTA_W_UM)
            + 2.0 * RES_END_OHM + RES_RESIDUAL_OHM)


def spiral_inductance(r_um: float, w_um: float = IND_TRACE_W_UM,
                      s_um: float = IND_SPACING_UM) -> float:
    """Monomial one-turn spiral model [nH] in terms of diameters."""
    d_out = 2.0 * (r_um + w_um / 2.0)
    d_avg = 2.0 * r_um
    s_term = s_um**-0.049 if s_um > 0 else 1.0  # S=0 layouts drop the spacing factor
    return 2.454e-4 * d_out**-1.21 * w_um**-0.163 * d_avg**2.836 * s_term


# -- decomposition ---------------------------------------------------------------


@dataclass
class CellDecomposition:
    kind: str
    n: int
    arrangement: str          # single | series | parallel
    cell_value: object        # float or Tensor, in fF / ohm / nH
    geometry_um: object       # W, L, or radius of one cell
    cell_area_um2: object
    total_area_um2: object


def decompose(value, kind: str) -> CellDecomposition:
    """Realize ``value`` (ohm / fF / nH by kind) as in-range unit cells.

    The cell count is a piecewise-constant integer derived from the numeric
    value; differentiable inputs keep gradients through cell geometry.
    """
    v = _val(value)
    if v <= 0:
        raise ValueError(f"non-positive {kind} value {v}")
    if kind == "resistor":
        lo, hi = RES_CELL_OHM
        if v > hi:
            n, arrangement = math.ceil(v / hi), "series"
            cell = value * (1.0 / n)
        elif v < lo:
            n, arrangement = math.ceil(lo / v), "parallel"
            cell = value * float(n)
        else:
            n, arrangement, cell = 1, "single", value
        geom = res_length(cell)
        cell_area = res_area(geom)
    elif kind == "capacitor":
        lo, hi = CAP_CELL_FF
        if v > hi:
            n, arrangement = math.ceil(v / hi), "parallel"
            cell = value * (1.0 / n)
        elif v < lo:
            n, arrangement = math.ceil(lo / v), "series"
            cell = value * float(n)
        else:
            n, arrangement, cell = 1, "single", value
        geom = cap_width(cell)
        cell_area = cap_area(geom)
    elif kind == "inductor":
        n, arrangement, cell = 1, "single", value
        geom = ind_radius(cell)
        cell_area = ind_area(geom)
    else:
        raise ValueError(f"unknown passive kind {kind!r}")
    return CellDecomposition(kind, n, arrangement, cell, geom, cell_area,
                             cell_area * float(n))


# -- graph-level loss and reports ---------------------------------------------

_SI_TO_MODEL_UNITS = {"resistor": 1.0, "capacitor": 1e15, "inductor": 1e9}


@dataclass
class PassiveComponent:
    label: str
    kind: str
    param_index: int | None   # index into the spec's parameter vector
    param_scale: float        # SI per unit of the optimization variable
    si_value: float | None    # fixed SI value when not parametric


def passive_plan(bound: BoundGraph, spec: TopologySpec | None = None,
                 ) -> list[PassiveComponent]:
    """Enumerate passive edges with their value sources for gradient routing."""
    param_pos = {}
    scales = {}
    if spec is not None:
        param_pos = {n: i for i, n in enumerate(spec.param_names)}
        scales = {p.name: p.scale for p in spec.parameters}
    plan = []
    for i, edge in enumerate(bound.graph.edges):
        key = PASSIVE_ETYPES.get(edge.etype)
        if key is None:
            continue
        sym = edge.parametric.get(key)
        if sym is not None and sym in param_pos:
            plan.append(PassiveComponent(edge.label, edge.etype, param_pos[sym],
                                         scales[sym], None))
        else:
            plan.append(PassiveComponent(edge.label, edge.etype, None, 1.0,
                                         bound.edge_attrs[i][key]))
    return plan


def layout_loss_tensor(plan: list[PassiveComponent], x: Tensor | None) -> Tensor:
    """Total passive area normalized by 1 mm^2; differentiable in ``x``.

    ``x`` is the unit-scaled parameter vector (or None when every passive
    value is fixed). Components are grouped per kind and vectorized.
    """
    total = Tensor(0.0)
    col = x.reshape(x.size, 1) if x is not None else None
    for kind in ("resistor", "capacitor", "inductor"):
        comps = [c for c in plan if c.kind == kind]
        if not comps:
            continue
        to_unit = _SI_TO_MODEL_UNITS[kind]
        # assemble the per-component value vector in model units
        param_idx = [c.param_index for c in comps if c.param_index is not None]
        values_parts = []
        if param_idx:
            scales = np.array([c.param_scale * to_unit for c in comps
                               if c.param_index is not None])
            values_parts.append(
                index_select(col, param_idx).reshape(len(param_idx)) * Tensor(scales))
        fixed = [c.si_value * to_unit for c in comps if c.param_index is None]
        if fixed:
            values_parts.append(Tensor(np.array(fixed)))
        values = values_parts[0] if len(values_parts) == 1 else concat(values_parts)
        raw = values.data
        if np.any(raw <= 0):
            raise ValueError(f"non-positive {kind} value in layout loss")
        # piecewise-constant cell counts and split factors (stop-gradient)
        ns = np.ones(raw.shape)
        split = np.ones(raw.shape)
        if kind == "resistor":
            lo, hi = RES_CELL_OHM
            over, under = raw > hi, raw < lo
            ns[over] = np.ceil(raw[over] / hi)
            ns[under] = np.ceil(lo / raw[under])
            split[over] = 1.0 / ns[over]
            split[under] = ns[under]
            cell = values * Tensor(split)
            geom = (cell - 2.917) * (1.0 / 3.5007)
            cell_area = 5.2 * geom + 8.362
        elif kind == "capacitor":
            lo, hi = CAP_CELL_FF
            over, under = raw > hi, raw < lo
            ns[over] = np.ceil(raw[over] / hi)
            ns[under] = np.ceil(lo / raw[under])
            split[over] = 1.0 / ns[over]
            split[under] = ns[under]
            cell = values * Tensor(split)
            geom = (cell - 4.4) * (1.0 / 6.92)
            cell_area = 22.0 * geom + 44.0
        else:
            cell = values
            geom = cell.pow(1.0 / IND_EXPONENT) * (1.0 / IND_COEFF_NH) ** (1.0 / IND_EXPONENT)
            cell_area = 4.0 * geom.pow(2.0) + 108.0 * geom + 440.0
        total = total + (cell_area * Tensor(ns)).sum()
    return total * (1.0 / AREA_NORM_UM2)


def layout_loss(bound: BoundGraph) -> float:
    """Normalized total passive area of a bound graph (no gradient path)."""
    return float(layout_loss_tensor(passive_plan(bound), None).data)


def _drc_status(dec: CellDecomposition) -> str:
    if dec.kind == "capacitor":
        w = _val(dec.geometry_um)
        if w < DRC_CONSTANTS["cap"]["W_MIN"] - 1e-9:
            return "fail(W_MIN)"
        if w > DRC_CONSTANTS["cap"]["W_MAX"] + 1e-9:
            return "fail(W_MAX)"
    elif dec.kind == "resistor":
        l = _val(dec.geometry_um)
        if l < DRC_CONSTANTS["res"]["L_MIN"] - 1e-9:
            return "fail(L_MIN)"
        if l > DRC_CONSTANTS["res"]["L_MAX"] + 1e-9:
            return "fail(L_MAX)"
    else:
        if _val(dec.cell_value) < IND_MIN_NH - 1e-12:
            return "fail(L_NH_MIN)"
    return "pass"


def drc_check_capacitor(w_um: float) -> list[str]:
    out = []
    if w_um < DRC_CONSTANTS["cap"]["W_MIN"]:
        out.append("W_MIN")
    if w_um > DRC_CONSTANTS["cap"]["W_MAX"]:
        out.append("W_MAX")
    return out


def drc_check_resistor(l_um: float, w_um: float = RES_WIDTH_UM) -> list[str]:
    out = []
    rules = DRC_CONSTANTS["res"]
    if l_um < rules["L_MIN"]:
        out.append("L_MIN")
    if l_um > rules["L_MAX"]:
        out.append("L_MAX")
    if w_um < rules["W_MIN"]:
        out.append("W_MIN")
    if w_um > rules["W_MAX"]:
        out.append("W_MAX")
    return out


def layout_report(bound: BoundGraph) -> dict:
    """Per-component geometry, decomposition, and DRC status for a bound graph."""
    components = []
    total = 0.0
    for i, edge in enumerate(bound.graph.edges):
        key = PASSIVE_ETYPES.get(edge.etype)
        if key is None:
            continue
        si_value = bound.edge_attrs[i][key]
        dec = decompose(si_value * _SI_TO_MODEL_UNITS[edge.etype], edge.etype)
        total += _val(dec.total_area_um2)
        components.append({
            "id": edge.label,
            "kind": edge.etype,
            "value": si_value,
            "n": dec.n,
            "arrangement": dec.arrangement,
            "geometry_um": _val(dec.geometry_um),
            "area_um2": _val(dec.total_area_um2),
            "drc": _drc_status(dec),
        })
    return {
        "components": components,
        "total_area_um2": total,
        "normalized_loss": total / AREA_NORM_UM2,
    }


def drc_report(bound: BoundGraph) -> dict:
    """Layout report plus the advisory circuit-level constants."""
    report = layout_report(bound)
    report["circuit_rules"] = dict(CIRCUIT_RULES)
    report["constants"] = {k: dict(v) for k, v in DRC_CONSTANTS.items()}
    return report
