"""Line-based netlist format: parsing, validation, and serialization.

Grammar (one statement per line, ``#`` starts a comment):

    .name IDENT                      optional circuit name
    .param NAME MIN MAX SCALE        sweepable parameter with bounds (SI) and unit scale
    .const NAME VALUE                fixed named value
    ID KIND NET... key=value...      component instance

Component terminals are positional: MOS devices take drain/gate/source,
baluns take primary/secondary/common, everything else takes two nets.
Attribute values are numeric literals (unit suffixes f p n u m k meg) or
references to declared ``.param``/``.const`` symbols. The ``src`` attribute
of sources takes the bare words ``dc`` or ``ac``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# terminals used per kind; MOS bulk is tied to a rail and not modeled
KIND_TERMINALS = {
    "nmos": 3,
    "pmos": 3,
    "resistor": 2,
    "capacitor": 2,
    "inductor": 2,
    "vsource": 2,
    "isource": 2,
    "balun": 3,
    "varactor": 2,
}

SOURCE_KINDS = ("dc", "ac", "none")

# attributes every component of a kind must declare (extras are allowed but
# must match across same-kind components so edge schemas stay uniform)
REQUIRED_ATTRS = {
    "nmos": {"W", "L"},
    "pmos": {"W", "L"},
    "resistor": {"R"},
    "capacitor": {"C"},
    "inductor": {"L"},
    "varactor": {"W"},
    "vsource": {"V"},
    "isource": {"I"},
    "balun": {"Lp", "Ls", "Lm"},
}

_UNIT_SUFFIXES = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6,
                  "m": 1e-3, "k": 1e3, "meg": 1e6}

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_NUMBER_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[fpnumk])?$")


class NetlistError(ValueError):
    """Parse or validation failure with source position."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


def parse_number(token: str) -> float | None:
    """Parse a numeric literal with an optional unit suffix; None if not numeric."""
    m = _NUMBER_RE.match(token)
    if m is None:
        return None
    value = float(m.group(1))
    if m.group(2):
        value *= _UNIT_SUFFIXES[m.group(2)]
    return value


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float
    upper: float
    scale: float


@dataclass(frozen=True)
class ComponentDecl:
    id: str
    kind: str
    terminals: tuple[str, ...]
    attrs: dict[str, float | str] = field(default_factory=dict)

    def symbol_refs(self) -> list[str]:
        return [v for k, v in self.attrs.items() if isinstance(v, str) and k != "src"]


@dataclass
class Netlist:
    name: str
    components: list[ComponentDecl]
    parameters: dict[str, ParamSpec]
    constants: dict[str, float]

    def nodes(self) -> list[str]:
        """All referenced nets in first-appearance order."""
        seen: dict[str, None] = {}
        for comp in self.components:
            for t in comp.terminals:
                seen.setdefault(t)
        return list(seen)

    def __eq__(self, other):
        if not isinstance(other, Netlist):
            return NotImplemented
        return (self.name == other.name
                and self.components == other.components
                and self.parameters == other.parameters
                and self.constants == other.constants)


def _require_ident(token: str, what: str, line: int) -> str:
    if not _IDENT_RE.match(token):
        raise NetlistError(f"invalid {what} {token!r}", line)
    return token


def parse_netlist(text: str) -> Netlist:
    name = "netlist"
    components: list[ComponentDecl] = []
    parameters: dict[str, ParamSpec] = {}
    constants: dict[str, float] = {}
    seen_ids: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()

        if tokens[0] == ".name":
            if len(tokens) != 2:
                raise NetlistError(".name takes exactly one identifier", lineno)
            name = _require_ident(tokens[1], "name", lineno)
            continue

        if tokens[0] == ".param":
            if len(tokens) != 5:
                raise NetlistError(".param takes NAME MIN MAX SCALE", lineno)
            pname = _require_ident(tokens[1], "parameter name", lineno)
            vals = [parse_number(t) for t in tokens[2:5]]
            if any(v is None for v in vals):
                raise NetlistError(f"malformed .param numbers in {line!r}", lineno)
            lower, upper, scale = vals
            if pname in parameters or pname in constants:
                raise NetlistError(f"duplicate symbol {pname!r}", lineno)
            if lower > upper:
                raise NetlistError(f"parameter {pname!r} has lower > upper", lineno)
            if scale <= 0:
                raise NetlistError(f"parameter {pname!r} has non-positive scale", lineno)
            parameters[pname] = ParamSpec(pname, lower, upper, scale)
            continue

        if tokens[0] == ".const":
            if len(tokens) != 3:
                raise NetlistError(".const takes NAME VALUE", lineno)
            cname = _require_ident(tokens[1], "constant name", lineno)
            value = parse_number(tokens[2])
            if value is None:
                raise NetlistError(f"malformed .const value {tokens[2]!r}", lineno)
            if cname in parameters or cname in constants:
                raise NetlistError(f"duplicate symbol {cname!r}", lineno)
            constants[cname] = value
            continue

        if tokens[0].startswith("."):
            raise NetlistError(f"unknown directive {tokens[0]!r}", lineno)

        # component line: ID KIND NET... key=value...
        if len(tokens) < 2:
            raise NetlistError(f"malformed component line {line!r}", lineno)
        comp_id = _require_ident(tokens[0], "component id", lineno)
        kind = tokens[1]
        if kind not in KIND_TERMINALS:
            raise NetlistError(f"unknown component kind {kind!r}", lineno)
        if comp_id in seen_ids:
            raise NetlistError(f"duplicate component id {comp_id!r}", lineno)
        seen_ids.add(comp_id)

        n_term = KIND_TERMINALS[kind]
        rest = tokens[2:]
        nets = [t for t in rest if "=" not in t]
        attr_tokens = [t for t in rest if "=" in t]
        if len(nets) != n_term:
            raise NetlistError(
                f"{kind} takes {n_term} terminals, got {len(nets)}", lineno)
        for net in nets:
            _require_ident(net, "net", lineno)

        attrs: dict[str, float | str] = {}
        for tok in attr_tokens:
            key, _, val = tok.partition("=")
            key = _require_ident(key, "attribute name", lineno)
            if key in attrs:
                raise NetlistError(f"duplicate attribute {key!r} on {comp_id}", lineno)
            if key == "src":
                if val not in ("dc", "ac"):
                    raise NetlistError(f"src must be dc or ac, got {val!r}", lineno)
                attrs[key] = val
                continue
            num = parse_number(val)
            if num is not None:
                attrs[key] = num
            else:
                attrs[key] = _require_ident(val, "symbol reference", lineno)

        if kind in ("vsource", "isource"):
            attrs.setdefault("src", "dc")
        missing = REQUIRED_ATTRS[kind] - set(attrs)
        if missing:
            raise NetlistError(
                f"{kind} {comp_id!r} missing attribute(s): {', '.join(sorted(missing))}",
                lineno)
        components.append(ComponentDecl(comp_id, kind, tuple(nets), attrs))

    netlist = Netlist(name, components, parameters, constants)
    _validate_symbols(netlist)
    return netlist


def _validate_symbols(netlist: Netlist) -> None:
    declared = set(netlist.parameters) | set(netlist.constants)
    kind_keys: dict[str, frozenset[str]] = {}
    for comp in netlist.components:
        for sym in comp.symbol_refs():
            if sym not in declared:
                raise NetlistError(f"undeclared symbol {sym!r} on component {comp.id!r}")
        keys = frozenset(comp.attrs)
        if comp.kind in kind_keys and kind_keys[comp.kind] != keys:
            raise NetlistError(
                f"components of kind {comp.kind!r} declare differing attribute sets")
        kind_keys.setdefault(comp.kind, keys)


def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_netlist(netlist: Netlist) -> str:
    """Emit text that parses back to a structurally equal netlist."""
    lines = [f".name {netlist.name}"]
    for p in netlist.parameters.values():
        lines.append(f".param {p.name} {_fmt(p.lower)} {_fmt(p.upper)} {_fmt(p.scale)}")
    for cname, value in netlist.constants.items():
        lines.append(f".const {cname} {_fmt(value)}")
    for comp in netlist.components:
        parts = [comp.id, comp.kind, *comp.terminals]
        for key, val in comp.attrs.items():
            parts.append(f"{key}={val if isinstance(val, str) else _fmt(val)}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
