"""Three-phase radial feeder model: schema parsing, validation, topology.

The feeder file is a line-oriented text format with ``[meta]``, ``[buses]``,
``[branches]``, ``[loads]`` and ``[ders]`` sections. Impedances are given in
ohms, already scaled by conductor length, one (R, X) pair per unordered
phase pair of the branch. See README for the full field reference.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

PHASES = "abc"
PHASE_INDEX = {"a": 0, "b": 1, "c": 2}


def _phase_pairs(phases: str):
    """Unordered phase pairs (incl. self-pairs) in canonical order."""
    return [(p, q) for i, p in enumerate(phases) for q in phases[i:]]


def _bus_sort_key(bus_id: str):
    return (0, int(bus_id), "") if bus_id.isdigit() else (1, 0, bus_id)


@dataclass(frozen=True)
class Branch:
    branch_id: str
    from_bus: str
    to_bus: str
    phases: str
    z_ohm: np.ndarray  # full 3x3 complex, zero rows/cols for absent phases

    def z_sub(self) -> np.ndarray:
        """Impedance restricted to the present phases (len(phases) square)."""
        idx = [PHASE_INDEX[p] for p in self.phases]
        return self.z_ohm[np.ix_(idx, idx)]


@dataclass(frozen=True)
class LoadSpec:
    bus: str
    phase: str
    p_kw: float
    q_kvar: float


@dataclass(frozen=True)
class DerSpec:
    bus: str
    phase: str
    p_kw: float
    power_factor: float

    def q_kvar(self) -> float:
        pf = self.power_factor
        return self.p_kw * np.sqrt(max(1.0 - pf * pf, 0.0)) / pf


@dataclass(frozen=True)
class FeederModel:
    base_kva: float
    base_kv: float
    slack_bus: str
    slack_voltage: dict  # phase -> (magnitude pu, angle rad)
    buses: tuple  # of (bus_id, phases)
    branches: tuple  # of Branch
    loads: tuple  # of LoadSpec
    ders: tuple  # of DerSpec

    @property
    def z_base_ohm(self) -> float:
        return 1000.0 * self.base_kv**2 / self.base_kva

    @property
    def s_base_phase_kva(self) -> float:
        """Per-phase power base; per-phase p.u. powers are kW over this."""
        return self.base_kva / 3.0

    def bus_phases(self) -> dict:
        return {bus: ph for bus, ph in self.buses}

    def structurally_equal(self, other: "FeederModel") -> bool:
        if (
            self.base_kva != other.base_kva
            or self.base_kv != other.base_kv
            or self.slack_bus != other.slack_bus
            or self.slack_voltage != other.slack_voltage
            or self.buses != other.buses
            or self.loads != other.loads
            or self.ders != other.ders
            or len(self.branches) != len(other.branches)
        ):
            return False
        for a, b in zip(self.branches, other.branches):
            if (a.branch_id, a.from_bus, a.to_bus, a.phases) != (
                b.branch_id,
                b.from_bus,
                b.to_bus,
                b.phases,
            ):
                return False
            if not np.array_equal(a.z_ohm, b.z_ohm):
                return False
        return True


@dataclass(frozen=True)
class TopologyOrder:
    """Radial ordering rooted at the slack bus.

    parent maps every non-slack bus to the index (into model.branches) of
    its upstream branch; order lists buses by non-decreasing depth, ties
    broken by bus id.
    """

    parent: dict  # bus -> branch index
    order: tuple  # bus ids, slack first
    depth: dict = field(default_factory=dict)


class _Reader:
    def __init__(self, path: str):
        self.path = path
        with open(path, "r", encoding="utf-8") as fh:
            self.raw = fh.readlines()

    def lines(self):
        for lineno, line in enumerate(self.raw, start=1):
            stripped = line.split("#", 1)[0].strip()
            if stripped:
                yield lineno, stripped

    def fail(self, lineno: int, message: str):
        raise ParseError(f"{self.path}:{lineno}: {message}")


def _parse_float(reader, lineno, token, what):
    try:
        return float(token)
    except ValueError:
        reader.fail(lineno, f"expected a number for {what}, got {token!r}")


def load_feeder(path: str) -> FeederModel:
    """Parse and validate a feeder file.

    Raises ParseError on malformed syntax (with file/line context) and
    ValidationError when the parsed model breaks a structural invariant
    (cycle, orphan bus, phase mismatch, missing slack).
    """
    reader = _Reader(path)
    section = None
    meta = {}
    slack_voltage = {}
    buses = []
    branches = []
    loads = []
    ders = []
    schema_version = None

    for lineno, line in reader.lines():
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section not in ("meta", "buses", "branches", "loads", "ders"):
                reader.fail(lineno, f"unknown section [{section}]")
            continue
        tokens = line.split()
        if section is None:
            if tokens[0] == "schema_version":
                if len(tokens) != 2:
                    reader.fail(lineno, "schema_version takes one value")
                schema_version = tokens[1]
                continue
            reader.fail(lineno, f"unexpected line before first section: {line!r}")
        elif section == "meta":
            key = tokens[0]
            if key == "slack_voltage":
                if len(tokens) != 4 or tokens[1] not in PHASE_INDEX:
                    reader.fail(lineno, "slack_voltage needs: phase, magnitude, angle_rad")
                mag = _parse_float(reader, lineno, tokens[2], "slack magnitude")
                ang = _parse_float(reader, lineno, tokens[3], "slack angle")
                slack_voltage[tokens[1]] = (mag, ang)
            elif key in ("base_kva", "base_kv"):
                if len(tokens) != 2:
                    reader.fail(lineno, f"{key} takes one value")
                meta[key] = _parse_float(reader, lineno, tokens[1], key)
            elif key == "slack_bus":
                if len(tokens) != 2:
                    reader.fail(lineno, "slack_bus takes one value")
                meta["slack_bus"] = tokens[1]
            else:
                reader.fail(lineno, f"unknown meta field {key!r}")
        elif section == "buses":
            if len(tokens) != 2:
                reader.fail(lineno, "bus line needs: id, phases")
            phases = tokens[1]
            if not phases or any(p not in PHASE_INDEX for p in phases):
                reader.fail(lineno, f"bad phase set {phases!r}")
            phases = "".join(sorted(set(phases), key=PHASE_INDEX.get))
            buses.append((tokens[0], phases))
        elif section == "branches":
            if len(tokens) < 4:
                reader.fail(lineno, "branch line needs: id, from, to, phases, impedances")
            branch_id, from_bus, to_bus, phases = tokens[:4]
            if not phases or any(p not in PHASE_INDEX for p in phases):
                reader.fail(lineno, f"bad phase set {phases!r}")
            phases = "".join(sorted(set(phases), key=PHASE_INDEX.get))
            pairs = _phase_pairs(phases)
            values = tokens[4:]
            if len(values) != 2 * len(pairs):
                reader.fail(
                    lineno,
                    f"branch {branch_id}: expected {2 * len(pairs)} impedance "
                    f"values ({len(pairs)} R,X pairs), got {len(values)}",
                )
            z = np.zeros((3, 3), dtype=complex)
            for (p, q), k in zip(pairs, range(0, len(values), 2)):
                r = _parse_float(reader, lineno, values[k], f"R[{p}{q}]")
                x = _parse_float(reader, lineno, values[k + 1], f"X[{p}{q}]")
                i, j = PHASE_INDEX[p], PHASE_INDEX[q]
                z[i, j] = complex(r, x)
                z[j, i] = complex(r, x)
            z.flags.writeable = False
            branches.append(Branch(branch_id, from_bus, to_bus, phases, z))
        elif section == "loads":
            if len(tokens) != 4:
                reader.fail(lineno, "load line needs: bus, phase, p_kw, q_kvar")
            if tokens[1] not in PHASE_INDEX:
                reader.fail(lineno, f"bad phase {tokens[1]!r}")
            loads.append(
                LoadSpec(
                    tokens[0],
                    tokens[1],
                    _parse_float(reader, lineno, tokens[2], "p_kw"),
                    _parse_float(reader, lineno, tokens[3], "q_kvar"),
                )
            )
        elif section == "ders":
            if len(tokens) != 4:
                reader.fail(lineno, "der line needs: bus, phase, p_kw, power_factor")
            if tokens[1] not in PHASE_INDEX:
                reader.fail(lineno, f"bad phase {tokens[1]!r}")
            pf = _parse_float(reader, lineno, tokens[3], "power_factor")
            if not 0.0 < pf <= 1.0:
                reader.fail(lineno, f"power factor must be in (0, 1], got {pf}")
            ders.append(
                DerSpec(
                    tokens[0],
                    tokens[1],
                    _parse_float(reader, lineno, tokens[2], "p_kw"),
                    pf,
                )
            )

    if schema_version is None:
        raise ParseError(f"{path}: missing schema_version")
    if schema_version != "1":
        raise ParseError(f"{path}: unsupported schema_version {schema_version!r}")
    for key in ("base_kva", "base_kv", "slack_bus"):
        if key not in meta:
            raise ParseError(f"{path}: missing meta field {key!r}")

    model = FeederModel(
        base_kva=meta["base_kva"],
        base_kv=meta["base_kv"],
        slack_bus=meta["slack_bus"],
        slack_voltage=slack_voltage,
        buses=tuple(buses),
        branches=tuple(branches),
        loads=tuple(loads),
        ders=tuple(ders),
    )
    _validate(model)
    return model


def _validate(model: FeederModel):
    bus_phases = {}
    for bus, phases in model.buses:
        if bus in bus_phases:
            raise ValidationError(f"duplicate bus {bus}")
        bus_phases[bus] = phases

    if model.slack_bus not in bus_phases:
        raise ValidationError(f"missing slack: bus {model.slack_bus!r} not defined")
    slack_phases = bus_phases[model.slack_bus]
    for p in slack_phases:
        if p not in model.slack_voltage:
            raise ValidationError(f"slack_voltage missing phase {p}")

    if model.base_kva <= 0 or model.base_kv <= 0:
        raise ValidationError("base_kva and base_kv must be positive")

    seen_ids = set()
    for br in model.branches:
        if br.branch_id in seen_ids:
            raise ValidationError(f"duplicate branch id {br.branch_id}")
        seen_ids.add(br.branch_id)
        for end in (br.from_bus, br.to_bus):
            if end not in bus_phases:
                raise ValidationError(f"branch {br.branch_id}: unknown bus {end}")
        for p in br.phases:
            if p not in bus_phases[br.from_bus] or p not in bus_phases[br.to_bus]:
                raise ValidationError(
                    f"branch {br.branch_id}: phase {p} absent at an endpoint"
                )
        zs = br.z_sub()
        if not np.array_equal(zs, zs.T):
            raise ValidationError(f"branch {br.branch_id}: impedance not symmetric")
        if np.any(zs.diagonal().real <= 0.0):
            raise ValidationError(
                f"branch {br.branch_id}: resistive diagonal must be positive"
            )

    for load in model.loads:
        if load.bus not in bus_phases:
            raise ValidationError(f"load references unknown bus {load.bus}")
        if load.phase not in bus_phases[load.bus]:
            raise ValidationError(
                f"load at bus {load.bus}: phase {load.phase} not present"
            )
        if load.p_kw < 0:
            raise ValidationError(f"load at bus {load.bus}: negative P")
    for der in model.ders:
        if der.bus not in bus_phases:
            raise ValidationError(f"der references unknown bus {der.bus}")
        if der.phase not in bus_phases[der.bus]:
            raise ValidationError(f"der at bus {der.bus}: phase {der.phase} not present")

    if len(model.branches) != len(model.buses) - 1:
        raise ValidationError(
            f"not radial: {len(model.branches)} branches for {len(model.buses)} buses"
        )

    # Connectivity via BFS from slack; radial count + full reach rules out cycles.
    adjacency = {bus: [] for bus in bus_phases}
    for k, br in enumerate(model.branches):
        adjacency[br.from_bus].append((br.to_bus, k))
        adjacency[br.to_bus].append((br.from_bus, k))
    visited = {model.slack_bus}
    frontier = [model.slack_bus]
    while frontier:
        nxt = []
        for bus in frontier:
            for other, k in adjacency[bus]:
                if other in visited:
                    continue
                visited.add(other)
                nxt.append(other)
        frontier = nxt
    unreached = set(bus_phases) - visited
    if unreached:
        raise ValidationError(
            "cycle detected or orphan bus: unreachable from slack: "
            + ", ".join(sorted(unreached, key=_bus_sort_key))
        )

    # Every phase served at a bus must arrive over its upstream branch.
    topo = topology_order(model)
    for bus, phases in model.buses:
        if bus == model.slack_bus:
            continue
        upstream = model.branches[topo.parent[bus]]
        missing = [p for p in phases if p not in upstream.phases]
        if missing:
            raise ValidationError(
                f"bus {bus}: phase(s) {''.join(missing)} not supplied by "
                f"upstream branch {upstream.branch_id}"
            )


def topology_order(model: FeederModel) -> TopologyOrder:
    """BFS ordering from the slack bus; deterministic for a given model."""
    adjacency = {bus: [] for bus, _ in model.buses}
    for k, br in enumerate(model.branches):
        adjacency[br.from_bus].append((br.to_bus, k))
        adjacency[br.to_bus].append((br.from_bus, k))

    parent = {}
    depth = {model.slack_bus: 0}
    order = [model.slack_bus]
    frontier = [model.slack_bus]
    while frontier:
        nxt = []
        for bus in frontier:
            for other, k in sorted(adjacency[bus], key=lambda e: _bus_sort_key(e[0])):
                if other in depth:
                    continue
                depth[other] = depth[bus] + 1
                parent[other] = k
                nxt.append(other)
        nxt.sort(key=_bus_sort_key)
        order.extend(nxt)
        frontier = nxt
    return TopologyOrder(parent=parent, order=tuple(order), depth=depth)


def bus_phase_nodes(model: FeederModel, topo: TopologyOrder = None) -> tuple:
    """Canonical (bus, phase) node order: topology order, phases a<b<c."""
    if topo is None:
        topo = topology_order(model)
    phases = model.bus_phases()
    return tuple((bus, p) for bus in topo.order for p in phases[bus])


def serialize_feeder(model: FeederModel) -> str:
    """Render a model back into the feeder file format (round-trip exact)."""
    num = lambda v: repr(float(v))
    out = ["schema_version 1", "", "[meta]"]
    out.append(f"base_kva {num(model.base_kva)}")
    out.append(f"base_kv {num(model.base_kv)}")
    out.append(f"slack_bus {model.slack_bus}")
    for p in sorted(model.slack_voltage, key=PHASE_INDEX.get):
        mag, ang = model.slack_voltage[p]
        out.append(f"slack_voltage {p} {num(mag)} {num(ang)}")
    out.append("")
    out.append("[buses]")
    for bus, phases in model.buses:
        out.append(f"{bus} {phases}")
    out.append("")
    out.append("[branches]")
    for br in model.branches:
        entries = []
        for p, q in _phase_pairs(br.phases):
            z = br.z_ohm[PHASE_INDEX[p], PHASE_INDEX[q]]
            entries.append(f"{num(z.real)} {num(z.imag)}")
        out.append(f"{br.branch_id} {br.from_bus} {br.to_bus} {br.phases} " + " ".join(entries))
    out.append("")
    out.append("[loads]")
    for load in model.loads:
        out.append(f"{load.bus} {load.phase} {num(load.p_kw)} {num(load.q_kvar)}")
    out.append("")
    out.append("[ders]")
    for der in model.ders:
        out.append(f"{der.bus} {der.phase} {num(der.p_kw)} {num(der.power_factor)}")
    out.append("")
    return "\n".join(out)


def write_feeder(model: FeederModel, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_feeder(model))
