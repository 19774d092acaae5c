import numpy as np
import pytest

from gridfase import DATA_DIR
from gridfase.errors import ParseError, ValidationError
from gridfase.feeder import (
    load_feeder,
    serialize_feeder,
    topology_order,
    bus_phase_nodes,
)

MINIMAL = """\
schema_version 1
[meta]
base_kva 1000.0
base_kv 4.16
slack_bus src
slack_voltage a 1.0 0.0
slack_voltage b 1.0 -2.0943951023931953
slack_voltage c 1.0 2.0943951023931953
[buses]
src abc
load abc
[branches]
src-load src load abc  0.2 0.4  0.05 0.1  0.05 0.1  0.2 0.4  0.05 0.1  0.2 0.4
[loads]
load a 50.0 20.0
[ders]
"""


def write(tmp_path, text, name="f.feeder"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_minimal_two_bus(tmp_path):
    model = load_feeder(write(tmp_path, MINIMAL))
    assert len(model.buses) == 2
    assert len(model.branches) == 1
    assert model.branches[0].phases == "abc"
    z = model.branches[0].z_sub()
    assert z.shape == (3, 3)
    assert np.allclose(z, z.T)


def test_ieee13_counts():
    model = load_feeder(f"{DATA_DIR}/ieee13.feeder")
    assert len(model.buses) == 13
    assert len(model.branches) == 12


def test_ieee34_counts():
    model = load_feeder(f"{DATA_DIR}/ieee34.feeder")
    assert len(model.buses) == 34
    assert len(model.branches) == 33


def test_cycle_detected(tmp_path):
    text = MINIMAL.replace(
        "[loads]",
        "loop load src ab  0.2 0.4  0.05 0.1  0.2 0.4\n[loads]",
    )
    with pytest.raises(ValidationError, match="not radial"):
        load_feeder(write(tmp_path, text))


def test_orphan_bus(tmp_path):
    # two islands with the right branch count: 4 buses, 3 branches, one unreachable pair
    text = """\
schema_version 1
[meta]
base_kva 1000.0
base_kv 4.16
slack_bus a1
slack_voltage a 1.0 0.0
[buses]
a1 a
a2 a
b1 a
b2 a
[branches]
a1-a2 a1 a2 a  0.1 0.2
b1-b2 b1 b2 a  0.1 0.2
b2-b1x b2 b1 a  0.1 0.2
[loads]
[ders]
"""
    with pytest.raises(ValidationError):
        load_feeder(write(tmp_path, text))


def test_phase_mismatch_load(tmp_path):
    text = MINIMAL.replace("load a 50.0 20.0", "load d 50.0 20.0")
    with pytest.raises(ParseError):
        load_feeder(write(tmp_path, text))
    # phase that exists but is absent at the bus
    text = MINIMAL.replace("load abc\n", "load ab\n").replace("load a 50.0 20.0", "load c 50.0 20.0")
    with pytest.raises(ValidationError, match="phase"):
        load_feeder(write(tmp_path, text))


def test_missing_slack(tmp_path):
    text = MINIMAL.replace("slack_bus src", "slack_bus nowhere")
    with pytest.raises(ValidationError, match="slack"):
        load_feeder(write(tmp_path, text))


def test_branch_phase_not_at_endpoint(tmp_path):
    text = MINIMAL.replace("load abc\n", "load ab\n")
    with pytest.raises(ValidationError):
        load_feeder(write(tmp_path, text))


def test_parse_error_has_line_context(tmp_path):
    text = MINIMAL.replace("base_kva 1000.0", "base_kva lots")
    with pytest.raises(ParseError, match=r":\d+:"):
        load_feeder(write(tmp_path, text))


def test_nonpositive_resistance_rejected(tmp_path):
    text = MINIMAL.replace("0.2 0.4  0.05 0.1  0.05 0.1  0.2 0.4  0.05 0.1  0.2 0.4",
                           "0.0 0.4  0.05 0.1  0.05 0.1  0.2 0.4  0.05 0.1  0.2 0.4")
    with pytest.raises(ValidationError, match="resistive"):
        load_feeder(write(tmp_path, text))


def test_roundtrip_identity(tmp_path, ieee13):
    out = tmp_path / "echo.feeder"
    out.write_text(serialize_feeder(ieee13))
    again = load_feeder(str(out))
    assert again.structurally_equal(ieee13)
    # and serialization is a fixed point
    assert serialize_feeder(again) == serialize_feeder(ieee13)


def test_topology_two_bus(tmp_path):
    model = load_feeder(write(tmp_path, MINIMAL))
    topo = topology_order(model)
    assert topo.order == ("src", "load")
    assert topo.parent["load"] == 0


def test_topology_chain(tmp_path):
    text = """\
schema_version 1
[meta]
base_kva 1000.0
base_kv 4.16
slack_bus n1
slack_voltage a 1.0 0.0
[buses]
n1 a
n2 a
n3 a
n4 a
[branches]
n1-n2 n1 n2 a  0.1 0.2
n2-n3 n2 n3 a  0.1 0.2
n3-n4 n3 n4 a  0.1 0.2
[loads]
[ders]
"""
    topo = topology_order(load_feeder(write(tmp_path, text)))
    assert topo.order == ("n1", "n2", "n3", "n4")
    assert [topo.depth[b] for b in topo.order] == [0, 1, 2, 3]


def test_ieee13_depth_and_reachability(ieee13):
    topo = topology_order(ieee13)
    # every bus reaches the slack by following parents
    for bus, _ in ieee13.buses:
        seen = set()
        while bus != ieee13.slack_bus:
            assert bus not in seen
            seen.add(bus)
            branch = ieee13.branches[topo.parent[bus]]
            bus = branch.from_bus if branch.to_bus == bus else branch.to_bus
    # hand-counted depth of the feeder diagram: 650-632-671-684-611/652
    assert max(topo.depth.values()) == 4
    depths = [topo.depth[b] for b in topo.order]
    assert depths == sorted(depths)


def test_topology_deterministic(ieee13):
    a = topology_order(ieee13)
    b = topology_order(ieee13)
    assert a.order == b.order
    assert a.parent == b.parent


def test_node_order_matches_topology(ieee13):
    topo = topology_order(ieee13)
    nodes = bus_phase_nodes(ieee13, topo)
    assert nodes[0][0] == "650"
    assert len(nodes) == 32
    # phases appear in a<b<c order within each bus
    by_bus = {}
    for bus, phase in nodes:
        by_bus.setdefault(bus, []).append(phase)
    phases = ieee13.bus_phases()
    for bus, plist in by_bus.items():
        assert "".join(plist) == phases[bus]
