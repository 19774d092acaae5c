import numpy as np
import pytest

from gridfase import DATA_DIR
from gridfase.feeder import load_feeder
from gridfase.powerflow import NetworkIndex, solve_powerflow
from gridfase.telemetry import NoiseSpec, SensorConfig, build_channels

TWO_BUS = """\
schema_version 1

[meta]
base_kva 1000.0
base_kv 4.16
slack_bus 1
slack_voltage a 1.0 0.0
slack_voltage b 1.0 -2.0943951023931953
slack_voltage c 1.0 2.0943951023931953

[buses]
1 abc
2 abc

[branches]
1-2 1 2 abc  0.3 0.6  0.05 0.2  0.05 0.2  0.3 0.6  0.05 0.2  0.3 0.6

[loads]
2 a 100.0 50.0
2 b 80.0 40.0
2 c 90.0 45.0

[ders]
"""


@pytest.fixture(scope="session")
def ieee13():
    return load_feeder(f"{DATA_DIR}/ieee13.feeder")


@pytest.fixture(scope="session")
def ieee13_index(ieee13):
    return NetworkIndex(ieee13)


@pytest.fixture()
def two_bus(tmp_path):
    path = tmp_path / "two_bus.feeder"
    path.write_text(TWO_BUS)
    return load_feeder(str(path))


def nominal_injections(model, index):
    """Net injection vector (kW + j kvar) from the model's own loads/DERs."""
    s = np.zeros(index.n_nodes, dtype=complex)
    for load in model.loads:
        s[index.pos[(load.bus, load.phase)]] -= complex(load.p_kw, load.q_kvar)
    for der in model.ders:
        s[index.pos[(der.bus, der.phase)]] += complex(der.p_kw, der.q_kvar())
    return s


@pytest.fixture(scope="session")
def ieee13_truth(ieee13, ieee13_index):
    return solve_powerflow(ieee13, nominal_injections(ieee13, ieee13_index), index=ieee13_index)


def sensors_13(noise=None):
    nonslack = (
        "632", "633", "634", "645", "646", "671", "680", "684", "611", "652", "692", "675",
    )
    return SensorConfig(
        pmu_buses=("650", "671", "675"),
        scada_branches=("650-632", "632-671", "632-633", "692-675"),
        pseudo_buses=nonslack,
        noise=noise if noise is not None else NoiseSpec(),
    )


@pytest.fixture(scope="session")
def ieee13_table(ieee13, ieee13_index):
    return build_channels(ieee13, sensors_13(), ieee13_index)


@pytest.fixture(scope="session")
def ieee13_table_noisefree(ieee13, ieee13_index):
    return build_channels(ieee13, sensors_13(NoiseSpec(0.0, 0.0, 0.0, 0.0)), ieee13_index)
