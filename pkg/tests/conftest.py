import pytest

from distributed_opf.case_io import parse_matpower, parse_structured, read_case
from distributed_opf.case_io.records import CaseData
from distributed_opf.cases import bundled_case_path
from distributed_opf.network import build_layout, build_network

TWO_BUS_M = """\
function mpc = two_bus
mpc.baseMVA = 100;
%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	100	30	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0;
];
mpc.branch = [
	1	2	0.01	0.10	0.0	250	250	250	0	0	1	-30	30;
];
mpc.gencost = [
	2	0	0	3	0.01	10	0;
];
"""

# 辐射状三母线：1 - 2 - 3，发电机在 1
RADIAL_3BUS = """\
name radial3
baseMVA 100
bus 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9
bus 2 1 50 10 0 0 1 1 0 230 1 1.1 0.9
bus 3 1 40 15 0 0 1 1 0 230 1 1.1 0.9
gen 1 0 0 150 -150 1 100 1 300 0
branch 1 2 0.02 0.08 0.02 0 0 0 0 0 1 -360 360
branch 2 3 0.03 0.10 0.02 0 0 0 0 0 1 -360 360
gencost 2 0 0 3 0.01 10 0
"""


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="need --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def two_bus_case() -> CaseData:
    return parse_matpower(TWO_BUS_M)


@pytest.fixture(scope="session")
def two_bus(two_bus_case):
    net = build_network(two_bus_case)
    return net, build_layout(net)


@pytest.fixture(scope="session")
def case5_case() -> CaseData:
    return read_case(bundled_case_path("case5"))


@pytest.fixture(scope="session")
def case5(case5_case):
    net = build_network(case5_case)
    return net, build_layout(net)


@pytest.fixture(scope="session")
def radial3():
    net = build_network(parse_structured(RADIAL_3BUS))
    return net, build_layout(net)


@pytest.fixture()
def isolated_env(tmp_path, monkeypatch):
    "工作目录中没有配置文件，环境变量也不指向任何配置"
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("DISTRIBUTED_OPF_CONFIG", raising=False)
    return tmp_path
