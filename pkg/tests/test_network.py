import cmath
import logging

import numpy as np
import pytest

from distributed_opf.case_io import parse_structured
from distributed_opf.exceptions import ZeroImpedanceBranch
from distributed_opf.network import (
    GEN_P,
    VOLTAGE,
    branch_coefficients,
    branch_flows_from_voltages,
    branch_flows_from_w,
    build_layout,
    build_network,
    evaluate_objective,
)


def test_lossless_unit_reactance():
    gc, bc, g, b, gc_ji, bc_ji, g_ji, b_ji = branch_coefficients(0, 1, 0, 1, 0)
    assert (gc, bc, g, b) == pytest.approx((0, 1, 0, 1))
    assert (gc_ji, bc_ji, g_ji, b_ji) == pytest.approx((0, 1, 0, 1))


def test_tap_scaling():
    gc, bc, g, b, *_ = branch_coefficients(0, 1, 0, 2, 0)
    assert (gc, bc) == pytest.approx((0, 0.25))
    assert (g, b) == pytest.approx((0, 0.5))


def test_series_admittance_values():
    _, _, g, b, *_ = branch_coefficients(0.01, 0.10, 0, 1, 0)
    assert g == pytest.approx(0.990099, abs=1e-6)
    assert b == pytest.approx(9.900990, abs=1e-6)


def test_symmetric_without_tap():
    coeffs = branch_coefficients(0.02, 0.3, 0.05, 1, 0)
    assert coeffs[:4] == pytest.approx(coeffs[4:], abs=0)


@pytest.mark.parametrize("tap,shift", [(1.0, 0.0), (0.97, 0.0), (1.05, 0.1)])
def test_flows_match_first_principles(tap, shift):
    text = f"""
    baseMVA 100
    bus 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9
    bus 2 1 0 0 0 0 1 1 0 230 1 1.1 0.9
    gen 1 0 0 1 -1 1 100 1 1 0
    branch 1 2 0.02 0.2 0.04 0 0 0 {tap} {np.degrees(shift)} 1 -360 360
    gencost 2 0 0 3 0 1 0
    """
    br = build_network(parse_structured(text)).branches[0]
    v_i = cmath.rect(1.03, 0.12)
    v_j = cmath.rect(0.97, -0.04)
    prod = v_i * v_j.conjugate()
    p_ij, q_ij, p_ji, q_ji = branch_flows_from_w(
        br, abs(v_i) ** 2, abs(v_j) ** 2, prod.real, prod.imag
    )
    s_ij, s_ji = branch_flows_from_voltages(br, v_i, v_j)
    assert (p_ij, q_ij) == pytest.approx((s_ij.real, s_ij.imag), abs=1e-12)
    assert (p_ji, q_ji) == pytest.approx((s_ji.real, s_ji.imag), abs=1e-12)


def test_per_unit_conversion(case5_case, case5):
    net, _ = case5
    for record, bus in zip(case5_case.buses, net.buses):
        assert bus.p_d * net.base_mva == pytest.approx(record.p_demand, rel=1e-15)
        assert bus.q_d * net.base_mva == pytest.approx(record.q_demand, rel=1e-15)
        assert bus.w_min == pytest.approx(0.81)
        assert bus.w_max == pytest.approx(1.21)
    assert net.gens[2].p_max == pytest.approx(5.2)
    assert net.branches[0].s_max == pytest.approx(4.0)
    assert net.branches[1].s_max is None


def test_angle_band(two_bus, case5):
    br = two_bus[0].branches[0]
    assert br.tan_min == pytest.approx(-np.tan(np.radians(30)))
    assert br.tan_max == pytest.approx(np.tan(np.radians(30)))
    assert all(b.tan_min is None and b.tan_max is None for b in case5[0].branches)


def test_adjacency(case5):
    net, _ = case5
    assert net.bus_gens == [[0, 1], [], [2], [3], [4]]
    assert net.n_ends == 12
    # 首端在前，末端在后
    assert net.bus_ends[0] == [0, 1, 2]
    assert net.bus_ends[1] == [3, 6]
    assert net.end_branch(6) == (0, False)
    assert net.end_bus(6) == 1


def test_layout_counts(two_bus, case5):
    assert (two_bus[1].n_lambda, two_bus[1].n_z) == (8, 8)
    assert (case5[1].n_lambda, case5[1].n_z) == (46, 39)


def test_layout_maps(case5):
    net, layout = case5
    rev = layout.reverse_map()
    for q, slots in enumerate(rev):
        assert all(layout.zmap[p] == q for p in slots)
    assert sorted(p for slots in rev for p in slots) == list(range(layout.n_x))
    for q in range(layout.z_w(0)):
        assert len(rev[q]) == 1
    for b in range(len(net.buses)):
        assert len(rev[layout.z_w(b)]) == len(net.bus_ends[b])
    assert (layout.kind[: 2 * len(net.gens)] < VOLTAGE).all()
    assert layout.kind[0] == GEN_P
    e = 7
    base = layout.x_end(e)
    assert list(layout.kind[base : base + 3]) == [2, 3, VOLTAGE]
    assert layout.owner_bus[base + 2] == net.end_bus(e)


def test_rho_and_z_init(case5):
    net, layout = case5
    rho = layout.rho_init(10, 100)
    assert (rho[layout.kind == VOLTAGE] == 100).all()
    assert (rho[layout.kind != VOLTAGE] == 10).all()
    z = layout.z_init(net)
    assert z[0] == pytest.approx(0.2)
    assert z[len(net.gens)] == 0
    assert (z[layout.z_w(0) :] == 1).all()
    assert (z[2 * len(net.gens) : layout.z_w(0)] == 0).all()


def test_objective(two_bus):
    net, layout = two_bus
    x = np.zeros(layout.n_x)
    assert evaluate_objective(net, x) == 0
    x[0] = 1.0
    assert evaluate_objective(net, x) == pytest.approx(1100)


def test_zero_impedance(two_bus_case):
    case = two_bus_case.copy(deep=True)
    case.branches[0].r = 0
    case.branches[0].x = 0
    with pytest.raises(ZeroImpedanceBranch):
        build_network(case)


def test_out_of_service_filtered(case5_case):
    case = case5_case.copy(deep=True)
    case.branches[3].status = False
    case.generators[0].status = False
    net = build_network(case)
    assert len(net.branches) == 5
    assert len(net.gens) == 4
    assert net.gens[0].index == 1
    assert build_layout(net).n_lambda == 8 + 30


def test_isolated_bus_warning(two_bus_case, caplog):
    case = two_bus_case.copy(deep=True)
    extra = case.buses[1].copy()
    extra.id = 3
    extra.p_demand = extra.q_demand = 0
    case.buses.append(extra)
    with caplog.at_level(logging.WARNING):
        net = build_network(case)
    assert net.isolated_buses == [2]
    assert "isolated bus 3" in caplog.text
