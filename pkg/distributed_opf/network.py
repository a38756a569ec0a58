"""标幺化的网络模型与一致性约束的索引布局

x 向量：[全部发电机 p, 全部发电机 q, 每个有向支路端 (p, q, w)]，
支路端先按 L 顺序（首端），再按 L_t 顺序（末端）排列。
z 向量：[发电机 p 副本, 发电机 q 副本, 每个支路端 (p, q) 副本, 每条母线 w]。
"""
import logging
import math
from typing import NamedTuple

import numpy as np

from .case_io.records import CaseData
from .exceptions import ZeroImpedanceBranch

# 一致性约束的种类
GEN_P, GEN_Q, FLOW_P, FLOW_Q, VOLTAGE = range(5)
KIND_NAMES = ("gen-p", "gen-q", "flow-p", "flow-q", "voltage")
# 相角差限制超出此范围时不再建模（MATPOWER 用 ±360 表示不限制）
ANGLE_LIMIT_DEG = 89.9


class BusModel(NamedTuple):
    id: int
    p_d: float
    q_d: float
    g_sh: float
    b_sh: float
    w_min: float
    w_max: float


class GenModel(NamedTuple):
    "界限为标幺值，成本系数保留 $/MW 单位，base 为 MW/p.u. 换算系数"
    index: int
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c2: float
    c1: float
    c0: float
    base: float


class BranchModel(NamedTuple):
    """支路的八个系数及约束数据

    flow_matrix 把 v = (w_i, w_j, wr, wi) 映射到
    x^l = (p_ij, q_ij, w_i, p_ji, q_ji, w_j)
    """

    index: int
    from_bus: int
    to_bus: int
    gc_ij: float
    bc_ij: float
    g_ij: float
    b_ij: float
    gc_ji: float
    bc_ji: float
    g_ji: float
    b_ji: float
    s_max: float | None
    tan_min: float | None
    tan_max: float | None
    w_min_i: float
    w_max_i: float
    w_min_j: float
    w_max_j: float
    y: complex
    tap: complex
    b_charge: float
    flow_matrix: np.ndarray


def branch_coefficients(r: float, x: float, b_charge: float, tau: float, shift: float):
    """按定义计算 (gc_ij, bc_ij, g_ij, b_ij, gc_ji, bc_ji, g_ji, b_ji)，
    使用共轭的串联导纳 Y*"""
    y = 1 / complex(r, x)
    t = tau * complex(math.cos(shift), math.sin(shift))
    yc = y.conjugate()
    c_ij = (yc - 1j * b_charge / 2) / abs(t) ** 2
    s_ij = yc / t
    c_ji = yc - 1j * b_charge / 2
    s_ji = yc / t.conjugate()
    return (
        c_ij.real, c_ij.imag, s_ij.real, s_ij.imag,
        c_ji.real, c_ji.imag, s_ji.real, s_ji.imag,
    )


def _flow_matrix(gc_ij, bc_ij, g_ij, b_ij, gc_ji, bc_ji, g_ji, b_ji) -> np.ndarray:
    m = np.array(
        [
            [gc_ij, 0.0, -g_ij, b_ij],
            [bc_ij, 0.0, -b_ij, -g_ij],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, gc_ji, -g_ji, -b_ji],
            [0.0, bc_ji, -b_ji, g_ji],
            [0.0, 1.0, 0.0, 0.0],
        ]
    )
    m.setflags(write=False)
    return m


class Network:
    """标幺化后的网络，构建后只读，可在线程间共享

    + buses: 全部母线（文件顺序）
    + gens: 投运发电机
    + branches: 投运支路，即集合 L；其反向即 L_t
    + bus_gens: 每条母线所连发电机在 gens 中的下标
    + bus_ends: 每条母线所连有向支路端的下标（e < |L| 为首端，否则为末端）
    """

    name: str
    base_mva: float
    buses: list[BusModel]
    gens: list[GenModel]
    branches: list[BranchModel]
    bus_gens: list[list[int]]
    bus_ends: list[list[int]]
    isolated_buses: list[int]

    def __init__(self, name, base_mva, buses, gens, branches) -> None:
        self.name = name
        self.base_mva = base_mva
        self.buses = buses
        self.gens = gens
        self.branches = branches
        self.bus_gens = [[] for _ in buses]
        self.bus_ends = [[] for _ in buses]
        for g, gen in enumerate(gens):
            self.bus_gens[gen.bus].append(g)
        for e in range(self.n_ends):
            self.bus_ends[self.end_bus(e)].append(e)
        self.isolated_buses = [
            i
            for i, b in enumerate(buses)
            if not self.bus_gens[i]
            and not self.bus_ends[i]
            and b.p_d == 0
            and b.q_d == 0
        ]

    @property
    def n_ends(self) -> int:
        "|L ∪ L_t|"
        return 2 * len(self.branches)

    def end_branch(self, e: int) -> tuple[int, bool]:
        "返回 (支路下标, 是否为首端)"
        n = len(self.branches)
        return (e, True) if e < n else (e - n, False)

    def end_bus(self, e: int) -> int:
        l, forward = self.end_branch(e)
        br = self.branches[l]
        return br.from_bus if forward else br.to_bus

    def __str__(self) -> str:
        return (
            f"Network({self.name}, buses={len(self.buses)}, "
            f"gens={len(self.gens)}, branches={len(self.branches)})"
        )


def build_network(case: CaseData) -> Network:
    """把 CaseData 转为标幺网络，停运的发电机和支路在此处过滤"""
    base = case.base_mva
    position = {b.id: i for i, b in enumerate(case.buses)}
    buses = [
        BusModel(
            id=b.id,
            p_d=b.p_demand / base,
            q_d=b.q_demand / base,
            g_sh=b.g_shunt / base,
            b_sh=b.b_shunt / base,
            w_min=b.v_min**2,
            w_max=b.v_max**2,
        )
        for b in case.buses
    ]

    gens = []
    for i, (g, c) in enumerate(zip(case.generators, case.gencosts)):
        if not g.status:
            logging.warning(f"generator {i} at bus {g.bus} out of service, skipped")
            continue
        gens.append(
            GenModel(
                index=i,
                bus=position[g.bus],
                p_min=g.p_min / base,
                p_max=g.p_max / base,
                q_min=g.q_min / base,
                q_max=g.q_max / base,
                c2=c.c2,
                c1=c.c1,
                c0=c.c0,
                base=base,
            )
        )

    branches = []
    for i, br in enumerate(case.branches):
        if not br.status:
            logging.warning(f"branch {i} ({br.from_bus}-{br.to_bus}) out of service, skipped")
            continue
        if br.r == 0 and br.x == 0:
            raise ZeroImpedanceBranch("zero impedance branch in service", i)
        coeffs = branch_coefficients(br.r, br.x, br.b_charge, br.tap, br.shift)
        if -ANGLE_LIMIT_DEG < br.ang_min and br.ang_max < ANGLE_LIMIT_DEG:
            tan_min = math.tan(math.radians(br.ang_min))
            tan_max = math.tan(math.radians(br.ang_max))
        else:
            tan_min = tan_max = None
        fi, ti = position[br.from_bus], position[br.to_bus]
        branches.append(
            BranchModel(
                i, fi, ti, *coeffs,
                s_max=br.rate_a / base if br.rate_a > 0 else None,
                tan_min=tan_min,
                tan_max=tan_max,
                w_min_i=buses[fi].w_min,
                w_max_i=buses[fi].w_max,
                w_min_j=buses[ti].w_min,
                w_max_j=buses[ti].w_max,
                y=1 / complex(br.r, br.x),
                tap=br.tap * complex(math.cos(br.shift), math.sin(br.shift)),
                b_charge=br.b_charge,
                flow_matrix=_flow_matrix(*coeffs),
            )
        )

    net = Network(case.name, base, buses, gens, branches)
    for i in net.isolated_buses:
        logging.warning(f"isolated bus {buses[i].id}: no generator, branch or demand")
    logging.info(f"built {net}")
    return net


def branch_flows_from_w(branch: BranchModel, w_i, w_j, wr, wi):
    "(p_ij, q_ij, p_ji, q_ji)"
    p_ij, q_ij, _, p_ji, q_ji, _ = branch.flow_matrix @ np.array([w_i, w_j, wr, wi])
    return p_ij, q_ij, p_ji, q_ji


def branch_flows_from_voltages(branch: BranchModel, v_i: complex, v_j: complex):
    """由 π 型等值电路直接计算 S = V·I*，用于核对系数的共轭约定"""
    y, t, half_b = branch.y, branch.tap, 0.5j * branch.b_charge
    i_ij = (y + half_b) / abs(t) ** 2 * v_i - y / t.conjugate() * v_j
    i_ji = (y + half_b) * v_j - y / t * v_i
    return v_i * i_ij.conjugate(), v_j * i_ji.conjugate()


class ConsensusLayout:
    """一致性约束 x_p = z_{zmap[p]} 的索引布局

    + zmap: x 槽 → z 槽（即复制映射 P）
    + kind: 每个约束的种类（GEN_P ... VOLTAGE）
    + component: 约束所属的发电机或支路端下标
    + owner_bus: 计算本地残差的母线
    """

    n_gens: int
    n_ends: int
    n_buses: int
    n_x: int
    n_z: int
    zmap: np.ndarray
    kind: np.ndarray
    component: np.ndarray
    owner_bus: np.ndarray

    def __init__(self, net: Network) -> None:
        G, E, B = len(net.gens), net.n_ends, len(net.buses)
        self.n_gens, self.n_ends, self.n_buses = G, E, B
        self.n_x = 2 * G + 3 * E
        self.n_z = 2 * G + 2 * E + B
        zmap = np.empty(self.n_x, dtype=np.intp)
        kind = np.empty(self.n_x, dtype=np.intp)
        component = np.empty(self.n_x, dtype=np.intp)
        owner = np.empty(self.n_x, dtype=np.intp)
        for g, gen in enumerate(net.gens):
            for slot, k in ((g, GEN_P), (G + g, GEN_Q)):
                zmap[slot] = slot
                kind[slot] = k
                component[slot] = g
                owner[slot] = gen.bus
        for e in range(E):
            bus = net.end_bus(e)
            base = self.x_end(e)
            zmap[base] = self.z_flow(e)
            zmap[base + 1] = self.z_flow(e) + 1
            zmap[base + 2] = self.z_w(bus)
            kind[base : base + 3] = (FLOW_P, FLOW_Q, VOLTAGE)
            component[base : base + 3] = e
            owner[base : base + 3] = bus
        for a in (zmap, kind, component, owner):
            a.setflags(write=False)
        self.zmap, self.kind, self.component, self.owner_bus = zmap, kind, component, owner

        # 母线子问题用到的下标分组
        self.bus_groups = [self._bus_group(net, b) for b in range(B)]

    @property
    def n_lambda(self) -> int:
        return self.n_x

    def x_end(self, e: int) -> int:
        "支路端 e 的 (p, q, w) 三元组在 x 中的起始下标"
        return 2 * self.n_gens + 3 * e

    def z_flow(self, e: int) -> int:
        return 2 * self.n_gens + 2 * e

    def z_w(self, bus: int) -> int:
        return 2 * self.n_gens + 2 * self.n_ends + bus

    def _bus_group(self, net: Network, b: int) -> "BusGroup":
        gens = np.array(net.bus_gens[b], dtype=np.intp)
        ends = np.array(net.bus_ends[b], dtype=np.intp)
        end_x = 2 * self.n_gens + 3 * ends
        return BusGroup(
            gen_p=gens,
            gen_q=gens + self.n_gens,
            end_p=end_x,
            end_q=end_x + 1,
            end_w=end_x + 2,
            z_end_p=2 * self.n_gens + 2 * ends,
            z_end_q=2 * self.n_gens + 2 * ends + 1,
            z_w=self.z_w(b),
        )

    def duplicate(self, z: np.ndarray) -> np.ndarray:
        "Pz"
        return z[self.zmap]

    def reverse_map(self) -> list[list[int]]:
        "每个 z 槽对应的全部 x 槽"
        rev = [[] for _ in range(self.n_z)]
        for p, q in enumerate(self.zmap):
            rev[q].append(p)
        return rev

    def rho_init(self, rho_power: float, rho_voltage: float) -> np.ndarray:
        return np.where(self.kind == VOLTAGE, rho_voltage, rho_power).astype(float)

    def z_init(self, net: Network) -> np.ndarray:
        """发电机副本取界限中点，w_i = 1，支路端副本为 0"""
        z = np.zeros(self.n_z)
        G = self.n_gens
        for g, gen in enumerate(net.gens):
            z[g] = 0.5 * (gen.p_min + gen.p_max)
            z[G + g] = 0.5 * (gen.q_min + gen.q_max)
        z[self.z_w(0) : self.z_w(0) + self.n_buses] = 1.0
        return z


class BusGroup(NamedTuple):
    "一条母线上的 x/z 下标，发电机的 z 下标与 x 下标相同"
    gen_p: np.ndarray
    gen_q: np.ndarray
    end_p: np.ndarray
    end_q: np.ndarray
    end_w: np.ndarray
    z_end_p: np.ndarray
    z_end_q: np.ndarray
    z_w: int


def build_layout(net: Network) -> ConsensusLayout:
    layout = ConsensusLayout(net)
    logging.debug(f"layout: n_lambda={layout.n_lambda}, n_z={layout.n_z}")
    return layout


def evaluate_objective(net: Network, x: np.ndarray) -> float:
    "Σ c2·(p·base)² + c1·(p·base) + c0，单位 $/h"
    total = 0.0
    for g, gen in enumerate(net.gens):
        mw = x[g] * gen.base
        total += gen.c2 * mw * mw + gen.c1 * mw + gen.c0
    return total
