"""三类元件的近端子问题求解器

+ `solve_generator` : 发电机，盒约束下的闭式解
+ `solve_bus` : 母线，两条 KCL 等式约束下的闭式解
+ `solve_branch` : 支路，对数障碍 Newton 法（见 branch.py）

所有求解器都是输入的纯函数，可在不同线程中并发调用。
"""
from typing import NamedTuple

import numpy as np

from ..exceptions import SingularBusSystem
from .branch import BranchPrimal, BranchProxInput, solve_branch

__all__ = [
    "GenProxInput",
    "solve_generator",
    "BusProxInput",
    "BusSolution",
    "solve_bus",
    "BranchProxInput",
    "BranchPrimal",
    "solve_branch",
]

# KCL 在没有任何参与变量时允许的残差
KCL_EMPTY_ROW_TOL = 1e-12


class GenProxInput(NamedTuple):
    c2: float
    c1: float
    base: float
    lambda_p: float
    lambda_q: float
    rho_p: float
    rho_q: float
    p_dup: float
    q_dup: float
    p_min: float
    p_max: float
    q_min: float
    q_max: float


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def solve_generator(inp: GenProxInput) -> tuple[float, float]:
    """最小化 f(p) + λ_p·p + λ_q·q + ρ_p/2 (p - p_dup)² + ρ_q/2 (q - q_dup)²，
    目标可分且严格凸，直接截断到盒约束即为精确解；c0 不参与"""
    p = (inp.rho_p * inp.p_dup - inp.lambda_p - inp.c1 * inp.base) / (
        2 * inp.c2 * inp.base**2 + inp.rho_p
    )
    q = inp.q_dup - inp.lambda_q / inp.rho_q
    return _clamp(p, inp.p_min, inp.p_max), _clamp(q, inp.q_min, inp.q_max)


class BusProxInput(NamedTuple):
    """母线子问题的输入

    gen_*: 所连发电机一侧的 x 值、对偶变量与罚参数
    flow_*: 所连支路端一侧的 x 值 (p_ij, q_ij, w_i(ij))、对偶变量与罚参数
    """

    gen_p: np.ndarray
    gen_q: np.ndarray
    lam_gen_p: np.ndarray
    lam_gen_q: np.ndarray
    rho_gen_p: np.ndarray
    rho_gen_q: np.ndarray
    flow_p: np.ndarray
    flow_q: np.ndarray
    flow_w: np.ndarray
    lam_flow_p: np.ndarray
    lam_flow_q: np.ndarray
    lam_flow_w: np.ndarray
    rho_flow_p: np.ndarray
    rho_flow_q: np.ndarray
    rho_flow_w: np.ndarray
    p_d: float
    q_d: float
    g_sh: float
    b_sh: float


class BusSolution(NamedTuple):
    gen_p: np.ndarray
    gen_q: np.ndarray
    flow_p: np.ndarray
    flow_q: np.ndarray
    w: float
    nu_p: float
    nu_q: float


def solve_bus(inp: BusProxInput) -> BusSolution:
    """最小化 Σ -λ·z + ρ/2 (x - z)² ，约束为

        Σ p_g - p_d = Σ p_ij + g_sh·w
        Σ q_g - q_d = Σ q_ij - b_sh·w

    无约束目标点 t = x + λ/ρ（w 为所有端的加权平均），
    解为 z = t + D⁻¹Aᵀν，ν 由 2×2 系统 (A D⁻¹ Aᵀ) ν = d - A t 给出。
    没有支路端的母线 w 不是变量，固定为 1。
    """
    t_gp = inp.gen_p + inp.lam_gen_p / inp.rho_gen_p
    t_gq = inp.gen_q + inp.lam_gen_q / inp.rho_gen_q
    t_fp = inp.flow_p + inp.lam_flow_p / inp.rho_flow_p
    t_fq = inp.flow_q + inp.lam_flow_q / inp.rho_flow_q
    weight = float(inp.rho_flow_w.sum())
    w_free = weight > 0
    if w_free:
        t_w = float(inp.rho_flow_w @ inp.flow_w + inp.lam_flow_w.sum()) / weight
    else:
        t_w = 1.0

    d = np.array(
        [
            inp.p_d - (t_gp.sum() - t_fp.sum() - inp.g_sh * t_w),
            inp.q_d - (t_gq.sum() - t_fq.sum() + inp.b_sh * t_w),
        ]
    )
    m = np.array(
        [
            [(1 / inp.rho_gen_p).sum() + (1 / inp.rho_flow_p).sum(), 0.0],
            [0.0, (1 / inp.rho_gen_q).sum() + (1 / inp.rho_flow_q).sum()],
        ]
    )
    if w_free:
        m[0, 0] += inp.g_sh**2 / weight
        m[1, 1] += inp.b_sh**2 / weight
        m[0, 1] = m[1, 0] = -inp.g_sh * inp.b_sh / weight

    # 没有参与变量的 KCL 行只能恒成立
    active = m.diagonal() > 0
    for row in np.flatnonzero(~active):
        if abs(d[row]) > KCL_EMPTY_ROW_TOL:
            raise SingularBusSystem("KCL row without variables is violated", int(row), d[row])
    nu = np.zeros(2)
    if active.any():
        sub = m[np.ix_(active, active)]
        try:
            np.linalg.cholesky(sub)
        except np.linalg.LinAlgError:
            raise SingularBusSystem("bus KKT matrix not positive definite", sub) from None
        nu[active] = np.linalg.solve(sub, d[active])

    nu_p, nu_q = float(nu[0]), float(nu[1])
    w = t_w + (-inp.g_sh * nu_p + inp.b_sh * nu_q) / weight if w_free else t_w
    return BusSolution(
        gen_p=t_gp + nu_p / inp.rho_gen_p,
        gen_q=t_gq + nu_q / inp.rho_gen_q,
        flow_p=t_fp - nu_p / inp.rho_flow_p,
        flow_q=t_fq - nu_q / inp.rho_flow_q,
        w=w,
        nu_p=nu_p,
        nu_q=nu_q,
    )
