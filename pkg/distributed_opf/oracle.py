"""用于测试的参照解

+ `reference_solve` : 以极严的容差运行 vanilla 引擎
+ `grid_oracle` : 两母线算例的穷举网格搜索，独立于 ADMM
+ `branch_grid_oracle` : 支路近端子问题的 4 维网格搜索
+ `radial_exactness_check` : 辐射网络上 SOC 松弛紧性的提示性检查
"""
import logging

import numpy as np
from pydantic import BaseModel

from .config import AlgorithmConfig, BranchSolverConfig, Scheme
from .engine import ADMMEngine, SolveReport
from .exceptions import NoFeasibleGridPoint
from .local_solvers import BranchProxInput
from .network import BranchModel, ConsensusLayout, Network

REFERENCE_SETTINGS = dict(eps_abs=1e-9, eps_rel=1e-8, max_iter=500000)
# 可行性判断的容差
FEAS_TOL = 1e-12


class ReferenceSolution(BaseModel):
    objective: float
    x: np.ndarray
    z: np.ndarray
    max_kkt_violation: float
    soc_gaps: np.ndarray
    report: SolveReport

    class Config:
        arbitrary_types_allowed = True


class GridResult(BaseModel):
    """objective 为最优可行网格点的目标值，
    bracket 为最后一层网格上相邻点的目标值最大变化"""

    objective: float
    bracket: float
    step: float
    point: tuple[float, float, float, float]


def soc_gaps(net: Network, layout: ConsensusLayout, x: np.ndarray, branch_w: np.ndarray) -> np.ndarray:
    "w_i·w_j - (wr² + wi²)，w 取支路侧的副本"
    n = len(net.branches)
    gaps = np.empty(n)
    for l in range(n):
        w_i = x[layout.x_end(l) + 2]
        w_j = x[layout.x_end(l + n) + 2]
        wr, wi = branch_w[l]
        gaps[l] = w_i * w_j - (wr * wr + wi * wi)
    return gaps


def reference_solve(
    net: Network,
    layout: ConsensusLayout,
    branch_settings: BranchSolverConfig | None = None,
    **overrides,
) -> ReferenceSolution:
    """vanilla 格式，eps_abs = 1e-9，eps_rel = 1e-8，max_iter = 500000；
    关键字参数可覆盖这些设置。未收敛时抛出 NotConverged"""
    settings = {**REFERENCE_SETTINGS, **overrides, "scheme": Scheme.vanilla}
    config = AlgorithmConfig(**settings)
    with ADMMEngine(net, layout, config, branch_settings) as engine:
        report = engine.run()
        res = engine.compute_residuals(report.x, report.z, report.z_ref, report.lam, report.rho)
    gaps = soc_gaps(net, layout, report.x, report.branch_w)
    ref = ReferenceSolution(
        objective=report.objective,
        x=report.x,
        z=report.z,
        max_kkt_violation=max(float(np.abs(res.r).max(initial=0.0)), float(np.abs(res.s).max(initial=0.0))),
        soc_gaps=gaps,
        report=report,
    )
    logging.info(f"reference objective {ref.objective:.8f}, min SOC gap {gaps.min(initial=0.0):.3e}")
    return ref


def radial_exactness_check(ref: ReferenceSolution, tol: float = 1e-5) -> bool:
    """辐射网络上松弛应当是紧的，仅作提示：不满足时记录警告"""
    worst = float(np.abs(ref.soc_gaps).max(initial=0.0))
    if worst > tol:
        logging.warning(f"SOC relaxation not tight: max gap {worst:.3e} > {tol:.1e}")
        return False
    return True


def _two_bus_grid(net: Network, w_i: np.ndarray, w_j: np.ndarray):
    """给定 (w_i, w_j) 网格，由非发电机母线的 KCL 精确解出 (wr, wi)，
    再由发电机母线的 KCL 得到出力，返回 (目标值, wr, wi)，不可行处目标值为 inf"""
    br = net.branches[0]
    gen = net.gens[0]
    m = br.flow_matrix
    gen_bus = gen.bus
    load_bus = br.to_bus if gen_bus == br.from_bus else br.from_bus
    # 各母线所在端在 flow_matrix 中的 (p, q) 行
    load_rows = (0, 1) if load_bus == br.from_bus else (3, 4)
    gen_rows = (3, 4) if load_rows == (0, 1) else (0, 1)
    w_gen = w_i if gen_bus == br.from_bus else w_j
    w_load = w_j if gen_bus == br.from_bus else w_i

    load = net.buses[load_bus]
    p_target = -load.p_d - load.g_sh * w_load
    q_target = -load.q_d + load.b_sh * w_load
    pr, qr = m[load_rows[0]], m[load_rows[1]]
    rhs = np.stack(
        [
            p_target - pr[0] * w_i - pr[1] * w_j,
            q_target - qr[0] * w_i - qr[1] * w_j,
        ]
    )
    solved = np.linalg.solve(np.array([[pr[2], pr[3]], [qr[2], qr[3]]]), rhs)
    wr, wi = solved[0], solved[1]

    v = np.stack([w_i, w_j, wr, wi])
    flows = m @ v
    bus = net.buses[gen_bus]
    p_g = bus.p_d + flows[gen_rows[0]] + bus.g_sh * w_gen
    q_g = bus.q_d + flows[gen_rows[1]] - bus.b_sh * w_gen

    feasible = (
        (p_g >= gen.p_min - FEAS_TOL)
        & (p_g <= gen.p_max + FEAS_TOL)
        & (q_g >= gen.q_min - FEAS_TOL)
        & (q_g <= gen.q_max + FEAS_TOL)
        & (w_i * w_j - wr**2 - wi**2 >= -FEAS_TOL)
        & _branch_feasible(br, flows, wr, wi)
    )
    mw = p_g * gen.base
    objective = gen.c2 * mw**2 + gen.c1 * mw + gen.c0
    return np.where(feasible, objective, np.inf), wr, wi


def _branch_feasible(br: BranchModel, flows: np.ndarray, wr, wi) -> np.ndarray:
    ok = np.ones(np.shape(wr), dtype=bool)
    if br.s_max is not None:
        limit = br.s_max**2 + FEAS_TOL
        ok &= flows[0] ** 2 + flows[1] ** 2 <= limit
        ok &= flows[3] ** 2 + flows[4] ** 2 <= limit
    if br.tan_min is not None:
        ok &= br.tan_min * wr - wi <= FEAS_TOL
        ok &= wi - br.tan_max * wr <= FEAS_TOL
    return ok


def _neighbour_spread(values: np.ndarray, idx: tuple[int, ...]) -> float:
    "最优网格点与其可行邻点目标值之差的最大值"
    window = tuple(slice(max(i - 1, 0), i + 2) for i in idx)
    around = values[window]
    around = around[np.isfinite(around)]
    return float(np.abs(around - values[idx]).max(initial=0.0))


def grid_oracle(net: Network, resolution: float = 0.01, rounds: int = 3) -> GridResult:
    """两母线、一条支路、一台发电机的算例上的穷举搜索

    在 (w_i, w_j) 上以 resolution 为步长铺网格，再在最优点附近逐层细化 rounds 次
    """
    if len(net.buses) != 2 or len(net.branches) != 1 or len(net.gens) != 1:
        raise ValueError("grid oracle needs exactly 2 buses, 1 branch, 1 generator", str(net))
    br = net.branches[0]
    box_lo = np.array([br.w_min_i, br.w_min_j])
    box_hi = np.array([br.w_max_i, br.w_max_j])
    lo, hi, step = box_lo, box_hi, resolution
    best = None
    for _ in range(rounds + 1):
        axes = [np.linspace(a, b, max(int(round((b - a) / step)) + 1, 2)) for a, b in zip(lo, hi)]
        w_i, w_j = np.meshgrid(*axes, indexing="ij")
        values, wr, wi = _two_bus_grid(net, w_i.ravel(), w_j.ravel())
        values = values.reshape(w_i.shape)
        if not np.isfinite(values).any():
            break
        idx = np.unravel_index(int(np.argmin(values)), values.shape)
        flat = int(np.ravel_multi_index(idx, values.shape))
        best = GridResult(
            objective=float(values[idx]),
            bracket=_neighbour_spread(values, idx),
            step=step,
            point=(float(w_i[idx]), float(w_j[idx]), float(wr[flat]), float(wi[flat])),
        )
        centre = np.array(best.point[:2])
        lo = np.maximum(box_lo, centre - 2 * step)
        hi = np.minimum(box_hi, centre + 2 * step)
        step /= 5
    if best is None:
        raise NoFeasibleGridPoint("no feasible grid point", resolution)
    logging.debug(f"grid oracle objective {best.objective:.6f} ± {best.bracket:.2e}")
    return best


def _thermal_box(br: BranchModel) -> tuple[np.ndarray, np.ndarray] | None:
    """热稳定极限下 W = wr + j·wi 的外接矩形

    首端：|(gc + j·bc)·w_i - (g + j·b)·W| ≤ s_max，即 W 落在圆心随 w_i 线性移动的圆内；
    末端同理，但约束的是 conj(W)
    """
    if br.s_max is None:
        return None
    lo = np.array([-np.inf, -np.inf])
    hi = np.array([np.inf, np.inf])
    ends = (
        (complex(br.gc_ij, br.bc_ij), complex(br.g_ij, br.b_ij), (br.w_min_i, br.w_max_i), 1),
        (complex(br.gc_ji, br.bc_ji), complex(br.g_ji, br.b_ji), (br.w_min_j, br.w_max_j), -1),
    )
    for shunt, series, w_range, sign in ends:
        if series == 0:
            continue
        radius = br.s_max / abs(series)
        centres = [shunt * w / series for w in w_range]
        re = [c.real for c in centres]
        im = [sign * c.imag for c in centres]
        lo = np.maximum(lo, [min(re) - radius, min(im) - radius])
        hi = np.minimum(hi, [max(re) + radius, max(im) + radius])
    return lo, hi


def _polar_box(br: BranchModel) -> tuple[np.ndarray, np.ndarray]:
    """(w_i, w_j, t, θ) 的搜索范围，W = t·√(w_i w_j)·e^{jθ}，t ∈ [0, 1]

    锥约束与相角差带都落在坐标面上；热稳定极限只用来收窄 θ 和 t 的范围
    """
    theta_lo, theta_hi = -np.pi, np.pi
    if br.tan_min is not None:
        theta_lo, theta_hi = np.arctan(br.tan_min), np.arctan(br.tan_max)
    t_lo = 0.0
    thermal = _thermal_box(br)
    if thermal is not None:
        (re_lo, im_lo), (re_hi, im_hi) = thermal
        if re_lo > re_hi or im_lo > im_hi:
            raise NoFeasibleGridPoint("thermal limits exclude every grid point", br.index)
        if re_lo > 0:
            # 矩形在右半平面，角度范围由四个角点决定
            angles = [np.arctan2(im, re) for re in (re_lo, re_hi) for im in (im_lo, im_hi)]
            theta_lo, theta_hi = max(theta_lo, min(angles)), min(theta_hi, max(angles))
            nearest = np.hypot(re_lo, np.clip(0.0, im_lo, im_hi))
            t_lo = nearest / np.sqrt(br.w_max_i * br.w_max_j)
    if theta_lo > theta_hi or t_lo > 1:
        raise NoFeasibleGridPoint("thermal limits exclude every grid point", br.index)
    return (
        np.array([br.w_min_i, br.w_min_j, t_lo, theta_lo]),
        np.array([br.w_max_i, br.w_max_j, 1.0, theta_hi]),
    )


def _seeds(values: np.ndarray, starts: int) -> list[tuple[int, ...]]:
    "目标值从小到大挑选互相隔开两格以上的可行网格点"
    chosen: list[tuple[int, ...]] = []
    for flat in np.argsort(values, axis=None):
        if not np.isfinite(values.flat[flat]) or len(chosen) == starts:
            break
        idx = np.unravel_index(int(flat), values.shape)
        if all(max(abs(a - b) for a, b in zip(idx, c)) > 2 for c in chosen):
            chosen.append(tuple(int(i) for i in idx))
    return chosen


def branch_grid_oracle(
    inp: BranchProxInput, points: int = 11, rounds: int = 12, starts: int = 4
) -> tuple[GridResult, np.ndarray]:
    """支路近端子问题的网格细化搜索

    在 (w_i, w_j, t, θ) 上铺网格，取第一层中互相隔开的 starts 个最优点，
    分别在其附近逐层细化，最终取全部结果中最好的一个。
    返回 (GridResult, v)，目标值为 ½ Σ ρ (x - c + λ/ρ)²
    """
    br = inp.branch
    rho = np.asarray(inp.rho, dtype=float)
    target = np.asarray(inp.centers, dtype=float) - np.asarray(inp.lam) / rho
    box_lo, box_hi = _polar_box(br)

    def evaluate(lo: np.ndarray, hi: np.ndarray):
        axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        radius = grids[2] * np.sqrt(grids[0] * grids[1])
        v = np.stack([grids[0], grids[1], radius * np.cos(grids[3]), radius * np.sin(grids[3])])
        v = v.reshape(4, -1)
        flows = br.flow_matrix @ v
        feasible = _branch_feasible(br, flows, v[2], v[3])
        res = flows - target[:, None]
        values = np.where(feasible, 0.5 * (rho[:, None] * res**2).sum(axis=0), np.inf)
        return values.reshape(grids[0].shape), grids, v.reshape(4, *grids[0].shape)

    def result(values, grids, v, idx, lo, hi) -> tuple[GridResult, np.ndarray, np.ndarray]:
        step = (hi - lo) / (points - 1)
        best_v = v[(slice(None), *idx)]
        found = GridResult(
            objective=float(values[idx]),
            bracket=_neighbour_spread(values, idx),
            step=float(step.max()),
            point=tuple(float(c) for c in best_v),
        )
        return found, best_v, np.array([g[idx] for g in grids])

    values, grids, v = evaluate(box_lo, box_hi)
    seeds = _seeds(values, starts)
    if not seeds:
        raise NoFeasibleGridPoint("no feasible grid point for branch", br.index)

    best, best_v = None, None
    for idx in seeds:
        lo, hi = box_lo, box_hi
        found, found_v, centre = result(values, grids, v, idx, lo, hi)
        for _ in range(rounds - 1):
            step = (hi - lo) / (points - 1)
            lo = np.maximum(box_lo, centre - 2 * step)
            hi = np.minimum(box_hi, centre + 2 * step)
            sub_values, sub_grids, sub_v = evaluate(lo, hi)
            if not np.isfinite(sub_values).any():
                break
            sub_idx = np.unravel_index(int(np.argmin(sub_values)), sub_values.shape)
            refined, refined_v, centre = result(sub_values, sub_grids, sub_v, sub_idx, lo, hi)
            # 范围被裁剪时上一层的最优点可能不在新网格上
            if refined.objective <= found.objective:
                found, found_v = refined, refined_v
        if best is None or found.objective < best.objective:
            best, best_v = found, found_v
    logging.debug(f"branch {br.index} grid objective {best.objective:.6e} ± {best.bracket:.2e}")
    return best, best_v
