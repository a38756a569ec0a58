"""ADMM 迭代引擎

一次迭代的顺序：

1. x_update : 发电机与支路子问题（并行）
2. 过松弛格式：先算 λ̂ = λ + ρ(α-1)(x - Pz)
3. z_update : 母线子问题（并行）
4. lambda_update : λ ← base + ρ(x - Pz)
5. compute_residuals : 原始/对偶残差与停止阈值
6. fast_step : fast 格式的外推或重启
7. adapt_rho : 每 k_f 次迭代按残差平衡调整 ρ

所有归约都在主线程中按固定顺序进行，结果与线程数无关。
"""
import logging
import math
from time import perf_counter
from typing import Callable

import numpy as np

from ..config import AlgorithmConfig, Balancing, BranchSolverConfig
from ..exceptions import NotConverged, SolverError
from ..local_solvers import (
    BranchProxInput,
    BusProxInput,
    GenProxInput,
    solve_branch,
    solve_bus,
    solve_generator,
)
from ..network import ConsensusLayout, Network, evaluate_objective
from .pool import WorkerPool
from .state import IterateState, ResidualReport, SolveReport, TraceRow, finite_or_inf

__all__ = [
    "ADMMEngine",
    "IterateState",
    "ResidualReport",
    "SolveReport",
    "TraceRow",
    "WorkerPool",
    "run",
]

# DEBUG 日志中残差摘要的间隔
LOG_EVERY = 100


class ADMMEngine:
    """在给定网络和布局上运行一种 ADMM 格式

    + `init_state` : 按默认初始化生成 IterateState
    + `x_update` / `z_update` / `lambda_update` : 三个基本步骤
    + `relax_dual` : 过松弛格式的 λ̂
    + `compute_residuals` : 残差与停止阈值
    + `fast_step` : fast 格式的外推与重启
    + `adapt_rho` : 残差平衡
    + `run` : 完整求解，返回 SolveReport

    引擎同一时间只应被一个调用方使用。
    """

    net: Network
    layout: ConsensusLayout
    config: AlgorithmConfig
    branch_settings: BranchSolverConfig
    pool: WorkerPool
    _branch_slots: list[np.ndarray]

    def __init__(
        self,
        net: Network,
        layout: ConsensusLayout,
        config: AlgorithmConfig | None = None,
        branch_settings: BranchSolverConfig | None = None,
        pool: WorkerPool | None = None,
    ) -> None:
        self.net = net
        self.layout = layout
        self.config = config or AlgorithmConfig()
        self.branch_settings = branch_settings or BranchSolverConfig()
        self._own_pool = pool is None
        self.pool = pool or WorkerPool(self.config.threads)
        n = len(net.branches)
        # 每条支路的 6 个 x 槽：首端 (p, q, w) 与末端 (p, q, w)
        self._branch_slots = [
            np.r_[
                layout.x_end(l) : layout.x_end(l) + 3,
                layout.x_end(l + n) : layout.x_end(l + n) + 3,
            ]
            for l in range(n)
        ]

    def close(self):
        if self._own_pool:
            self.pool.close()

    def __enter__(self) -> "ADMMEngine":
        return self

    def __exit__(self, *exc):
        self.close()

    def init_state(self) -> IterateState:
        """λ = 0，x = 0；母线侧 z 取发电机界限中点、w = 1、支路端副本为 0；
        ρ 按约束种类取 rho_power 或 rho_voltage"""
        layout = self.layout
        return IterateState(
            x=np.zeros(layout.n_x),
            z=layout.z_init(self.net),
            lam=np.zeros(layout.n_lambda),
            rho=layout.rho_init(self.config.rho_power, self.config.rho_voltage),
            c_comb=finite_or_inf(self.config.combined_residual_init),
            n_branches=len(self.net.branches),
        )

    # ---- x 更新 ----

    def _gen_task(self, inp: GenProxInput):
        return solve_generator(inp)

    def _branch_task(self, inp: BranchProxInput):
        try:
            return solve_branch(inp, self.branch_settings)
        except SolverError as e:
            e.component = f"branch {inp.branch.index}"
            raise

    def x_update(
        self, z: np.ndarray, lam: np.ndarray, rho: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """返回 (x, branch_w)；fast 格式由调用方传入 (ẑ, λ̂)"""
        layout = self.layout
        G = layout.n_gens
        dup = layout.duplicate(z)
        gen_inputs = [
            GenProxInput(
                c2=gen.c2,
                c1=gen.c1,
                base=gen.base,
                lambda_p=lam[g],
                lambda_q=lam[G + g],
                rho_p=rho[g],
                rho_q=rho[G + g],
                p_dup=dup[g],
                q_dup=dup[G + g],
                p_min=gen.p_min,
                p_max=gen.p_max,
                q_min=gen.q_min,
                q_max=gen.q_max,
            )
            for g, gen in enumerate(self.net.gens)
        ]
        branch_inputs = [
            BranchProxInput(branch=br, lam=lam[idx], rho=rho[idx], centers=dup[idx])
            for br, idx in zip(self.net.branches, self._branch_slots)
        ]

        x = np.empty(layout.n_x)
        for g, (p, q) in enumerate(self.pool.map(self._gen_task, gen_inputs)):
            x[g] = p
            x[G + g] = q
        branch_w = np.empty((len(branch_inputs), 2))
        for l, primal in enumerate(self.pool.map(self._branch_task, branch_inputs)):
            x[self._branch_slots[l]] = primal.as_x()
            branch_w[l] = primal.wr, primal.wi
        return x, branch_w

    # ---- z 更新 ----

    def _bus_task(self, args: tuple[int, BusProxInput]):
        b, inp = args
        try:
            return solve_bus(inp)
        except SolverError as e:
            e.component = f"bus {self.net.buses[b].id}"
            raise

    def z_update(self, x: np.ndarray, lam: np.ndarray, rho: np.ndarray) -> np.ndarray:
        """lam 为本格式在 z 更新中使用的对偶变量（λ、过松弛的 λ̂ 或 fast 的 λ̂）"""
        inputs = []
        for b, (bus, grp) in enumerate(zip(self.net.buses, self.layout.bus_groups)):
            inp = BusProxInput(
                gen_p=x[grp.gen_p],
                gen_q=x[grp.gen_q],
                lam_gen_p=lam[grp.gen_p],
                lam_gen_q=lam[grp.gen_q],
                rho_gen_p=rho[grp.gen_p],
                rho_gen_q=rho[grp.gen_q],
                flow_p=x[grp.end_p],
                flow_q=x[grp.end_q],
                flow_w=x[grp.end_w],
                lam_flow_p=lam[grp.end_p],
                lam_flow_q=lam[grp.end_q],
                lam_flow_w=lam[grp.end_w],
                rho_flow_p=rho[grp.end_p],
                rho_flow_q=rho[grp.end_q],
                rho_flow_w=rho[grp.end_w],
                p_d=bus.p_d,
                q_d=bus.q_d,
                g_sh=bus.g_sh,
                b_sh=bus.b_sh,
            )
            inputs.append((b, inp))

        z = np.empty(self.layout.n_z)
        for grp, sol in zip(self.layout.bus_groups, self.pool.map(self._bus_task, inputs)):
            # 发电机的 z 下标与 x 下标相同
            z[grp.gen_p] = sol.gen_p
            z[grp.gen_q] = sol.gen_q
            z[grp.z_end_p] = sol.flow_p
            z[grp.z_end_q] = sol.flow_q
            z[grp.z_w] = sol.w
        return z

    # ---- 对偶更新与残差 ----

    def relax_dual(
        self, x: np.ndarray, z: np.ndarray, lam: np.ndarray, rho: np.ndarray, alpha: float
    ) -> np.ndarray:
        "λ̂ = λ + ρ(α-1)(x - Pz)"
        return lam + rho * (alpha - 1) * (x - self.layout.duplicate(z))

    def lambda_update(
        self, x: np.ndarray, z: np.ndarray, lam_base: np.ndarray, rho: np.ndarray
    ) -> np.ndarray:
        "λ ← base + ρ(x - Pz)"
        return lam_base + rho * (x - self.layout.duplicate(z))

    def compute_residuals(
        self,
        x: np.ndarray,
        z: np.ndarray,
        z_ref: np.ndarray,
        lam: np.ndarray,
        rho: np.ndarray,
    ) -> ResidualReport:
        """r = x - Pz，s = -ρ∘P(z - z_ref)；
        z_ref 在 fast 格式中为 ẑ，其它格式为上一步的 z"""
        cfg = self.config
        pz = self.layout.duplicate(z)
        r = x - pz
        s = -rho * self.layout.duplicate(z - z_ref)
        root_n = math.sqrt(self.layout.n_lambda)
        eps_pri = root_n * cfg.eps_abs + cfg.eps_rel * max(
            float(np.linalg.norm(x)), float(np.linalg.norm(pz)), 0.0
        )
        eps_dual = math.sqrt(self.layout.n_x) * cfg.eps_abs + cfg.eps_rel * float(
            np.linalg.norm(lam)
        )
        return ResidualReport(
            r=r,
            s=s,
            r_norm=float(np.linalg.norm(r)),
            s_norm=float(np.linalg.norm(s)),
            eps_pri=eps_pri,
            eps_dual=eps_dual,
            max_abs_r=float(np.abs(r).max()) if r.size else 0.0,
        )

    # ---- 加速与自适应 ----

    def fast_step(
        self,
        state: IterateState,
        res: ResidualReport,
        z_prev: np.ndarray,
        lam_prev: np.ndarray,
    ) -> bool:
        """在 state 上更新 (ẑ, λ̂, α, c)，返回本次是否重启

        state.z / state.lam 此时已是 z^{k+1} / λ^{k+1}
        """
        cfg = self.config
        rho = state.rho
        c_new = float(rho @ res.r**2 + res.s @ (res.s / rho))
        if c_new < cfg.eta * state.c_comb:
            alpha = state.alpha_acc
            alpha_new = (1 + math.sqrt(1 + 4 * alpha * alpha)) / 2
            momentum = (alpha - 1) / alpha_new
            state.z_hat = state.z + momentum * (state.z - z_prev)
            state.lam_hat = state.lam + momentum * (state.lam - lam_prev)
            state.alpha_acc = alpha_new
            state.c_comb = c_new
            return False

        state.alpha_acc = 1.0
        if cfg.restart_to_previous:
            state.z_hat = z_prev.copy()
            state.lam_hat = lam_prev.copy()
        else:
            state.z_hat = state.z.copy()
            state.lam_hat = state.lam.copy()
        # c 保持为重启前的值
        return True

    def adapt_rho(self, rho: np.ndarray, res: ResidualReport) -> np.ndarray:
        """local: 对每个约束比较 |r_p| 与 |s_p|；
        global: 比较全局范数，对所有 ρ 做同样的调整。
        结果截断到 [rho_min, rho_max]"""
        cfg = self.config
        up, down = 1 + cfg.tau_incr, 1 + cfg.tau_decr
        if cfg.balancing == Balancing.global_:
            if res.r_norm > cfg.mu_incr * res.s_norm:
                new = rho * up
            elif res.s_norm > cfg.mu_decr * res.r_norm:
                new = rho / down
            else:
                new = rho.copy()
        else:
            abs_r, abs_s = np.abs(res.r), np.abs(res.s)
            new = np.where(
                abs_r > cfg.mu_incr * abs_s,
                rho * up,
                np.where(abs_s > cfg.mu_decr * abs_r, rho / down, rho),
            )
        return np.clip(new, cfg.rho_min, cfg.rho_max)

    def _should_adapt(self, k: int, restarted: bool) -> bool:
        cfg = self.config
        if not cfg.scheme.is_adaptive or k % cfg.k_f != 0:
            return False
        if cfg.adapt_only_on_restart and cfg.scheme.is_fast:
            return restarted
        return True

    # ---- 主循环 ----

    def step(self, state: IterateState) -> tuple[ResidualReport, bool]:
        """执行一次完整迭代，原地更新 state，返回 (残差, 是否重启)"""
        cfg = self.config
        scheme = cfg.scheme
        state.k += 1
        z_prev, lam_prev = state.z, state.lam
        if scheme.is_fast:
            z_use, lam_use = state.z_hat, state.lam_hat
        else:
            z_use, lam_use = state.z, state.lam

        x, branch_w = self.x_update(z_use, lam_use, state.rho)
        alpha = cfg.effective_alpha
        # α = 1 时不做任何额外运算，与 vanilla 逐位一致
        lam_base = self.relax_dual(x, z_prev, lam_prev, state.rho, alpha) if alpha != 1.0 else lam_use
        z_new = self.z_update(x, lam_base, state.rho)
        lam_new = self.lambda_update(x, z_new, lam_base, state.rho)
        z_ref = state.z_hat if scheme.is_fast else z_prev
        res = self.compute_residuals(x, z_new, z_ref, lam_new, state.rho)

        state.x, state.z, state.lam = x, z_new, lam_new
        state.z_ref, state.branch_w = z_ref, branch_w
        restarted = False
        if scheme.is_fast:
            restarted = self.fast_step(state, res, z_prev, lam_prev)
            if restarted:
                logging.debug(f"iteration {state.k}: restart")
        return res, restarted

    def run(
        self,
        callback: Callable[[TraceRow], None] | None = None,
        raise_on_failure: bool = True,
    ) -> SolveReport:
        """迭代直到 r_norm ≤ eps_pri 且 s_norm ≤ eps_dual，或达到 max_iter

        未收敛时若 raise_on_failure 则抛出携带报告的 NotConverged
        """
        cfg = self.config
        state = self.init_state()
        trace: list[TraceRow] = []
        logging.info(f"run {cfg.scheme.value} on {self.net}")
        started = perf_counter()
        res = None
        for _ in range(cfg.max_iter):
            try:
                res, restarted = self.step(state)
            except SolverError as e:
                logging.error(f"iteration {state.k}: {e.component} failed: {e!r}")
                raise
            row = TraceRow(
                iter=state.k,
                r_norm=res.r_norm,
                s_norm=res.s_norm,
                eps_pri=res.eps_pri,
                eps_dual=res.eps_dual,
                objective=evaluate_objective(self.net, state.x),
                rho_min=float(state.rho.min()),
                rho_max=float(state.rho.max()),
                restart=restarted,
            )
            trace.append(row)
            if callback is not None:
                callback(row)
            if state.k % LOG_EVERY == 0:
                logging.debug(
                    f"iteration {state.k}: r={res.r_norm:.3e}/{res.eps_pri:.3e} "
                    f"s={res.s_norm:.3e}/{res.eps_dual:.3e}"
                )
            if res.converged:
                break
            if self._should_adapt(state.k, restarted):
                new_rho = self.adapt_rho(state.rho, res)
                changed = int(np.count_nonzero(new_rho != state.rho))
                if changed:
                    logging.debug(f"iteration {state.k}: adapted {changed} penalties")
                state.rho = new_rho

        report = SolveReport(
            scheme=cfg.scheme,
            config=cfg,
            converged=bool(res is not None and res.converged),
            iterations=state.k,
            objective=evaluate_objective(self.net, state.x),
            max_abs_r=res.max_abs_r if res is not None else math.nan,
            wall_ms=(perf_counter() - started) * 1000,
            trace=trace,
            x=state.x,
            z=state.z,
            lam=state.lam,
            rho=state.rho,
            z_ref=state.z_ref,
            branch_w=state.branch_w,
        )
        if report.converged:
            logging.info(
                f"{cfg.scheme.value} converged in {report.iterations} iterations, "
                f"objective {report.objective:.6f}"
            )
        else:
            logging.warning(f"{cfg.scheme.value} not converged after {report.iterations} iterations")
            if raise_on_failure:
                raise NotConverged("iteration cap reached", report.iterations, report=report)
        return report


def run(
    net: Network,
    layout: ConsensusLayout,
    config: AlgorithmConfig | None = None,
    branch_settings: BranchSolverConfig | None = None,
    callback: Callable[[TraceRow], None] | None = None,
    raise_on_failure: bool = True,
) -> SolveReport:
    with ADMMEngine(net, layout, config, branch_settings) as engine:
        return engine.run(callback=callback, raise_on_failure=raise_on_failure)
