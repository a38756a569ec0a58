"""支路子问题：在 v = (w_i, w_j, wr, wi) 上的对数障碍 Newton 法

    min  Σ_k ρ_k/2 (x_k - c_k + λ_k/ρ_k)²,   x = M v
    s.t. w_i w_j ≥ wr² + wi²
         w 上下限，相角差带 tan_min·wr ≤ wi ≤ tan_max·wr
         p_ij² + q_ij² ≤ s_max²，p_ji² + q_ji² ≤ s_max²

其中 c 为中心点（z 的副本）。约束分为两类：
线性约束 G v ≤ h；二次约束 u_k(v) = s_k + ½ vᵀQ_k v > 0。
"""
import cmath
import logging
import math
from typing import NamedTuple

import numpy as np

from ..config import BranchSolverConfig
from ..exceptions import BranchInfeasible, BranchNoConvergence
from ..network import BranchModel

# 寻找初始内点时，w 依次尝试的盒内位置
START_FRACTIONS = (0.5, 0.25, 0.75, 0.1, 0.9)
# 初始点在射线可行区间内的位置
START_RAY_FRACTION = 0.9
# 射线方向的后备角度 (度)，在基本方向失败后依次尝试
FALLBACK_ANGLES = (5.0, -5.0, 10.0, -10.0, 20.0, -20.0, 30.0, -30.0, 45.0, -45.0)
# 线搜索步长下限，低于此值视为停滞
MIN_STEP = 1e-14
# 松弛量相对其各项量级低于此值时已到舍入误差水平，继续减小 μ 没有意义
SLACK_FLOOR = 1e-13

# ½ vᵀ Q v = w_i w_j - wr² - wi²
_CONE = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, -2.0, 0.0],
        [0.0, 0.0, 0.0, -2.0],
    ]
)


class BranchProxInput(NamedTuple):
    """lam/rho/centers 均按 (p_ij, q_ij, w_i, p_ji, q_ji, w_j) 排列"""

    branch: BranchModel
    lam: np.ndarray
    rho: np.ndarray
    centers: np.ndarray


class BranchPrimal(NamedTuple):
    p_ij: float
    q_ij: float
    w_i: float
    p_ji: float
    q_ji: float
    w_j: float
    wr: float
    wi: float

    def as_x(self) -> np.ndarray:
        return np.array([self.p_ij, self.q_ij, self.w_i, self.p_ji, self.q_ji, self.w_j])

    @classmethod
    def from_v(cls, branch: BranchModel, v: np.ndarray) -> "BranchPrimal":
        x = branch.flow_matrix @ v
        return cls(*map(float, x), float(v[2]), float(v[3]))


class _Barrier:
    "预先组装好的障碍问题，只负责求值"

    def __init__(self, inp: BranchProxInput) -> None:
        br = inp.branch
        self.branch = br
        self.m = br.flow_matrix
        self.r = np.asarray(inp.rho, dtype=float)
        self.target = np.asarray(inp.centers, dtype=float) - np.asarray(inp.lam) / self.r
        self.h0 = self.m.T @ (self.r[:, None] * self.m)

        rows = [
            ([1.0, 0.0, 0.0, 0.0], br.w_max_i),
            ([-1.0, 0.0, 0.0, 0.0], -br.w_min_i),
            ([0.0, 1.0, 0.0, 0.0], br.w_max_j),
            ([0.0, -1.0, 0.0, 0.0], -br.w_min_j),
        ]
        self.has_band = br.tan_min is not None and br.tan_max is not None
        if self.has_band:
            rows.append(([0.0, 0.0, br.tan_min, -1.0], 0.0))
            rows.append(([0.0, 0.0, -br.tan_max, 1.0], 0.0))
        self.g = np.array([r for r, _ in rows])
        self.h = np.array([b for _, b in rows])

        quads = [_CONE]
        consts = [0.0]
        if br.s_max is not None:
            for p_row, q_row in ((0, 1), (3, 4)):
                a_p, a_q = self.m[p_row], self.m[q_row]
                quads.append(-2.0 * (np.outer(a_p, a_p) + np.outer(a_q, a_q)))
                consts.append(br.s_max**2)
        self.q = np.array(quads)
        self.s = np.array(consts)

    def objective(self, v: np.ndarray) -> float:
        res = self.m @ v - self.target
        return 0.5 * float(res @ (self.r * res))

    def slacks(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lin = self.h - self.g @ v
        qv = self.q @ v
        quad = self.s + 0.5 * (qv @ v)
        return lin, quad, qv

    def strictly_feasible(self, v: np.ndarray) -> bool:
        lin, quad, _ = self.slacks(v)
        return bool((lin > 0).all() and (quad > 0).all())

    def at_floor(self, v: np.ndarray) -> bool:
        "是否有约束的松弛量只剩舍入误差，量级按各项绝对值之和计"
        lin, quad, _ = self.slacks(v)
        av = np.abs(v)
        lin_scale = np.abs(self.h) + np.abs(self.g) @ av
        quad_scale = np.abs(self.s) + 0.5 * np.einsum("i,kij,j->k", av, np.abs(self.q), av)
        return bool((lin <= SLACK_FLOOR * lin_scale).any() or (quad <= SLACK_FLOOR * quad_scale).any())

    def value(self, v: np.ndarray, mu: float) -> float:
        lin, quad, _ = self.slacks(v)
        if (lin <= 0).any() or (quad <= 0).any():
            return math.inf
        return self.objective(v) - mu * (np.log(lin).sum() + np.log(quad).sum())

    def grad_hess(self, v: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
        res = self.m @ v - self.target
        grad = self.m.T @ (self.r * res)
        hess = self.h0.copy()

        lin, quad, qv = self.slacks(v)
        inv = 1.0 / lin
        grad += mu * (self.g.T @ inv)
        hess += mu * ((self.g.T * inv**2) @ self.g)

        inv = 1.0 / quad
        grad -= mu * (qv.T @ inv)
        hess += mu * (
            np.einsum("k,ki,kj->ij", inv**2, qv, qv) - np.einsum("k,kij->ij", inv, self.q)
        )
        return grad, hess

    def _ray_interval(self, w_i: float, w_j: float, d: tuple[float, float]):
        "v(t) = (w_i, w_j, t·d0, t·d1) 满足全部二次约束的 t 区间"
        lo, hi = -math.inf, math.inf
        v0 = np.array([w_i, w_j, 0.0, 0.0])
        dv = np.array([0.0, 0.0, d[0], d[1]])
        for qk, sk in zip(self.q, self.s):
            a = 0.5 * float(dv @ qk @ dv)
            b = float(v0 @ qk @ dv)
            c = sk + 0.5 * float(v0 @ qk @ v0)
            if a < 0:
                disc = b * b - 4 * a * c
                if disc <= 0:
                    return None
                root = math.sqrt(disc)
                r1, r2 = sorted(((-b + root) / (2 * a), (-b - root) / (2 * a)))
                lo, hi = max(lo, r1), min(hi, r2)
            elif b != 0:
                # 退化为线性：b·t + c > 0
                if b > 0:
                    lo = max(lo, -c / b)
                else:
                    hi = min(hi, -c / b)
            elif c <= 0:
                return None
        if self.has_band:
            lo = max(lo, 0.0)
        if not lo < hi:
            return None
        return lo, hi

    def _directions(self):
        "wi = 0 或相角差带中线方向在前，其次是移相角方向和若干后备角度"
        br = self.branch
        if not self.has_band or br.tan_min < 0 < br.tan_max:
            yield (1.0, 0.0)
        else:
            mid = 0.5 * (math.atan(br.tan_min) + math.atan(br.tan_max))
            yield (1.0, math.tan(mid))
        angles = [cmath.phase(br.tap)] if br.tap.imag else []
        angles += [math.radians(a) for a in FALLBACK_ANGLES]
        for angle in angles:
            slope = math.tan(angle)
            if self.has_band and not br.tan_min < slope < br.tan_max:
                continue
            yield (1.0, slope)

    def start_point(self) -> np.ndarray:
        """沿若干射线方向找一个严格内点

        w 取盒内若干固定位置，t 取射线可行区间内靠近上端的位置
        """
        br = self.branch
        for d in self._directions():
            v = self._start_on_ray(d)
            if v is not None:
                return v
        raise BranchInfeasible("no strictly feasible start point", br.index)

    def _start_on_ray(self, d: tuple[float, float]) -> np.ndarray | None:
        br = self.branch
        for fi in START_FRACTIONS:
            w_i = br.w_min_i + fi * (br.w_max_i - br.w_min_i)
            for fj in START_FRACTIONS:
                w_j = br.w_min_j + fj * (br.w_max_j - br.w_min_j)
                interval = self._ray_interval(w_i, w_j, d)
                if interval is None:
                    continue
                lo, hi = interval
                lo_eff = max(lo, 0.0) if hi > 0 else lo
                t = lo_eff + START_RAY_FRACTION * (hi - lo_eff)
                v = np.array([w_i, w_j, t * d[0], t * d[1]])
                if self.strictly_feasible(v):
                    return v
        return None


def _mu_schedule(settings: BranchSolverConfig):
    mu = settings.mu_start
    # 乘法累积误差，留一点余量
    while mu >= settings.mu_final * (1 - 1e-9):
        yield mu
        mu /= settings.mu_factor


def _newton_step(grad: np.ndarray, hess: np.ndarray) -> np.ndarray | None:
    "约束贴边时 Hessian 可能数值奇异，此时退回最小二乘解"
    try:
        step = np.linalg.solve(hess, -grad)
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
    if not np.isfinite(step).all():
        return None
    return step


def solve_branch(inp: BranchProxInput, settings: BranchSolverConfig | None = None) -> BranchPrimal:
    """障碍参数 μ 从 mu_start 依次除以 mu_factor 直到 mu_final，
    每个阶段用带 Armijo 回溯的阻尼 Newton 法求解，
    λ²/2 ≤ newton_tol 时结束该阶段（λ 为 Newton decrement，代码中 decrement 存的是 λ²）

    某个约束的松弛量降到舍入误差水平后提前结束整个 μ 序列"""
    settings = settings or BranchSolverConfig()
    barrier = _Barrier(inp)
    v = barrier.start_point()
    decrement = math.inf

    for mu in _mu_schedule(settings):
        if barrier.at_floor(v):
            logging.debug(f"branch {inp.branch.index}: slack at round-off level, stop at mu={mu:.1e}")
            break
        stalled = False
        for _ in range(settings.max_newton):
            grad, hess = barrier.grad_hess(v, mu)
            step = _newton_step(grad, hess)
            if step is None:
                stalled = True
                break
            decrement = float(-(grad @ step))
            if decrement < 0:
                stalled = True
                break
            if decrement / 2 <= settings.newton_tol:
                # 收敛后补一个整步
                candidate = v + step
                if barrier.value(candidate, mu) <= barrier.value(v, mu) and not barrier.at_floor(candidate):
                    v = candidate
                break

            current = barrier.value(v, mu)
            s = 1.0
            while True:
                candidate = v + s * step
                if barrier.value(candidate, mu) <= current - settings.armijo_slope * s * decrement:
                    break
                s *= settings.armijo_beta
                if s < MIN_STEP:
                    candidate = None
                    break
            if candidate is None:
                stalled = True
                break
            v = candidate
        if stalled:
            # 舍入误差使 Newton 法无法继续，当前点已是能达到的最好结果
            logging.debug(
                f"branch {inp.branch.index}: newton stalled at mu={mu:.1e}, decrement={decrement:.3e}"
            )
            break

    if decrement / 2 > settings.stall_tol:
        raise BranchNoConvergence(
            "barrier method stalled", inp.branch.index, best=v, decrement=decrement
        )
    return BranchPrimal.from_v(inp.branch, v)
