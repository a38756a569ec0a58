import math
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel

from ..config import AlgorithmConfig, Scheme

TRACE_FIELDS = (
    "iter",
    "r_norm",
    "s_norm",
    "eps_pri",
    "eps_dual",
    "objective",
    "rho_min",
    "rho_max",
    "restart",
)


class IterateState:
    """一次迭代结束时的全部状态

    + x, z, lam, rho: 长度分别为 N_x, N_z, N_λ, N_λ
    + z_hat, lam_hat: fast 格式的外推点，其它格式不使用
    + alpha_acc, c_comb: fast 格式的动量系数与组合残差
    + z_ref: 本次迭代计算对偶残差时用到的参考点
    + branch_w: 每条支路内部的 (wr, wi)
    """

    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    rho: np.ndarray
    z_hat: np.ndarray
    lam_hat: np.ndarray
    z_ref: np.ndarray
    branch_w: np.ndarray
    alpha_acc: float
    c_comb: float
    k: int

    def __init__(self, x, z, lam, rho, c_comb: float, n_branches: int) -> None:
        self.x = x
        self.z = z
        self.lam = lam
        self.rho = rho
        self.z_hat = z.copy()
        self.lam_hat = lam.copy()
        self.z_ref = z.copy()
        self.branch_w = np.zeros((n_branches, 2))
        self.alpha_acc = 1.0
        self.c_comb = c_comb
        self.k = 0


class ResidualReport(NamedTuple):
    r: np.ndarray
    s: np.ndarray
    r_norm: float
    s_norm: float
    eps_pri: float
    eps_dual: float
    max_abs_r: float

    @property
    def converged(self) -> bool:
        return self.r_norm <= self.eps_pri and self.s_norm <= self.eps_dual


class TraceRow(BaseModel):
    iter: int
    r_norm: float
    s_norm: float
    eps_pri: float
    eps_dual: float
    objective: float
    rho_min: float
    rho_max: float
    restart: bool = False

    def csv_row(self) -> list[str]:
        "小数形式，restart 写为 0/1"
        return [
            str(self.iter),
            *(repr(getattr(self, f)) for f in TRACE_FIELDS[1:-1]),
            str(int(self.restart)),
        ]


class SolveReport(BaseModel):
    """一次求解的结果，向量字段不参与 JSON 序列化"""

    scheme: Scheme
    config: AlgorithmConfig
    converged: bool
    iterations: int
    objective: float
    max_abs_r: float
    wall_ms: float = 0.0
    trace: list[TraceRow] = []
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    rho: np.ndarray
    z_ref: np.ndarray
    branch_w: np.ndarray

    class Config:
        arbitrary_types_allowed = True

    @property
    def last(self) -> TraceRow | None:
        return self.trace[-1] if self.trace else None

    def summary_json(self, **kwargs) -> str:
        return self.json(
            include={
                "converged",
                "iterations",
                "objective",
                "max_abs_r",
                "wall_ms",
                "scheme",
                "config",
            },
            **kwargs,
        )


def finite_or_inf(v: float | None) -> float:
    return math.inf if v is None else float(v)
