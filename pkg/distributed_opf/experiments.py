"""格式对比实验：各列的配置与结果表"""
from typing import NamedTuple

from pydantic import BaseModel

from .config import AlgorithmConfig, Scheme
from .engine import SolveReport


class Column(NamedTuple):
    label: str
    scheme: Scheme
    alpha: float = 1.0


# 第一列（α = 1 的过松弛）即 vanilla，作为加速比的基准
COLUMNS = (
    Column("over-relaxed a=1.0", Scheme.over_relaxed, 1.0),
    Column("over-relaxed a=1.5", Scheme.over_relaxed, 1.5),
    Column("over-relaxed a=1.8", Scheme.over_relaxed, 1.8),
    Column("or-adaptive a=1.0", Scheme.over_relaxed_adaptive, 1.0),
    Column("or-adaptive a=1.5", Scheme.over_relaxed_adaptive, 1.5),
    Column("or-adaptive a=1.8", Scheme.over_relaxed_adaptive, 1.8),
    Column("fast", Scheme.fast),
    Column("fast-adaptive", Scheme.fast_adaptive),
)


def column_config(base: AlgorithmConfig, column: Column) -> AlgorithmConfig:
    "在 base 上替换格式与 α，其余参数不变"
    return base.copy(update={"scheme": column.scheme, "alpha": column.alpha})


class ComparisonRow(BaseModel):
    label: str
    scheme: Scheme
    alpha: float
    iterations: int
    converged: bool
    objective: float
    max_abs_r: float
    wall_ms: float

    @classmethod
    def from_report(cls, column: Column, report: SolveReport) -> "ComparisonRow":
        return cls(
            label=column.label,
            scheme=column.scheme,
            alpha=column.alpha,
            iterations=report.iterations,
            converged=report.converged,
            objective=report.objective,
            max_abs_r=report.max_abs_r,
            wall_ms=report.wall_ms,
        )


class ComparisonTable(BaseModel):
    """rows[0] 为基准列"""

    case: str
    rows: list[ComparisonRow]

    @property
    def baseline(self) -> ComparisonRow:
        return self.rows[0]

    def speedup(self, row: ComparisonRow) -> float:
        "(1 - it / it_vanilla)·100"
        return (1 - row.iterations / self.baseline.iterations) * 100

    def fastest(self) -> ComparisonRow | None:
        "迭代次数最少的已收敛列，同数时取靠前的列"
        converged = [r for r in self.rows if r.converged]
        if not converged:
            return None
        return min(converged, key=lambda r: r.iterations)
