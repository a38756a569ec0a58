import logging

from .config import FmtConfig
from .engine import SolveReport
from .experiments import ComparisonTable


class ReportFormatter:
    _fmt: FmtConfig

    def __init__(self) -> None:
        self._fmt = FmtConfig()

    def config(self, fmt: FmtConfig | None = None):
        if fmt:
            logging.debug("updated ReportFormatter's config.")
            self._fmt = fmt

    def format(self, item: SolveReport | ComparisonTable) -> str:
        "通用的格式化方法，会判断传入类型并具体分配实际方法"
        if isinstance(item, SolveReport):
            return self.fmt_summary(item)
        elif isinstance(item, ComparisonTable):
            return self.fmt_table(item)
        raise TypeError(f"cannot format {type(item).__name__}")

    def fmt_summary(self, report: SolveReport) -> str:
        return self._fmt.summary.format(
            scheme=report.scheme.value,
            status="converged" if report.converged else "not converged",
            iterations=report.iterations,
            objective=report.objective,
            max_abs_r=report.max_abs_r,
        )

    def fmt_table(self, table: ComparisonTable) -> str:
        lines = [
            self._fmt.table_header.format(
                label=table.case,
                iterations="iterations",
                converged="converged",
                objective="objective",
                speedup="speed-up %",
            )
        ]
        for row in table.rows:
            lines.append(
                self._fmt.table_row.format(
                    label=row.label,
                    iterations=row.iterations,
                    converged="yes" if row.converged else "no",
                    objective=row.objective,
                    speedup=table.speedup(row),
                )
            )
        best = table.fastest()
        if best is not None:
            lines.append(self.fmt_speedup(table))
        return "\n".join(lines)

    def fmt_speedup(self, table: ComparisonTable) -> str:
        "最快的已收敛列相对基准的加速比"
        best = table.fastest()
        if best is None:
            return ""
        return self._fmt.speedup.format(
            label=best.label,
            speedup=table.speedup(best),
            max_abs_r=best.max_abs_r,
        )
