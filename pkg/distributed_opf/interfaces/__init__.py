"""Distributed OPF 的对外接口

其它接口：

+ cli: 命令行接口

此接口导出一个 OPFExperiment 对象，其成员函数返回 对象 而非文本，
格式化为文本是 cli 的工作。
"""
import asyncio
import logging
from pathlib import Path
from typing import Callable

from ..case_io import read_case, require_valid, validate_case
from ..case_io.records import CaseData
from ..config import AlgorithmConfig, DistributedOPFConfig, load_config
from ..engine import ADMMEngine, SolveReport, TraceRow
from ..experiments import COLUMNS, ComparisonRow, ComparisonTable, column_config
from ..fmt import ReportFormatter
from ..network import ConsensusLayout, Network, build_layout, build_network


class OPFExperiment:
    """面向 Python 的接口

    + `update_config` : 重新加载配置文件
    + `load_case` : 读取、校验算例并建立网络和布局
    + `solve` : 以给定（或配置文件中的）参数求解一次
    + `solve_async`(async) : 在线程中求解，不因未收敛抛出异常
    + `compare_all`(async) : 并发运行所有对比列，返回 ComparisonTable
    """

    config: DistributedOPFConfig
    rfmt: ReportFormatter
    case: CaseData | None
    net: Network | None
    layout: ConsensusLayout | None

    def __init__(self) -> None:
        self.config = DistributedOPFConfig()
        self.rfmt = ReportFormatter()
        self.case = None
        self.net = None
        self.layout = None

    def update_config(self, path: str | None = None):
        self.config = load_config(path)
        self.rfmt.config(fmt=self.config.fmt)

    def load_case(self, source: str | Path | CaseData) -> Network:
        """source 可以是文件路径或已解析的 CaseData；
        有致命问题时抛出 CaseValidationError"""
        case = source if isinstance(source, CaseData) else read_case(source)
        for issue in validate_case(case):
            if not issue.fatal:
                logging.warning(f"{case.name}: {issue}")
        require_valid(case)
        self.case = case
        self.net = build_network(case)
        self.layout = build_layout(self.net)
        logging.info(
            f"loaded case {case.name!r}: {len(case.buses)} buses, "
            f"{len(case.generators)} generators, {len(case.branches)} branches"
        )
        return self.net

    def _require_case(self) -> tuple[Network, ConsensusLayout]:
        if self.net is None or self.layout is None:
            raise RuntimeError("no case loaded, call load_case first")
        return self.net, self.layout

    def solve(
        self,
        config: AlgorithmConfig | None = None,
        callback: Callable[[TraceRow], None] | None = None,
        raise_on_failure: bool = True,
    ) -> SolveReport:
        net, layout = self._require_case()
        config = config or self.config.algorithm
        with ADMMEngine(net, layout, config, self.config.branch_solver) as engine:
            return engine.run(callback=callback, raise_on_failure=raise_on_failure)

    async def solve_async(self, config: AlgorithmConfig | None = None) -> SolveReport:
        return await asyncio.to_thread(self.solve, config, None, False)

    async def compare_all(self, base: AlgorithmConfig | None = None) -> ComparisonTable:
        """各列在独立线程中运行，结果按列的固定顺序排列"""
        self._require_case()
        base = base or self.config.algorithm
        reports = await asyncio.gather(
            *(self.solve_async(column_config(base, c)) for c in COLUMNS)
        )
        rows = [ComparisonRow.from_report(c, r) for c, r in zip(COLUMNS, reports)]
        return ComparisonTable(case=self.case.name, rows=rows)
