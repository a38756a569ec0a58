"""Distributed OPF 的命令行接口，主要是从 interfaces 导入

其它接口：

+ interfaces: Python 接口
"""
import asyncio
import csv
import logging
import sys
from argparse import ArgumentParser
from pathlib import Path

from pydantic import ValidationError

from ..cases import bundled_case_path
from ..config import AlgorithmConfig, Balancing, Scheme
from ..engine import SolveReport
from ..engine.state import TRACE_FIELDS
from ..exceptions import (
    CannotLoadConfig,
    CaseFormatError,
    CaseValidationError,
    NetworkError,
    NotConverged,
    SolverError,
)
from . import OPFExperiment

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_SOLVER = 3

SCHEME_FLAGS = {
    "vanilla": Scheme.vanilla,
    "or": Scheme.over_relaxed,
    "fast": Scheme.fast,
    "adaptive": Scheme.adaptive,
    "or-adaptive": Scheme.over_relaxed_adaptive,
    "fast-adaptive": Scheme.fast_adaptive,
}
COMPARE_ALL = "compare-all"

# 命令行参数名 => AlgorithmConfig 字段
OVERRIDES = {
    "alpha": "alpha",
    "eta": "eta",
    "rho_power": "rho_power",
    "rho_voltage": "rho_voltage",
    "eps_abs": "eps_abs",
    "eps_rel": "eps_rel",
    "kf": "k_f",
    "max_iter": "max_iter",
    "threads": "threads",
    "balancing": "balancing",
}


def cli_parser():
    p = ArgumentParser(
        prog="dopf",
        usage="dopf --case CASE [--scheme SCHEME] [options]",
        description="用分布式 ADMM 求解 SOCP 松弛的最优潮流，并比较各种迭代格式",
    )
    p.add_argument("--case", required=True, help="算例文件（.m 或结构化文本），也可以是附带算例名")
    p.add_argument(
        "--scheme",
        choices=[*SCHEME_FLAGS, COMPARE_ALL],
        default=None,
        help="迭代格式，compare-all 运行全部对比列",
    )
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--rho-power", type=float, default=None)
    p.add_argument("--rho-voltage", type=float, default=None)
    p.add_argument("--eps-abs", type=float, default=None)
    p.add_argument("--eps-rel", type=float, default=None)
    p.add_argument("--kf", type=int, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--balancing", choices=[b.value for b in Balancing], default=None)
    p.add_argument("--restart-to-previous", action="store_true", help="重启时回退到上一步")
    p.add_argument(
        "--adapt-only-on-restart", action="store_true", help="fast-adaptive 只在重启时调整 ρ"
    )
    p.add_argument("--trace", default=None, help="逐次迭代的 CSV 输出路径")
    p.add_argument("--report", default=None, help="JSON 报告输出路径")
    p.add_argument("--seed", type=int, default=None, help="保留，求解过程是确定性的")
    p.add_argument("-c", "--config", default=None, help="配置文件路径")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v 为 INFO，-vv 为 DEBUG")
    return p


def setup_logging(verbose: int):
    "根 logger 已有 handler 时（例如被嵌入其它程序）不做任何修改"
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(message)s",
    )


def resolve_case_path(arg: str) -> Path:
    """路径不存在时按附带算例名查找，例如 `case5.m`"""
    path = Path(arg)
    if path.exists():
        return path
    try:
        return bundled_case_path(path.stem)
    except FileNotFoundError:
        raise FileNotFoundError(f"case file {arg!r} not found") from None


def build_config(base: AlgorithmConfig, args) -> AlgorithmConfig:
    """命令行参数逐项覆盖配置文件中的值，并重新校验"""
    values = base.dict()
    for flag, field in OVERRIDES.items():
        v = getattr(args, flag)
        if v is not None:
            values[field] = v
    if args.scheme and args.scheme != COMPARE_ALL:
        values["scheme"] = SCHEME_FLAGS[args.scheme]
    if args.restart_to_previous:
        values["restart_to_previous"] = True
    if args.adapt_only_on_restart:
        values["adapt_only_on_restart"] = True
    return AlgorithmConfig(**values)


def write_trace(path: str, report: SolveReport):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for row in report.trace:
            writer.writerow(row.csv_row())
    logging.info(f"wrote {len(report.trace)} trace rows to {path!r}")


def write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
        f.write("\n")


def run_single(app: OPFExperiment, config: AlgorithmConfig, args) -> int:
    code = EXIT_OK
    try:
        report = app.solve(config)
    except NotConverged as e:
        report = e.report
        code = EXIT_NOT_CONVERGED
    if args.trace:
        write_trace(args.trace, report)
    if args.report:
        write_text(args.report, report.summary_json(indent=2))
    print(app.rfmt.format(report))
    return code


def run_compare_all(app: OPFExperiment, config: AlgorithmConfig, args) -> int:
    if args.trace:
        logging.warning("--trace is ignored by compare-all")
    table = asyncio.run(app.compare_all(config))
    if args.report:
        write_text(args.report, table.json(indent=2))
    print(app.rfmt.format(table))
    failed = [row.label for row in table.rows if not row.converged]
    if failed:
        logging.warning(f"not converged: {', '.join(failed)}")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = cli_parser().parse_args(argv)
    setup_logging(args.verbose)
    if args.seed is not None:
        logging.debug(f"seed {args.seed} ignored, the solver is deterministic")

    app = OPFExperiment()
    try:
        app.update_config(args.config)
        config = build_config(app.config.algorithm, args)
        app.load_case(resolve_case_path(args.case))
    except (
        CannotLoadConfig,
        CaseFormatError,
        CaseValidationError,
        NetworkError,
        ValidationError,
        FileNotFoundError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        if isinstance(e, CaseValidationError):
            for issue in e.issues:
                print(f"  {issue}", file=sys.stderr)
        return EXIT_INPUT

    try:
        if args.scheme == COMPARE_ALL:
            return run_compare_all(app, config, args)
        return run_single(app, config, args)
    except SolverError as e:
        print(f"solver error in {e.component}: {e}", file=sys.stderr)
        return EXIT_SOLVER


def cli_main():
    sys.exit(main())


if __name__ == "__main__":
    cli_main()
