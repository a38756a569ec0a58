import logging
from enum import Enum
from os import getenv
from pathlib import Path

import toml
from pydantic import BaseModel, Extra, root_validator, validator

from .exceptions import CannotLoadConfig

ENV_CONFIG_KEY = "distributed_opf_config"
CONFIG_PATH_PREFIX = "distributed_opf"
DEFAULT_CONFIG_PATH = "distributed_opf.toml"


class Scheme(str, Enum):
    "迭代格式：基本、过松弛、带重启加速、自适应及其组合"
    vanilla = "vanilla"
    over_relaxed = "over_relaxed"
    fast = "fast"
    adaptive = "adaptive"
    over_relaxed_adaptive = "over_relaxed_adaptive"
    fast_adaptive = "fast_adaptive"

    @property
    def is_over_relaxed(self) -> bool:
        return self in (Scheme.over_relaxed, Scheme.over_relaxed_adaptive)

    @property
    def is_fast(self) -> bool:
        return self in (Scheme.fast, Scheme.fast_adaptive)

    @property
    def is_adaptive(self) -> bool:
        return self in (
            Scheme.adaptive,
            Scheme.over_relaxed_adaptive,
            Scheme.fast_adaptive,
        )


class Balancing(str, Enum):
    "local: 逐约束的残差平衡；global: 用全局范数统一调整所有 ρ"
    local = "local"
    global_ = "global"


class BranchSolverConfig(BaseModel, extra=Extra.ignore):
    "支路子问题的对数障碍 Newton 法参数"
    mu_start: float = 1.0
    mu_final: float = 1e-10
    mu_factor: float = 10.0
    armijo_beta: float = 0.5
    armijo_slope: float = 1e-4
    newton_tol: float = 1e-10
    max_newton: int = 100
    # 最后一个障碍阶段结束时 Newton decrement 超过此值视为不收敛
    stall_tol: float = 1e-6

    @root_validator(skip_on_failure=True)
    def _check(cls, values):
        if not 0 < values["mu_final"] <= values["mu_start"]:
            raise ValueError("need 0 < mu_final <= mu_start")
        if values["mu_factor"] <= 1:
            raise ValueError("mu_factor must be > 1")
        if not 0 < values["armijo_beta"] < 1:
            raise ValueError("armijo_beta must lie in (0, 1)")
        if not 0 < values["armijo_slope"] < 0.5:
            raise ValueError("armijo_slope must lie in (0, 0.5)")
        return values


class AlgorithmConfig(BaseModel, extra=Extra.ignore):
    """ADMM 的所有可调参数"""

    scheme: Scheme = Scheme.vanilla
    # 松弛参数 α，只在 over_relaxed* 格式中生效
    alpha: float = 1.0
    # 重启参数 η
    eta: float = 0.999
    # 有功/无功一致性约束与电压一致性约束的初始 ρ
    rho_power: float = 10.0
    rho_voltage: float = 100.0
    tau_incr: float = 1.0
    tau_decr: float = 0.5
    mu_incr: float = 10.0
    mu_decr: float = 100.0
    k_f: int = 2
    eps_abs: float = 1e-6
    eps_rel: float = 5e-5
    max_iter: int = 10000
    rho_min: float = 1e-4
    rho_max: float = 1e8
    threads: int = 1
    # fast 格式的初始组合残差 c，None 表示 +inf
    combined_residual_init: float | None = None
    # 重启时回退到上一步 (z^k, λ^k)，而不是当前步
    restart_to_previous: bool = False
    # fast & adaptive 叠加时，仅在重启的迭代上调整 ρ
    adapt_only_on_restart: bool = False
    balancing: Balancing = Balancing.local

    @validator("alpha")
    def _alpha(cls, v):
        if not 0 < v < 2:
            raise ValueError("alpha must lie in (0, 2)")
        return v

    @validator("eta")
    def _eta(cls, v):
        if not 0 < v < 1:
            raise ValueError("eta must lie in (0, 1)")
        return v

    @validator("rho_power", "rho_voltage", "tau_incr", "tau_decr", "eps_abs")
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @validator("eps_rel")
    def _non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @validator("mu_incr", "mu_decr")
    def _above_one(cls, v):
        if v <= 1:
            raise ValueError("must be > 1")
        return v

    @validator("k_f", "max_iter", "threads")
    def _at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @root_validator(skip_on_failure=True)
    def _rho_bounds(cls, values):
        lo, hi = values["rho_min"], values["rho_max"]
        if not 0 < lo <= hi:
            raise ValueError("need 0 < rho_min <= rho_max")
        for key in ("rho_power", "rho_voltage"):
            if not lo <= values[key] <= hi:
                raise ValueError(f"{key} outside [rho_min, rho_max]")
        return values

    @property
    def effective_alpha(self) -> float:
        "非 over_relaxed 格式一律按 α = 1 处理"
        return self.alpha if self.scheme.is_over_relaxed else 1.0


class FmtConfig(BaseModel, extra=Extra.ignore):
    "设置格式化模板"
    summary: str = (
        "{scheme}: {status} in {iterations} iterations, "
        "objective {objective:.6f} $/h, max|r| {max_abs_r:.3e}"
    )
    table_header: str = (
        "{label:<22s}{iterations:>12s}{converged:>11s}{objective:>16s}{speedup:>12s}"
    )
    table_row: str = (
        "{label:<22s}{iterations:>12d}{converged:>11s}{objective:>16.4f}{speedup:>12.2f}"
    )
    speedup: str = "Speed-up of {label} vs vanilla: {speedup:.2f}% (max|r| {max_abs_r:.2e})"


class DistributedOPFConfig(BaseModel, extra=Extra.ignore):
    """配置文件中 [distributed_opf] 表的内容"""

    algorithm: AlgorithmConfig = AlgorithmConfig()
    branch_solver: BranchSolverConfig = BranchSolverConfig()
    fmt: FmtConfig = FmtConfig()


def load_config(config_path: str | None = None) -> DistributedOPFConfig:
    """加载配置
    1. 首先使用参数给出的路径
    2. 如果上一条为空，则尝试从环境变量 DISTRIBUTED_OPF_CONFIG 中加载
    3. 如果上一条为空，则尝试从工作目录的 `distributed_opf.toml` 中加载
    4. 如果该文件也不存在，使用内置默认值
    文件存在但无法解析时抛出 CannotLoadConfig 异常
    """
    # 空字符串与未给出等价
    config_path = config_path or None
    if config_path is not None:
        config_path = Path(config_path).absolute().as_posix()
        logging.info(f"read config_path from argument {config_path!r}")

    if config_path is None:
        config_path = getenv(ENV_CONFIG_KEY.upper()) or None
        if config_path:
            config_path = Path(config_path).absolute().as_posix()
            logging.info(f"read config_path from os env {config_path!r}")

    if config_path is None:
        default = Path(DEFAULT_CONFIG_PATH).absolute()
        if default.exists():
            config_path = default.as_posix()
            logging.info(f"read config_path from default {config_path!r}")

    if config_path is None:
        logging.info("no config file found, use built-in defaults")
        return DistributedOPFConfig()

    try:
        config = toml.load(config_path)
        return DistributedOPFConfig.parse_obj(config.get(CONFIG_PATH_PREFIX, {}))
    except (OSError, toml.TomlDecodeError, ValueError) as e:
        logging.error(f"cannot load config {config_path!r}: {e}")
        raise CannotLoadConfig("cannot load config", config_path) from e
