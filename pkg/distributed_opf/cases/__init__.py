"随包附带的算例文件"
from pathlib import Path

CASES_DIR = Path(__file__).parent


def bundled_case_path(name: str) -> Path:
    """`bundled_case_path("case5")` 返回附带的 case5.m 路径"""
    path = CASES_DIR / f"{name}.m"
    if not path.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return path
