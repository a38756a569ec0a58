"""读取 MATPOWER 格式（以及等价的逐行文本格式）的算例

+ `parse_matpower` : 解析 `.m` 文件文本
+ `parse_structured` : 解析逐行文本格式，每行 `<section> <numbers…>`
+ `write_matpower` / `write_structured` : 内部写出器，供回读测试
+ `read_case` : 按后缀选择解析器
+ `validate_case` / `require_valid` : 检查记录之间的引用与约束
"""
import logging
import math
import re
from pathlib import Path

from ..exceptions import (
    CaseValidationError,
    MalformedMatrix,
    MissingSection,
    NonNumericToken,
    UnsupportedCostModel,
)
from .records import (
    BranchRecord,
    BusRecord,
    CaseData,
    CostRecord,
    GenRecord,
    ValidationIssue,
)

SECTIONS = ("bus", "gen", "branch", "gencost")
# 每个矩阵至少需要的列数
MIN_COLUMNS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}

_RE_BASE_MVA = re.compile(r"(?:\bmpc\.)?\bbaseMVA\s*=\s*([^;\n]+)")
_RE_MATRIX = re.compile(
    r"(?:\bmpc\.)?\b(bus|gen|branch|gencost)\s*=\s*\[(.*?)\]", re.DOTALL
)
_RE_NAME = re.compile(r"function\s+\w+\s*=\s*(\w+)")
_RE_ROW_SPLIT = re.compile(r"[;\n]")
_RE_TOKEN_SPLIT = re.compile(r"[\s,]+")


def _strip_comments(text: str, marks: str = "%") -> str:
    lines = []
    for line in text.splitlines():
        for m in marks:
            pos = line.find(m)
            if pos >= 0:
                line = line[:pos]
        lines.append(line)
    return "\n".join(lines)


def _number(token: str, section: str, row: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise NonNumericToken("non-numeric token", section, row, token) from None


def _split_row(row: str, section: str, index: int) -> list[float]:
    tokens = [t for t in _RE_TOKEN_SPLIT.split(row.strip()) if t]
    return [_number(t, section, index) for t in tokens]


def _check_arity(section: str, rows: list[list[float]]):
    """列数不足，或同一矩阵内列数不一致（gencost 除外）都视为格式错误"""
    need = MIN_COLUMNS[section]
    width = len(rows[0]) if rows else need
    for i, row in enumerate(rows):
        if len(row) < need:
            raise MalformedMatrix("too few columns", section, i, len(row), need)
        if section != "gencost" and len(row) != width:
            raise MalformedMatrix("inconsistent row width", section, i, len(row), width)


def _bus(row: list[float]) -> BusRecord:
    return BusRecord(
        id=int(row[0]),
        bus_type=int(row[1]),
        p_demand=row[2],
        q_demand=row[3],
        g_shunt=row[4],
        b_shunt=row[5],
        base_kv=row[9],
        v_max=row[11],
        v_min=row[12],
    )


def _gen(row: list[float]) -> GenRecord:
    return GenRecord(
        bus=int(row[0]),
        pg=row[1],
        qg=row[2],
        q_max=row[3],
        q_min=row[4],
        vg=row[5],
        m_base=row[6],
        status=row[7] > 0,
        p_max=row[8],
        p_min=row[9],
    )


def _branch(row: list[float]) -> BranchRecord:
    # 旧版 MATPOWER 没有 angmin/angmax 两列，视为不限制
    ang_min = row[11] if len(row) > 11 else -360.0
    ang_max = row[12] if len(row) > 12 else 360.0
    return BranchRecord(
        from_bus=int(row[0]),
        to_bus=int(row[1]),
        r=row[2],
        x=row[3],
        b_charge=row[4],
        rate_a=row[5],
        tap=row[8] if row[8] != 0 else 1.0,
        shift=math.radians(row[9]),
        status=row[10] > 0,
        ang_min=ang_min,
        ang_max=ang_max,
    )


def _gencost(row: list[float], index: int) -> CostRecord:
    model = int(row[0])
    if model != 2:
        raise UnsupportedCostModel("only polynomial cost (model 2) is supported", index, model)
    n = int(row[3])
    coeffs = row[4 : 4 + n]
    if len(coeffs) < n:
        raise MalformedMatrix("too few cost coefficients", "gencost", index, len(coeffs), n)
    # 系数按最高次在前排列，只接受二次及以下
    higher, low = coeffs[:-3], coeffs[-3:]
    if any(c != 0 for c in higher):
        raise UnsupportedCostModel("polynomial degree above 2", index, n - 1)
    low = [0.0] * (3 - len(low)) + list(low)
    return CostRecord(
        model=model, startup=row[1], shutdown=row[2], c2=low[0], c1=low[1], c0=low[2]
    )


def _build_case(name: str, base_mva: float, rows: dict[str, list[list[float]]]) -> CaseData:
    for section in SECTIONS:
        _check_arity(section, rows[section])
    return CaseData(
        name=name,
        base_mva=base_mva,
        buses=[_bus(r) for r in rows["bus"]],
        generators=[_gen(r) for r in rows["gen"]],
        branches=[_branch(r) for r in rows["branch"]],
        gencosts=[_gencost(r, i) for i, r in enumerate(rows["gencost"])],
    )


def parse_matpower(text: str) -> CaseData:
    """解析 MATPOWER `.m` 文本，注释以 `%` 开头，矩阵行以 `;` 或换行结束，
    多余的列被忽略"""
    m = _RE_NAME.search(text)
    name = m[1] if m else ""
    body = _strip_comments(text, "%")

    m = _RE_BASE_MVA.search(body)
    if m is None:
        raise MissingSection("missing section", "baseMVA")
    base_mva = _number(m[1].strip(), "baseMVA", 0)

    rows: dict[str, list[list[float]]] = {}
    for m in _RE_MATRIX.finditer(body):
        section = m[1]
        if section in rows:
            logging.warning(f"matrix {section!r} assigned twice, keep the first one")
            continue
        parts = [p for p in _RE_ROW_SPLIT.split(m[2]) if p.strip()]
        rows[section] = [_split_row(p, section, i) for i, p in enumerate(parts)]
    for section in SECTIONS:
        if section not in rows:
            raise MissingSection("missing section", section)

    case = _build_case(name, base_mva, rows)
    logging.debug(
        f"parsed matpower case {name!r}: {len(case.buses)} buses, "
        f"{len(case.generators)} gens, {len(case.branches)} branches"
    )
    return case


def parse_structured(text: str) -> CaseData:
    """逐行文本格式：

        baseMVA 100
        bus 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9
        gen 1 0 0 100 -100 1 100 1 200 0
        ...

    列的含义与 MATPOWER 完全相同，`%` 和 `#` 均为注释"""
    body = _strip_comments(text, "%#")
    base_mva = None
    name = ""
    rows: dict[str, list[list[float]]] = {}
    for line in body.splitlines():
        tokens = [t for t in _RE_TOKEN_SPLIT.split(line.strip().rstrip(";")) if t]
        if not tokens:
            continue
        head, rest = tokens[0], tokens[1:]
        if head == "name":
            name = " ".join(rest)
        elif head == "baseMVA":
            if len(rest) != 1:
                raise MalformedMatrix("baseMVA takes one value", "baseMVA", 0, len(rest), 1)
            base_mva = _number(rest[0], "baseMVA", 0)
        elif head in SECTIONS:
            section_rows = rows.setdefault(head, [])
            section_rows.append([_number(t, head, len(section_rows)) for t in rest])
        else:
            raise MalformedMatrix("unknown section", head)
    if base_mva is None:
        raise MissingSection("missing section", "baseMVA")
    for section in SECTIONS:
        if section not in rows:
            raise MissingSection("missing section", section)
    return _build_case(name, base_mva, rows)


def _fmt(v: float | int | bool) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _case_rows(case: CaseData) -> dict[str, list[list[float]]]:
    return {
        "bus": [
            [b.id, b.bus_type, b.p_demand, b.q_demand, b.g_shunt, b.b_shunt,
             1, 1, 0, b.base_kv, 1, b.v_max, b.v_min]
            for b in case.buses
        ],
        "gen": [
            [g.bus, g.pg, g.qg, g.q_max, g.q_min, g.vg, g.m_base, g.status,
             g.p_max, g.p_min]
            for g in case.generators
        ],
        "branch": [
            [br.from_bus, br.to_bus, br.r, br.x, br.b_charge, br.rate_a,
             br.rate_a, br.rate_a, br.tap, math.degrees(br.shift), br.status,
             br.ang_min, br.ang_max]
            for br in case.branches
        ],
        "gencost": [
            [c.model, c.startup, c.shutdown, 3, c.c2, c.c1, c.c0]
            for c in case.gencosts
        ],
    }


def write_matpower(case: CaseData) -> str:
    name = case.name or "case"
    lines = [
        f"function mpc = {name}",
        "mpc.version = '2';",
        f"mpc.baseMVA = {_fmt(case.base_mva)};",
    ]
    for section, rows in _case_rows(case).items():
        lines.append(f"mpc.{section} = [")
        lines.extend("\t" + "\t".join(_fmt(v) for v in row) + ";" for row in rows)
        lines.append("];")
    return "\n".join(lines) + "\n"


def write_structured(case: CaseData) -> str:
    lines = []
    if case.name:
        lines.append(f"name {case.name}")
    lines.append(f"baseMVA {_fmt(case.base_mva)}")
    for section, rows in _case_rows(case).items():
        lines.extend(f"{section} " + " ".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def read_case(path: str | Path) -> CaseData:
    """`.m` 按 MATPOWER 解析，其它后缀按逐行文本格式解析"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"case file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".m":
        case = parse_matpower(text)
    else:
        case = parse_structured(text)
    if not case.name:
        case.name = path.stem
    logging.info(f"read case {case.name!r} from {path.as_posix()!r}")
    return case


def validate_case(case: CaseData) -> list[ValidationIssue]:
    """返回发现的全部问题，没有问题时返回空列表；问题是数据而不是异常"""
    issues: list[ValidationIssue] = []

    def issue(kind: str, index: int | None, rule: str, fatal: bool = True):
        issues.append(ValidationIssue(kind=kind, index=index, rule=rule, fatal=fatal))

    if not case.base_mva > 0:
        issue("case", None, "base_mva not positive")

    bus_ids = set()
    for i, b in enumerate(case.buses):
        if b.id in bus_ids:
            issue("bus", i, "duplicate bus id")
        bus_ids.add(b.id)
        if not b.v_min > 0:
            issue("bus", i, "non-positive voltage lower bound")
        if b.v_min > b.v_max:
            issue("bus", i, "voltage bounds inverted")

    for i, g in enumerate(case.generators):
        if g.bus not in bus_ids:
            issue("gen", i, "dangling generator bus reference", g.status)
        if g.p_min > g.p_max:
            issue("gen", i, "active power bounds inverted", g.status)
        if g.q_min > g.q_max:
            issue("gen", i, "reactive power bounds inverted", g.status)

    for i, br in enumerate(case.branches):
        if br.from_bus not in bus_ids or br.to_bus not in bus_ids:
            issue("branch", i, "dangling branch bus reference", br.status)
        if br.r**2 + br.x**2 == 0:
            issue("branch", i, "zero impedance branch", br.status)
        if br.ang_min > br.ang_max:
            issue("branch", i, "angle bounds inverted", br.status)
        if br.tap <= 0:
            issue("branch", i, "non-positive tap ratio", br.status)
        if br.rate_a < 0:
            issue("branch", i, "negative thermal limit", br.status)

    if len(case.gencosts) != len(case.generators):
        issue("gencost", None, "gencost count differs from generator count")
    for i, c in enumerate(case.gencosts):
        if c.c2 < 0:
            in_service = i < len(case.generators) and case.generators[i].status
            issue("gencost", i, "negative quadratic cost coefficient", in_service)

    if not any(g.status for g in case.generators):
        issue("case", None, "no in-service generator")

    for i in issues:
        if i.fatal:
            logging.error(f"validation: {i}")
        else:
            logging.warning(f"validation (out of service): {i}")
    return issues


def require_valid(case: CaseData):
    "存在致命问题时抛出 CaseValidationError"
    fatal = [i for i in validate_case(case) if i.fatal]
    if fatal:
        raise CaseValidationError(fatal)
