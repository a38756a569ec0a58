from pydantic import BaseModel


class BusRecord(BaseModel):
    "母线，功率单位 MW/MVAr，电压 p.u."
    id: int
    bus_type: int = 1
    p_demand: float
    q_demand: float
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    base_kv: float = 0.0
    v_max: float
    v_min: float


class GenRecord(BaseModel):
    bus: int
    p_max: float
    p_min: float
    q_max: float
    q_min: float
    status: bool = True
    # 以下仅为原样写回，计算中不使用（mBase 一律以系统基准代替）
    pg: float = 0.0
    qg: float = 0.0
    vg: float = 1.0
    m_base: float = 100.0


class BranchRecord(BaseModel):
    """支路（线路或变压器）

    + tap: 变比幅值，文件中的 0 已在解析时换成 1
    + shift: 相移，解析时已由角度换算为弧度
    + ang_min/ang_max: 相角差上下限，单位为角度
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    rate_a: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    status: bool = True
    ang_min: float = -360.0
    ang_max: float = 360.0


class CostRecord(BaseModel):
    "多项式成本 c2·P² + c1·P + c0，P 单位 MW"
    model: int = 2
    startup: float = 0.0
    shutdown: float = 0.0
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0


class CaseData(BaseModel):
    name: str = ""
    base_mva: float
    buses: list[BusRecord]
    generators: list[GenRecord]
    branches: list[BranchRecord]
    gencosts: list[CostRecord]


class ValidationIssue(BaseModel):
    """校验发现的问题

    + kind: case / bus / gen / branch / gencost
    + index: 记录在文件中的序号（从 0 开始），case 级问题为 None
    + rule: 违反的规则
    + fatal: 停运记录上的问题不致命
    """

    kind: str
    index: int | None = None
    rule: str
    fatal: bool = True

    def __str__(self) -> str:
        where = self.kind if self.index is None else f"{self.kind}[{self.index}]"
        return f"{where}: {self.rule}"
