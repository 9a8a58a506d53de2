"""
Pydantic Models cho EMHD simulator
Định nghĩa cấu trúc dữ liệu cho config, sweep plan, kết quả fit, report, logging
"""

import logging
import math
from datetime import datetime
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)


# ================================================================
# CONSTANTS
# ================================================================

SchemeName = Literal["ETD2", "ETD-RK4-Lawson"]
FamilyKind = Literal["F1", "F2", "F3", "F4"]
Verdict = Literal["converge", "plateau", "diverge"]

ALLOWED_P = (1.0, 4.0 / 3.0, 2.0, 4.0, math.inf)
VERDICT_THRESHOLD = 0.15

_P_LABELS = {1.0: "1", 4.0 / 3.0: "4/3", 2.0: "2", 4.0: "4", math.inf: "inf"}


def p_label(p: float) -> str:
    """Tên hiển thị của p: 1, 4/3, 2, 4, inf"""
    for value, label in _P_LABELS.items():
        if math.isclose(p, value, rel_tol=1e-12) or (math.isinf(p) and math.isinf(value)):
            return label
    return repr(float(p))


def parse_p(text: str) -> float:
    """Ngược lại của p_label; chấp nhận 'inf', '4/3', số thực"""
    token = text.strip().lower()
    if token in ("inf", "infinity", "∞"):
        return math.inf
    if "/" in token:
        num, den = token.split("/", 1)
        return float(num) / float(den)
    return float(token)


# ================================================================
# STEPPER / PHYSICAL PARAMETERS
# ================================================================

class StepperConfig(BaseModel):
    """
    Cấu hình time stepping

    Attributes:
        scheme: ETD2 (default) hoặc ETD-RK4-Lawson
        cfl: Courant target, ổn định trong (0, 1]
        dt_max: dt lớn nhất cho phép
        t_end: thời điểm kết thúc
    """
    model_config = ConfigDict(frozen=True)

    scheme: SchemeName = Field(default="ETD2", description="Exponential integrator")
    cfl: float = Field(default=0.5, gt=0, description="Courant target")
    dt_max: float = Field(default=0.02, gt=0, description="Upper bound on dt")
    t_end: float = Field(default=0.5, gt=0, description="Final time T")

    @field_validator("cfl")
    @classmethod
    def warn_unstable_cfl(cls, v: float) -> float:
        if v > 1.0:
            logger.warning("cfl=%s is outside the stable range (0, 1]", v)
        return v


# ================================================================
# INITIAL-DATA FAMILIES / SWEEP PLAN
# ================================================================

class Family(BaseModel):
    """
    Họ initial data cho c-sweep

    Kinds:
        F1: E₀ᶜ cố định (γ = 1)
        F2: ‖E₀ᶜ‖ ~ c^{-(1-β)}, β ∈ [0, 1)
        F3: well-prepared, E₀ᶜ = Ē(0)/c
        F4: u₀ᶜ = u₀ + c^{-α} δu, α > 0 (E well-prepared)
    """
    model_config = ConfigDict(frozen=True)

    kind: FamilyKind = Field(default="F1")
    beta: float = Field(default=0.5, ge=0, lt=1, description="Decay parameter of F2")
    alpha: float = Field(default=1.0, gt=0, description="Fluid perturbation exponent of F4")
    seed: int = Field(default=7, ge=0)
    amplitude: float = Field(default=1.0, gt=0)
    decay: float = Field(default=6.0, gt=3.5, description="Spectral decay exponent (> 7/2)")

    @property
    def label(self) -> str:
        if self.kind == "F2":
            return f"F2(beta={self.beta:g})"
        if self.kind == "F4":
            return f"F4(alpha={self.alpha:g})"
        return self.kind

    @classmethod
    def from_label(cls, label: str) -> "Family":
        """Ngược lại của label: 'F1', 'F2(beta=0.5)', 'F4(alpha=1)'"""
        text = label.strip()
        kind = text[:2]
        if kind not in ("F1", "F2", "F3", "F4"):
            raise ValueError(f"unknown family label {label!r}")
        values: Dict[str, float] = {}
        if "(" in text:
            body = text[text.index("(") + 1:text.rindex(")")]
            for part in body.split(","):
                key, value = part.split("=", 1)
                values[key.strip()] = float(value)
        return cls(kind=kind, **values)

    def electric_scale(self, c: float) -> float:
        """Hệ số nhân của hướng E cố định (chỉ dùng cho F1, F2)"""
        if self.kind == "F2":
            return c ** (-(1.0 - self.beta))
        return 1.0


class SweepPlan(BaseModel):
    """Một c-sweep: family, c values, p values, grid, T, s values"""
    model_config = ConfigDict(frozen=True)

    family: Family = Field(default_factory=Family)
    c_values: List[float] = Field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    c0: float = Field(default=1.0, gt=0)
    p_values: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, math.inf])
    s_values: List[float] = Field(default_factory=lambda: [0.0, 1.0])
    n: int = Field(default=32, ge=4, le=256)
    stepper: StepperConfig = Field(default_factory=StepperConfig)
    t_star: float = Field(default=0.25, gt=0)
    m_index: int = Field(default=3, ge=3)

    @field_validator("c_values")
    @classmethod
    def check_c_values(cls, v: List[float]) -> List[float]:
        if len(v) < 1:
            raise ValueError("c list must not be empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("c values must be strictly increasing")
        return v

    @field_validator("p_values")
    @classmethod
    def check_p_values(cls, v: List[float]) -> List[float]:
        for p in v:
            if not any(math.isclose(p, q) or (math.isinf(p) and math.isinf(q)) for q in ALLOWED_P):
                raise ValueError(f"p={p} not in {{1, 4/3, 2, 4, inf}}")
        return v

    @model_validator(mode="after")
    def check_plan(self) -> "SweepPlan":
        if self.n % 2:
            raise ValueError(f"n={self.n} must be even")
        if min(self.c_values) < self.c0:
            raise ValueError(f"all c values must be >= c0={self.c0}")
        if self.t_star > self.stepper.t_end:
            raise ValueError("t_star must lie in (0, T]")
        return self

    @property
    def T(self) -> float:
        return self.stepper.t_end


# ================================================================
# FITS / REPORTS
# ================================================================

class RateFit(BaseModel):
    """
    Log-log fit value ~ C·c^slope

    Attributes:
        quantity: nhãn đại lượng
        pairs: các cặp (c, value) đã dùng (value > 0)
        slope, intercept: hệ số trên log c / log value
        stderr: standard error của slope
        r2: hệ số xác định
    """
    quantity: str
    pairs: List[Tuple[float, float]]
    slope: float
    intercept: float
    stderr: float = Field(..., ge=0)
    r2: float


class ThresholdRow(BaseModel):
    """
    Một dòng của bảng verdict

    kind:
        rate: exponent dự đoán là sharp, so verdict với verdict
        bound: chỉ có upper bound, match khi slope ≤ bound + threshold
    """
    family: str
    quantity: str
    p: str
    slope: float
    stderr: float
    r2: float
    kind: Literal["rate", "bound"] = "rate"
    predicted_exponent: Optional[float] = None
    predicted: Optional[Verdict] = None
    verdict: Verdict
    match: Optional[bool] = None


class ThresholdReport(BaseModel):
    """Bảng verdict cho mọi (family, quantity, p)"""
    rows: List[ThresholdRow] = Field(default_factory=list)

    @property
    def all_match(self) -> bool:
        return all(row.match is not False for row in self.rows)

    def find(self, quantity: str, p: str) -> Optional[ThresholdRow]:
        return next((r for r in self.rows if r.quantity == quantity and r.p == p), None)


# ================================================================
# TABLE ROWS
# ================================================================

class SeriesRow(BaseModel):
    """series.csv: (t, label, value)"""
    t: float
    label: str
    value: float


class SweepRow(BaseModel):
    """sweep.csv: (family, c, p, quantity, value)"""
    family: str
    c: float
    p: str
    quantity: str
    value: float


class InitialGap(BaseModel):
    """Các thành phần của ℰ₀ᶜ = du0 + dB0 + (dE0_H1 + 1)/c²"""
    c: float = Field(..., gt=0)
    du0: float = Field(..., ge=0)
    dB0: float = Field(..., ge=0)
    dE0_H1: float = Field(..., ge=0)
    epsilon0: float = Field(..., ge=0)


class EnergyLedger(BaseModel):
    """
    Energy ledger theo thời gian

    residual(t) = total(t) + dissipation(t) − total(0)
    """
    times: List[float]
    kinetic: List[float]
    electric: List[float]
    magnetic: List[float]
    dissipation: List[float]
    residual: List[float]

    @property
    def total(self) -> List[float]:
        return [k + e + m for k, e, m in zip(self.kinetic, self.electric, self.magnetic)]

    def relative_residual(self) -> float:
        """max |residual| / total(0); 0 khi total(0) = 0"""
        total0 = self.total[0] if self.times else 0.0
        worst = max((abs(r) for r in self.residual), default=0.0)
        return worst / total0 if total0 > 0 else worst


class EnergyFlowRow(BaseModel):
    c: float
    electric_energy: float = Field(..., description="‖Eᶜ(t*)‖²")
    jump_defect: float = Field(..., description="|∫‖jᶜ‖² − ½‖E₀ᶜ‖² − ∫‖j̄‖²| at t*")


class EnergyFlowReport(BaseModel):
    t_star: float
    rows: List[EnergyFlowRow] = Field(default_factory=list)
    electric_decreasing: bool = False
    defect_decreasing: bool = False


class SharpnessReport(BaseModel):
    """Slopes của linear system so với dự đoán"""
    family: str
    electric: List[ThresholdRow] = Field(default_factory=list)
    magnetic_slope: float = 0.0
    magnetic_bracket: Tuple[float, float] = (-2.0, -1.0)
    magnetic_in_bracket: bool = False


class ErrorSmallnessReport(BaseModel):
    family: str
    slope: float
    epsilon0_slope: float
    within_tolerance: bool


# ================================================================
# ORACLE / LOGGING / ERRORS
# ================================================================

class OracleCheck(BaseModel):
    """Kết quả một oracle check"""
    name: str
    error: float = Field(..., ge=0)
    tolerance: float = Field(..., gt=0)

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


class RunLog(BaseModel):
    """
    Một dòng log JSONL cho mỗi lần chạy

    Attributes:
        command: subcommand (simulate, sweep, ...)
        system: em | mhd | linear | sweep
        status: ok | error
    """
    command: str
    system: Optional[str] = None
    c: Optional[float] = None
    n: Optional[int] = None
    dt: Optional[float] = None
    steps: Optional[int] = None
    wall_time_s: float = Field(default=0.0, ge=0)
    status: str = "ok"
    error: Optional[str] = None
    extra: Dict[str, float] = Field(default_factory=dict)
    timestamp: datetime = Field(default_factory=datetime.now)

    class Config:
        json_schema_extra = {
            "example": {
                "command": "simulate",
                "system": "em",
                "c": 8.0,
                "n": 32,
                "dt": 0.02,
                "steps": 25,
                "wall_time_s": 1.3,
                "status": "ok",
            }
        }


class ErrorResponse(BaseModel):
    """Payload lỗi in ra bởi command line"""
    error: str
    detail: Optional[str] = None
    exit_code: int = 1
    timestamp: datetime = Field(default_factory=datetime.now)
