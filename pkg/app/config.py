"""
Configuration Management cho EMHD simulator

Hai tầng cấu hình:
    - Settings: cấu hình process (thư mục output, log, số thread FFT), load từ .env
    - RunConfig: cấu hình một thí nghiệm, đọc từ file key = value (parse_config)
"""

import logging
import math
import os
from typing import Dict, List, Literal

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from app.exceptions import ConfigError
from app.models import (
    ALLOWED_P,
    Family,
    FamilyKind,
    SchemeName,
    StepperConfig,
    SweepPlan,
    parse_p,
    p_label,
)


class Settings(BaseSettings):
    """
    Configuration Management cho simulator
    Load từ .env file hoặc environment variables
    """

    # ==================== PATHS ====================
    OUTPUT_DIR: str = "results"
    LOG_FILE: str = "logs/run_logs.jsonl"

    # ==================== COMPUTE ====================
    # Số thread cho scipy.fft (workers=); -1 = tất cả CPU
    FFT_WORKERS: int = 1

    # Số c-jobs chạy song song trong một sweep
    SWEEP_WORKERS: int = 1

    # ==================== ORACLE ====================
    # Grid cho brute-force DFT oracle (O(n⁶), giữ nhỏ)
    ORACLE_GRID: int = 4

    # ==================== LOGGING ====================
    LOG_LEVEL: str = "INFO"  # DEBUG, INFO, WARNING, ERROR

    class Config:
        # Load từ file .env trong root directory
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True

        # Extra fields sẽ bị ignore (không raise error)
        extra = "ignore"


# ==================== SINGLETON INSTANCE ====================
settings = Settings()


# ==================== HELPER FUNCTIONS ====================
def ensure_directories():
    """Tạo các thư mục cần thiết nếu chưa tồn tại"""
    directories = [
        settings.OUTPUT_DIR,
        os.path.dirname(settings.LOG_FILE),
    ]

    for directory in directories:
        if directory and not os.path.exists(directory):
            os.makedirs(directory, exist_ok=True)
            logging.getLogger(__name__).info("Created directory: %s", directory)


def setup_logging(level: str = None):
    """Cấu hình root logger theo LOG_LEVEL"""
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def print_config():
    """In ra cấu hình hiện tại (để debug)"""
    print("=" * 60)
    print("CURRENT CONFIGURATION")
    print("=" * 60)

    print("\n PATHS:")
    print(f"  Output Directory: {settings.OUTPUT_DIR}")
    print(f"  Log File: {settings.LOG_FILE}")

    print("\n COMPUTE:")
    print(f"  FFT Workers: {settings.FFT_WORKERS}")
    print(f"  Sweep Workers: {settings.SWEEP_WORKERS}")
    print(f"  Oracle Grid: {settings.ORACLE_GRID}^3")

    print("\n LOGGING:")
    print(f"  Level: {settings.LOG_LEVEL}")

    print("\n" + "=" * 60)


# ================================================================
# RUN CONFIG (flat key = value document)
# ================================================================

class RunConfig(BaseModel):
    """
    Cấu hình một lần chạy / một sweep

    Defaults: n=32, T=0.5, cfl=0.5, scheme=ETD2, p={1,2,4,inf}, s={0,1}, t_star=0.25
    """
    n: int = Field(default=32, ge=4, le=256, description="Modes per axis (even)")
    T: float = Field(default=0.5, gt=0, description="Final time")
    cfl: float = Field(default=0.5, gt=0, description="Courant target")
    dt_max: float = Field(default=0.02, gt=0, description="Upper bound on dt")
    scheme: SchemeName = "ETD2"
    c: List[float] = Field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    c0: float = Field(default=1.0, gt=0)
    family: FamilyKind = "F1"
    beta: float = Field(default=0.5, ge=0, lt=1, description="F2 exponent in [0, 1)")
    alpha: float = Field(default=1.0, gt=0, description="F4 exponent (> 0)")
    seed: int = Field(default=7, ge=0)
    amplitude: float = Field(default=1.0, gt=0)
    decay: float = Field(default=6.0, gt=3.5, description="Spectral decay (> 7/2)")
    p: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, math.inf])
    s: List[float] = Field(default_factory=lambda: [0.0, 1.0])
    t_star: float = Field(default=0.25, gt=0)
    m_index: int = Field(default=3, ge=3)
    system: Literal["em", "mhd", "linear"] = "em"
    output_dir: str = Field(default_factory=lambda: settings.OUTPUT_DIR)

    @field_validator("n")
    @classmethod
    def check_even(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"n must be even (got {v})")
        return v

    @field_validator("c")
    @classmethod
    def check_increasing(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("c list must not be empty")
        if any(x <= 0 for x in v):
            raise ValueError("c values must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("c values must be strictly increasing")
        return v

    @field_validator("p")
    @classmethod
    def check_p(cls, v: List[float]) -> List[float]:
        for p in v:
            if not any(math.isclose(p, q) or (math.isinf(p) and math.isinf(q)) for q in ALLOWED_P):
                raise ValueError(f"p={p_label(p)} not in {{1, 4/3, 2, 4, inf}}")
        return v

    @field_validator("s")
    @classmethod
    def check_s(cls, v: List[float]) -> List[float]:
        for s in v:
            if s not in (0.0, 1.0):
                raise ValueError(f"s={s} not in {{0, 1}}")
        return v

    @model_validator(mode="after")
    def check_ranges(self) -> "RunConfig":
        if min(self.c) < self.c0:
            raise ValueError(f"all c values must be >= c0={self.c0}")
        if self.t_star > self.T:
            raise ValueError(f"t_star must lie in (0, T={self.T}]")
        return self

    # ==================== CONVERSIONS ====================

    def stepper(self) -> StepperConfig:
        return StepperConfig(scheme=self.scheme, cfl=self.cfl, dt_max=self.dt_max, t_end=self.T)

    def family_spec(self) -> Family:
        return Family(
            kind=self.family,
            beta=self.beta,
            alpha=self.alpha,
            seed=self.seed,
            amplitude=self.amplitude,
            decay=self.decay,
        )

    def sweep_plan(self) -> SweepPlan:
        return SweepPlan(
            family=self.family_spec(),
            c_values=list(self.c),
            c0=self.c0,
            p_values=list(self.p),
            s_values=list(self.s),
            n=self.n,
            stepper=self.stepper(),
            t_star=self.t_star,
            m_index=self.m_index,
        )

    def to_text(self) -> str:
        """Serialize ngược lại dạng key = value (để lưu cạnh kết quả)"""
        lines = []
        for key, value in self.model_dump().items():
            if key == "p":
                value = ", ".join(p_label(x) for x in value)
            elif isinstance(value, list):
                value = ", ".join(repr(float(x)) for x in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_LIST_KEYS = {"c", "p", "s"}


def _split_list(raw: str) -> List[str]:
    cleaned = raw.strip().strip("{}[]()")
    return [item for item in cleaned.replace(";", ",").replace(" ", ",").split(",") if item]


def parse_config(text: str, overrides: Dict[str, str] = None) -> RunConfig:
    """
    Đọc document key = value thành RunConfig đã validate

    Args:
        text: nội dung file config (dòng '#' là comment)
        overrides: các cặp key/value ưu tiên hơn file (từ command line)

    Raises:
        ConfigError: unknown key, dòng sai cú pháp, hoặc giá trị ngoài range
    """
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key] = value
    raw.update(overrides or {})

    known = set(RunConfig.model_fields)
    values: Dict[str, object] = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key!r}", key=key)
        if key == "p":
            try:
                values[key] = [parse_p(item) for item in _split_list(value)]
            except ValueError:
                raise ConfigError(f"invalid value for 'p': {value!r} (expected list from 1, 4/3, 2, 4, inf)", key=key)
        elif key in _LIST_KEYS:
            values[key] = _split_list(value)
        else:
            values[key] = value

    try:
        return RunConfig(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = str(first["loc"][0]) if first["loc"] else None
        raise ConfigError(f"invalid value for {key!r}: {first['msg']}", key=key) from exc


if __name__ == "__main__":
    # Test configuration
    ensure_directories()
    print_config()
