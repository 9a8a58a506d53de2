"""
Fixtures dùng chung: lưới nhỏ, field ngẫu nhiên solenoidal, state Euler–Maxwell/MHD
"""

import numpy as np
import pytest

from app.config import settings
from app.dynamics import EMState, MHDState
from app.models import StepperConfig
from app.spectral import GridSpec, SpectralField, from_function, random_divfree_field


@pytest.fixture(autouse=True)
def isolated_outputs(tmp_path, monkeypatch):
    """Mọi output/log của test nằm trong tmp_path"""
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path / "results"))
    monkeypatch.setattr(settings, "LOG_FILE", str(tmp_path / "logs" / "run_logs.jsonl"))


@pytest.fixture
def grid8() -> GridSpec:
    return GridSpec(n=8)


@pytest.fixture
def grid4() -> GridSpec:
    return GridSpec(n=4)


@pytest.fixture
def random_fields(grid8):
    """(u, E, B) ngẫu nhiên, band-limited, divergence-free"""
    return tuple(random_divfree_field(grid8, seed) for seed in (1, 2, 3))


@pytest.fixture
def em_state(random_fields) -> EMState:
    u, E, B = random_fields
    return EMState(t=0.0, c=4.0, u=u, E=E, B=B)


@pytest.fixture
def mhd_state(random_fields) -> MHDState:
    u, _, B = random_fields
    return MHDState(t=0.0, u_bar=u, B_bar=B)


@pytest.fixture
def shear_field(grid8) -> SpectralField:
    """(0, sin x, 0)"""
    return from_function(grid8, lambda x, y, z: (0.0 * x, np.sin(x), 0.0 * x))


@pytest.fixture
def stepper() -> StepperConfig:
    return StepperConfig(scheme="ETD2", cfl=0.5, dt_max=0.01, t_end=0.05)
