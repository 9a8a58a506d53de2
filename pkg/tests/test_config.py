"""
Tests cho app.config: parse_config, RunConfig, Settings
"""

import math

import pytest

from app.config import RunConfig, Settings, parse_config
from app.exceptions import ConfigError


class TestParseConfig:
    """Flat key = value document"""

    def test_empty_document_gives_defaults(self):
        cfg = parse_config("")

        assert cfg.n == 32
        assert cfg.T == 0.5
        assert cfg.cfl == 0.5
        assert cfg.scheme == "ETD2"
        assert cfg.p == [1.0, 2.0, 4.0, math.inf]
        assert cfg.s == [0.0, 1.0]
        assert cfg.t_star == 0.25

    def test_comments_and_lists(self):
        text = """
        # F2 sweep
        family = F2
        beta = 0.5
        c = 4, 8, 16
        p = 1, 4/3, inf   # p list
        """
        cfg = parse_config(text)

        assert cfg.family == "F2"
        assert cfg.c == [4.0, 8.0, 16.0]
        assert cfg.p[1] == pytest.approx(4.0 / 3.0)
        assert math.isinf(cfg.p[2])

    def test_odd_grid_rejected(self):
        with pytest.raises(ConfigError, match="'n'") as excinfo:
            parse_config("n = 7")
        assert excinfo.value.key == "n"

    def test_decreasing_c_rejected(self):
        with pytest.raises(ConfigError, match="increasing"):
            parse_config("c = 8, 4")

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="unknown config key: 'viscosity'"):
            parse_config("viscosity = 1e-3")

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("n 32")

    def test_invalid_p(self):
        with pytest.raises(ConfigError, match="'p'"):
            parse_config("p = 3")

    def test_beta_range(self):
        with pytest.raises(ConfigError, match="'beta'"):
            parse_config("beta = 1.0")

    def test_overrides_win(self):
        cfg = parse_config("n = 16", overrides={"n": "8", "system": "mhd"})
        assert cfg.n == 8
        assert cfg.system == "mhd"

    def test_t_star_inside_horizon(self):
        with pytest.raises(ConfigError):
            parse_config("T = 0.2\nt_star = 0.3")


class TestRunConfig:
    """Conversions sang StepperConfig / SweepPlan và serialize ngược"""

    def test_sweep_plan(self):
        cfg = parse_config("family = F4\nalpha = 0.5\nn = 8\nc = 2, 4, 8")
        plan = cfg.sweep_plan()

        assert plan.family.label == "F4(alpha=0.5)"
        assert plan.c_values == [2.0, 4.0, 8.0]
        assert plan.stepper.t_end == cfg.T
        assert plan.n == 8

    def test_to_text_round_trip(self):
        cfg = parse_config("family = F2\nbeta = 0.25\np = 1, 4/3, 2, inf\nc = 4, 8")
        again = parse_config(cfg.to_text())
        assert again == cfg

    def test_high_cfl_accepted(self):
        # cfl > 1 chỉ warning; CFL guard bắt lúc chạy
        assert RunConfig(cfl=10.0).cfl == 10.0


class TestSettings:
    """Settings đọc từ environment"""

    def test_environment_override(self, monkeypatch):
        monkeypatch.setenv("FFT_WORKERS", "4")
        monkeypatch.setenv("OUTPUT_DIR", "/tmp/emhd")
        fresh = Settings()

        assert fresh.FFT_WORKERS == 4
        assert fresh.OUTPUT_DIR == "/tmp/emhd"

    def test_defaults(self, monkeypatch):
        for key in ("FFT_WORKERS", "SWEEP_WORKERS", "ORACLE_GRID"):
            monkeypatch.delenv(key, raising=False)
        fresh = Settings(_env_file=None)

        assert fresh.SWEEP_WORKERS == 1
        assert fresh.ORACLE_GRID == 4
