"""
Tests cho persistence: checkpoint, CSV tables, summary.json, run log
"""

import json

import numpy as np
import pytest

from app.dynamics import LinState
from app.exceptions import CheckpointTruncatedError, CheckpointVersionError, StorageError, exit_code_for
from app.models import EnergyLedger, RunLog, SeriesRow, SweepRow, ThresholdReport, ThresholdRow
from app.storage import (
    ENERGY_COLUMNS,
    log_run,
    read_checkpoint,
    read_sweep_table,
    write_checkpoint,
    write_energy_table,
    write_rates,
    write_tables,
)


def _sweep_rows():
    return [
        SweepRow(family="F1", c=8.0, p="inf", quantity="E", value=1.0),
        SweepRow(family="F1", c=4.0, p="inf", quantity="E", value=1.0),
        SweepRow(family="F1", c=4.0, p="4/3", quantity="E", value=0.5),
        SweepRow(family="F1", c=4.0, p="-", quantity="epsilon0", value=0.25),
    ]


def _rates():
    return ThresholdReport(rows=[
        ThresholdRow(family="F1", quantity="E", p="inf", slope=0.01, stderr=0.0, r2=1.0,
                     predicted_exponent=0.0, predicted="plateau", verdict="plateau", match=True),
    ])


class TestCheckpoint:
    """Round trip, version, truncation"""

    def test_em_round_trip_bit_identical(self, em_state, tmp_path):
        path = write_checkpoint(em_state, str(tmp_path / "state.ckpt"), seed=7)
        back = read_checkpoint(path)

        assert back.c == em_state.c and back.t == em_state.t
        for a, b in zip(back.fields(), em_state.fields()):
            assert a.data.tobytes() == b.data.tobytes()

    def test_mhd_and_linear(self, mhd_state, random_fields, tmp_path):
        mhd = read_checkpoint(write_checkpoint(mhd_state, str(tmp_path / "mhd.ckpt")))
        assert np.array_equal(mhd.B_bar.data, mhd_state.B_bar.data)

        lin = LinState(t=0.125, c=3.0, E_L=random_fields[1], B_L=random_fields[2])
        back = read_checkpoint(write_checkpoint(lin, str(tmp_path / "lin.ckpt")))
        assert isinstance(back, LinState)
        assert back.t == 0.125 and back.c == 3.0

    def test_header_is_readable(self, em_state, tmp_path):
        path = write_checkpoint(em_state, str(tmp_path / "state.ckpt"), seed=7)
        head = open(path, "rb").read(400).decode("utf-8", errors="replace")
        assert head.startswith("EMHD-CHECKPOINT 1 ")
        assert "seed = 7" in head and "system = em" in head

    def test_truncated(self, em_state, tmp_path):
        path = write_checkpoint(em_state, str(tmp_path / "state.ckpt"))
        raw = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(raw[:-16])

        with pytest.raises(CheckpointTruncatedError) as excinfo:
            read_checkpoint(path)
        assert excinfo.value.path == path
        assert exit_code_for(excinfo.value) == 3

    def test_unknown_version(self, em_state, tmp_path):
        path = write_checkpoint(em_state, str(tmp_path / "state.ckpt"))
        raw = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(raw.replace(b"EMHD-CHECKPOINT 1", b"EMHD-CHECKPOINT 9", 1))

        with pytest.raises(CheckpointVersionError, match="version"):
            read_checkpoint(path)

    def test_corrupt_header_length(self, em_state, tmp_path):
        path = write_checkpoint(em_state, str(tmp_path / "state.ckpt"))
        lines = open(path, "rb").read().split(b"\n", 1)
        with open(path, "wb") as fh:
            fh.write(b"EMHD-CHECKPOINT 1 abc\n" + lines[1])

        with pytest.raises(CheckpointVersionError, match="header length") as excinfo:
            read_checkpoint(path)
        assert exit_code_for(excinfo.value) == 3

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_text("hello\n")
        with pytest.raises(CheckpointVersionError):
            read_checkpoint(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError) as excinfo:
            read_checkpoint(str(tmp_path / "missing.ckpt"))
        assert "missing.ckpt" in str(excinfo.value)


class TestTables:
    """CSV tables và summary.json"""

    def test_empty_tables_have_headers(self, tmp_path):
        paths = write_tables(str(tmp_path / "out"))
        names = sorted(p.split("/")[-1] for p in paths)

        assert names == ["rates.csv", "series.csv", "summary.json", "sweep.csv"]
        assert (tmp_path / "out" / "series.csv").read_text() == "t,label,value\n"
        assert (tmp_path / "out" / "sweep.csv").read_text() == "family,c,p,quantity,value\n"
        assert json.loads((tmp_path / "out" / "summary.json").read_text()) == {"all_match": True, "rates": []}

    def test_deterministic(self, tmp_path):
        series = [SeriesRow(t=0.1, label="E@c=4", value=2.0), SeriesRow(t=0.0, label="E@c=4", value=3.0)]
        for name in ("a", "b"):
            write_tables(str(tmp_path / name), series=series, sweep=_sweep_rows(), rates=_rates())
        for table in ("series.csv", "sweep.csv", "rates.csv", "summary.json"):
            assert (tmp_path / "a" / table).read_bytes() == (tmp_path / "b" / table).read_bytes()

    def test_row_order(self, tmp_path):
        write_tables(str(tmp_path), sweep=_sweep_rows())
        lines = (tmp_path / "sweep.csv").read_text().splitlines()[1:]
        assert lines == [
            "F1,4.0,4/3,E,0.5",
            "F1,4.0,inf,E,1.0",
            "F1,8.0,inf,E,1.0",
            "F1,4.0,-,epsilon0,0.25",
        ]

    def test_sweep_table_round_trip(self, tmp_path):
        write_tables(str(tmp_path), sweep=_sweep_rows())
        rows = read_sweep_table(str(tmp_path / "sweep.csv"))
        assert sorted(r.c for r in rows if r.quantity == "E") == [4.0, 4.0, 8.0]

    def test_sweep_table_wrong_columns(self, tmp_path):
        path = tmp_path / "sweep.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="expected columns"):
            read_sweep_table(str(path))

    def test_rates_and_summary(self, tmp_path):
        write_rates(str(tmp_path), _rates(), summary_extra={"extra": None})
        rates = (tmp_path / "rates.csv").read_text().splitlines()
        summary = json.loads((tmp_path / "summary.json").read_text())

        assert rates[1] == "F1,E,inf,0.01,0.0,1.0,plateau,plateau,true"
        assert summary["all_match"] is True
        assert summary["rates"][0]["verdict"] == "plateau"
        assert summary["extra"] is None

    def test_energy_table(self, tmp_path):
        ledger = EnergyLedger(times=[0.0, 0.1], kinetic=[1.0, 0.9], electric=[0.0, 0.0],
                              magnetic=[1.0, 1.0], dissipation=[0.0, 0.1], residual=[0.0, 0.0])
        path = write_energy_table(str(tmp_path / "audit" / "energy.csv"), {"mhd": ledger, "em": ledger})
        lines = open(path).read().splitlines()

        assert lines[0] == ",".join(ENERGY_COLUMNS)
        assert [line.split(",")[0] for line in lines[1:]] == ["em", "em", "mhd", "mhd"]


class TestRunLog:
    """JSONL run log"""

    def test_append(self, tmp_path):
        path = str(tmp_path / "logs" / "runs.jsonl")
        assert log_run(RunLog(command="oracle"), path)
        assert log_run(RunLog(command="simulate", system="em", c=8.0), path)

        lines = open(path).read().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[1])["system"] == "em"

    def test_failure_is_not_fatal(self, tmp_path):
        # path là thư mục: không ghi được
        assert log_run(RunLog(command="oracle"), str(tmp_path)) is False
