"""
Persistence: checkpoints, result tables, run log

Checkpoint:
    dòng magic  "EMHD-CHECKPOINT 1 <header length, 10 digits>\\n"
    header      các dòng "key = value" (n, c, t, seed, system, fields, endianness, ...)
    payload     mỗi field 3·n³ complex128 little-endian (real/imag xen kẽ)

Tables (CSV + summary.json) được ghi với thứ tự cột và thứ tự dòng cố định để hai lần
chạy cùng input cho ra file giống hệt nhau.
"""

import csv
import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from app.config import settings
from app.dynamics import EMState, LinState, MHDState
from app.exceptions import CheckpointTruncatedError, CheckpointVersionError, StorageError
from app.models import EnergyLedger, RunLog, SeriesRow, SweepRow, ThresholdReport, parse_p
from app.spectral import GridSpec, SpectralField

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "EMHD-CHECKPOINT"
CHECKPOINT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<c16")

SERIES_COLUMNS = ("t", "label", "value")
SWEEP_COLUMNS = ("family", "c", "p", "quantity", "value")
RATES_COLUMNS = ("family", "quantity", "p", "slope", "stderr", "r2", "predicted", "verdict", "match")
ENERGY_COLUMNS = ("system", "t", "kinetic", "electric", "magnetic", "dissipation", "residual")

State = Union[EMState, MHDState, LinState]

_LAYOUT = {
    "em": (EMState, ("u", "E", "B")),
    "mhd": (MHDState, ("u_bar", "B_bar")),
    "linear": (LinState, ("E_L", "B_L")),
}


# ================================================================
# CHECKPOINTS
# ================================================================

def _system_of(state: State) -> str:
    for system, (klass, _) in _LAYOUT.items():
        if isinstance(state, klass):
            return system
    raise ValueError(f"cannot checkpoint {type(state).__name__}")


def write_checkpoint(state: State, path: str, seed: Optional[int] = None) -> str:
    """
    Ghi state ra checkpoint nhị phân (header đọc được bằng mắt)

    Raises:
        StorageError: lỗi I/O, kèm path
    """
    system = _system_of(state)
    names = _LAYOUT[system][1]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "endianness": "little",
        "dtype": "complex128",
        "system": system,
        "n": state.grid.n,
        "c": repr(float(getattr(state, "c", 0.0))),
        "t": repr(float(state.t)),
        "seed": "" if seed is None else seed,
        "fields": ",".join(names),
        "field_bytes": int(np.prod(state.grid.vector_shape)) * PAYLOAD_DTYPE.itemsize,
    }
    header_text = "".join(f"{k} = {v}\n" for k, v in header.items()).encode("utf-8")
    magic = f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {len(header_text):010d}\n".encode("ascii")

    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(magic)
            fh.write(header_text)
            for name in names:
                fh.write(np.ascontiguousarray(getattr(state, name).data, dtype=PAYLOAD_DTYPE).tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint ({exc.strerror or exc})", path=path) from exc

    logger.info("Checkpoint written: %s (%s, t=%.6g)", path, system, state.t)
    return path


def read_checkpoint(path: str) -> State:
    """
    Đọc checkpoint; round trip với write_checkpoint là bit-identical

    Raises:
        CheckpointVersionError: magic/version/endianness lạ hoặc header hỏng
        CheckpointTruncatedError: payload ngắn hơn header khai báo
        StorageError: lỗi I/O
    """
    try:
        with open(path, "rb") as fh:
            magic = fh.readline()
            parts = magic.decode("ascii", errors="replace").split()
            if len(parts) != 3 or parts[0] != CHECKPOINT_MAGIC:
                raise CheckpointVersionError("not an EMHD checkpoint", path=path)
            if parts[1] != str(CHECKPOINT_VERSION):
                raise CheckpointVersionError(f"unsupported checkpoint version {parts[1]!r}", path=path)
            try:
                header_length = int(parts[2])
            except ValueError:
                raise CheckpointVersionError(f"invalid header length {parts[2]!r}", path=path) from None
            header_bytes = fh.read(header_length)
            payload = fh.read()
    except OSError as exc:
        if isinstance(exc, StorageError):
            raise
        raise StorageError(f"cannot read checkpoint ({exc.strerror or exc})", path=path) from exc

    header: Dict[str, str] = {}
    for line in header_bytes.decode("utf-8", errors="replace").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()

    if header.get("format_version") != str(CHECKPOINT_VERSION) or header.get("endianness") != "little":
        raise CheckpointVersionError("unsupported checkpoint header", path=path)
    system = header.get("system")
    if system not in _LAYOUT:
        raise CheckpointVersionError(f"unknown system {system!r}", path=path)

    klass, names = _LAYOUT[system]
    try:
        grid = GridSpec(n=int(header["n"]))
        numbers = {key: float(header[key]) for key in (("t",) if system == "mhd" else ("t", "c"))}
    except (KeyError, ValueError) as exc:
        raise CheckpointVersionError(f"malformed checkpoint header ({exc})", path=path) from exc
    field_bytes = int(np.prod(grid.vector_shape)) * PAYLOAD_DTYPE.itemsize
    if len(payload) < field_bytes * len(names):
        raise CheckpointTruncatedError(
            f"payload has {len(payload)} bytes, expected {field_bytes * len(names)}", path=path
        )

    fields = {}
    for i, name in enumerate(names):
        chunk = payload[i * field_bytes:(i + 1) * field_bytes]
        data = np.frombuffer(chunk, dtype=PAYLOAD_DTYPE).reshape(grid.vector_shape)
        fields[name] = SpectralField(grid=grid, data=data, solenoidal=True)

    return klass(**numbers, **fields)


# ================================================================
# TABLES
# ================================================================

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: str, columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise StorageError(f"cannot write table ({exc.strerror or exc})", path=path) from exc
    return path


def _ensure_dir(directory: str) -> None:
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create directory ({exc.strerror or exc})", path=directory) from exc


def write_tables(directory: str, series: Sequence[SeriesRow] = (), sweep: Sequence[SweepRow] = (),
                 rates: Optional[ThresholdReport] = None, summary_extra: Optional[Dict[str, BaseModel]] = None) -> List[str]:
    """
    Ghi series.csv, sweep.csv, rates.csv và summary.json

    Thứ tự dòng: series theo (label, t); sweep theo (family, quantity, p, c); rates theo (family, quantity, p).
    Returns:
        danh sách path đã ghi
    """
    _ensure_dir(directory)
    series_sorted = sorted(series, key=lambda r: (r.label, r.t))
    sweep_sorted = sorted(sweep, key=lambda r: (r.family, r.quantity, _p_key(r.p), r.c))

    paths = [
        _write_csv(os.path.join(directory, "series.csv"), SERIES_COLUMNS,
                   [(r.t, r.label, r.value) for r in series_sorted]),
        _write_csv(os.path.join(directory, "sweep.csv"), SWEEP_COLUMNS,
                   [(r.family, r.c, r.p, r.quantity, r.value) for r in sweep_sorted]),
    ]
    paths += write_rates(directory, rates or ThresholdReport(), summary_extra)
    logger.info("Tables written to %s", directory)
    return paths


def write_rates(directory: str, rates: ThresholdReport,
                summary_extra: Optional[Dict[str, BaseModel]] = None) -> List[str]:
    """rates.csv + summary.json (summary mirror rates.csv, thêm các report phụ)"""
    _ensure_dir(directory)
    rates_sorted = sorted(rates.rows, key=lambda r: (r.family, r.quantity, _p_key(r.p)))
    rates_path = _write_csv(
        os.path.join(directory, "rates.csv"), RATES_COLUMNS,
        [(r.family, r.quantity, r.p, r.slope, r.stderr, r.r2, r.predicted, r.verdict, r.match) for r in rates_sorted],
    )

    summary = {
        "all_match": rates.all_match,
        "rates": [r.model_dump(mode="json") for r in rates_sorted],
    }
    for key, model in sorted((summary_extra or {}).items()):
        summary[key] = model.model_dump(mode="json") if model is not None else None

    summary_path = os.path.join(directory, "summary.json")
    try:
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise StorageError(f"cannot write summary ({exc.strerror or exc})", path=summary_path) from exc
    return [rates_path, summary_path]


def _p_key(label: str) -> float:
    return -1.0 if label == "-" else parse_p(label)


def read_sweep_table(path: str) -> List[SweepRow]:
    """Đọc lại sweep.csv"""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
                raise ValueError(f"{path}: expected columns {', '.join(SWEEP_COLUMNS)}")
            return [
                SweepRow(family=r["family"], c=float(r["c"]), p=r["p"], quantity=r["quantity"], value=float(r["value"]))
                for r in reader
            ]
    except OSError as exc:
        raise StorageError(f"cannot read table ({exc.strerror or exc})", path=path) from exc


def write_energy_table(path: str, ledgers: Dict[str, EnergyLedger]) -> str:
    """energy.csv: một khối dòng cho mỗi system (em, mhd)"""
    rows = []
    for system in sorted(ledgers):
        ledger = ledgers[system]
        rows += [
            (system, t, k, e, m, d, r)
            for t, k, e, m, d, r in zip(ledger.times, ledger.kinetic, ledger.electric, ledger.magnetic,
                                        ledger.dissipation, ledger.residual)
        ]
    directory = os.path.dirname(path)
    if directory:
        _ensure_dir(directory)
    return _write_csv(path, ENERGY_COLUMNS, rows)


# ================================================================
# RUN LOG (JSONL)
# ================================================================

def log_run(record: RunLog, path: Optional[str] = None) -> bool:
    """
    Append một dòng JSON vào LOG_FILE

    Lỗi ghi log không làm hỏng run: chỉ warning, trả về False.
    """
    path = path or settings.LOG_FILE
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(record.model_dump_json() + "\n")
        return True
    except OSError as exc:
        logger.warning("Failed to write run log %s: %s", path, exc)
        return False
