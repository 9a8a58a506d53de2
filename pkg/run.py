"""
EMHD - Main Entry Point

Command line cho Euler–Maxwell / MHD simulator và c-sweep harness.

Usage:
    python run.py simulate --config exp.cfg              # Chạy một system (em | mhd | linear)
    python run.py simulate --set system=mhd --set n=16   # Override từng key
    python run.py sweep --config exp.cfg                 # c-sweep, ghi series/sweep/rates/summary
    python run.py rates --sweep results/sweep.csv        # Fit lại rates từ sweep.csv có sẵn
    python run.py audit-energy --config exp.cfg          # Energy ledger EM + MHD -> energy.csv
    python run.py oracle                                 # Brute-force self-check trên lưới 4³

Exit codes: 0 ok, 1 validation, 2 numerical blow-up, 3 I/O
"""

import argparse
import os
import sys
import time
from typing import Dict, List, Optional, Sequence

# Ensure project root is in path
PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, PROJECT_ROOT)

from app.config import RunConfig, parse_config, settings, setup_logging  # noqa: E402
from app.exceptions import ConfigError, OracleFailure, StorageError, exit_code_for  # noqa: E402
from app.models import ErrorResponse, RunLog, SeriesRow  # noqa: E402


class ArgumentParser(argparse.ArgumentParser):
    """argparse không gọi sys.exit khi lỗi cú pháp: raise ConfigError (exit 1)"""

    def error(self, message):
        raise ConfigError(message)


# ================================================================
# HELPERS
# ================================================================

def _parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_config(args) -> RunConfig:
    """Đọc --config (nếu có) rồi áp các --set key=value"""
    text = ""
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise StorageError(f"cannot read config ({exc.strerror or exc})", path=args.config) from exc
    overrides = _parse_overrides(getattr(args, "set", None))
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    return parse_config(text, overrides)


def _write_config_copy(cfg: RunConfig) -> None:
    path = os.path.join(cfg.output_dir, "config.txt")
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(cfg.to_text())
    except OSError as exc:
        raise StorageError(f"cannot write config copy ({exc.strerror or exc})", path=path) from exc


def _norm_observer(rows: List[SeriesRow], labels: Sequence[str]):
    from app.spectral import l2_norm

    def observe(state) -> None:
        for label, field in zip(labels, state.fields()):
            rows.append(SeriesRow(t=state.t, label=label, value=l2_norm(field)))

    return observe


# ================================================================
# COMMANDS
# ================================================================

def run_simulate(cfg: RunConfig, record: RunLog) -> None:
    """Chạy một system tại c đầu tiên của list, ghi final.ckpt + series.csv"""
    from app.dynamics import LinState, MHDState, compute_ebar
    from app.experiments import base_fields, initial_em_state, mhd_reference
    from app.storage import write_checkpoint, write_tables
    from app.timestepping import choose_dt, integrate_em, integrate_linear, integrate_mhd, plan_time_grid

    stepper = cfg.stepper()
    plan = cfg.sweep_plan()
    c = cfg.c[0]
    print(f"Simulating {cfg.system} (n={cfg.n}, T={cfg.T:g}, c={c:g}, scheme={cfg.scheme})")
    print("-" * 50)

    rows: List[SeriesRow] = []
    fields = base_fields(_grid(cfg), plan.family)
    mhd0 = MHDState(t=0.0, u_bar=fields.u0, B_bar=fields.B0)

    if cfg.system == "mhd":
        dt, steps = plan_time_grid(cfg.T, choose_dt(mhd0, stepper))
        traj = integrate_mhd(mhd0, stepper, dt, steps, observer=_norm_observer(rows, ("u_bar", "B_bar")))
        record.c = None
    elif cfg.system == "em":
        em0 = initial_em_state(plan.family, fields, compute_ebar(mhd0), c)
        dt, steps = plan_time_grid(cfg.T, choose_dt(em0, stepper))
        traj = integrate_em(em0, stepper, dt, steps, observer=_norm_observer(rows, ("u", "E", "B")))
    else:
        ref = mhd_reference(plan)
        em0 = initial_em_state(plan.family, fields, ref.ebar0, c)
        dt, steps = ref.dt, ref.steps
        traj = integrate_linear(LinState.initial(em0.E, c), ref.history.at, stepper, dt, steps,
                                observer=_norm_observer(rows, ("E_L", "B_L")))

    record.dt, record.steps = dt, steps
    ckpt = write_checkpoint(traj.final, os.path.join(cfg.output_dir, "final.ckpt"), seed=cfg.seed)
    write_tables(cfg.output_dir, series=rows)
    print(f"  dt={dt:.4g} steps={steps}")
    print(f"  Checkpoint: {ckpt}")
    print(f"  Series: {os.path.join(cfg.output_dir, 'series.csv')}")


def _grid(cfg: RunConfig):
    from app.spectral import GridSpec
    return GridSpec(n=cfg.n)


def run_sweep_command(cfg: RunConfig, record: RunLog) -> None:
    """c-sweep đầy đủ; ghi series.csv, sweep.csv, rates.csv, summary.json, config.txt"""
    from app.experiments import run_sweep, series_rows
    from app.storage import write_tables

    plan = cfg.sweep_plan()
    print(f"Sweep {plan.family.label}: c={', '.join(f'{c:g}' for c in plan.c_values)} (n={cfg.n}, T={cfg.T:g})")
    print("-" * 50)

    result = run_sweep(plan)
    extra = {
        "energy_flow": result.energy_flow,
        "electric_decay": result.electric_decay,
        "sharpness": result.sharpness,
        "smallness": result.smallness,
    }
    write_tables(cfg.output_dir, series=series_rows(result.results), sweep=result.rows,
                 rates=result.thresholds, summary_extra=extra)
    _write_config_copy(cfg)

    for row in result.thresholds.rows:
        mark = "✅" if row.match is not False else "❌"
        predicted = row.predicted or (f"<= {row.predicted_exponent:.2f}" if row.predicted_exponent is not None else "-")
        print(f"  {row.quantity:<12} p={row.p:<4} slope={row.slope:+.3f} {row.verdict:<9} predicted={predicted} {mark}")

    record.dt = result.results[0].dt if result.results else None
    record.steps = result.results[0].steps if result.results else None
    record.extra = {f"wall_time_c={r.c:g}": r.wall_time_s for r in result.results}
    print(f"\n  Results: {cfg.output_dir} (all_match={result.thresholds.all_match})")


def run_rates(sweep_path: str, out_dir: Optional[str]) -> None:
    """Fit lại rates.csv + summary.json từ sweep.csv"""
    from app.experiments import classify_thresholds
    from app.storage import read_sweep_table, write_rates

    rows = read_sweep_table(sweep_path)
    report = classify_thresholds(rows)
    directory = out_dir or os.path.dirname(os.path.abspath(sweep_path))
    write_rates(directory, report)
    print(f"  {len(report.rows)} fits written to {directory} (all_match={report.all_match})")


def run_audit_energy(cfg: RunConfig, record: RunLog) -> None:
    """Energy ledger của Euler–Maxwell (c đầu tiên) và MHD trên cùng lưới dt"""
    from app.diagnostics import EMEnergyRecorder, MHDEnergyRecorder, energy_audit, mhd_energy_audit
    from app.dynamics import MHDState, compute_ebar
    from app.experiments import base_fields, initial_em_state
    from app.storage import write_energy_table
    from app.timestepping import choose_dt, integrate_em, integrate_mhd, plan_time_grid

    stepper = cfg.stepper()
    family = cfg.family_spec()
    c = cfg.c[0]
    fields = base_fields(_grid(cfg), family)
    mhd0 = MHDState(t=0.0, u_bar=fields.u0, B_bar=fields.B0)
    em0 = initial_em_state(family, fields, compute_ebar(mhd0), c)
    dt, steps = plan_time_grid(cfg.T, min(choose_dt(em0, stepper), choose_dt(mhd0, stepper)))

    em_recorder = EMEnergyRecorder(em0)
    mhd_recorder = MHDEnergyRecorder()
    integrate_em(em0, stepper, dt, steps, observer=em_recorder)
    integrate_mhd(mhd0, stepper, dt, steps, observer=mhd_recorder)
    ledgers = {"em": energy_audit(em_recorder.samples), "mhd": mhd_energy_audit(mhd_recorder.samples)}

    path = write_energy_table(os.path.join(cfg.output_dir, "energy.csv"), ledgers)
    record.dt, record.steps = dt, steps
    for system, ledger in ledgers.items():
        residual = ledger.relative_residual()
        record.extra[f"{system}_relative_residual"] = residual
        print(f"  {system:<4} relative residual: {residual:.3e}")
    print(f"  Ledger: {path}")


def run_oracle(n: Optional[int]) -> None:
    """In từng oracle check; có check hỏng thì OracleFailure (exit 1)"""
    from app.oracle import run_oracle_suite

    grid = n or settings.ORACLE_GRID
    print(f"Running oracle checks on {grid}^3 grid...")
    print("-" * 50)
    checks = run_oracle_suite(grid)
    for check in checks:
        mark = "✅" if check.passed else "❌"
        print(f"  {check.name}: {check.error:.2e} (tol {check.tolerance:.0e}) {mark}")
    failed = [check.name for check in checks if not check.passed]
    print("-" * 50)
    if failed:
        raise OracleFailure(f"{len(failed)} oracle check(s) failed: {', '.join(failed)}")
    print("✅ All oracle checks passed!")


# ================================================================
# ENTRY POINT
# ================================================================

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="run.py",
        description="EMHD - Euler-Maxwell / MHD simulator and c-sweep harness",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run.py simulate --set system=em --set c=8
  python run.py sweep --config experiments/f1.cfg --out results/f1
  python run.py rates --sweep results/f1/sweep.csv
  python run.py audit-energy --set n=32 --set c=8
  python run.py oracle
        """,
    )
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    sub.required = True

    for name in ("simulate", "sweep", "audit-energy"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="key = value config file")
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override a config key")
        cmd.add_argument("--out", default=None, help="Output directory (overrides output_dir)")

    rates = sub.add_parser("rates")
    rates.add_argument("--sweep", required=True, help="Path to sweep.csv")
    rates.add_argument("--out", default=None, help="Output directory (default: next to sweep.csv)")

    oracle = sub.add_parser("oracle")
    oracle.add_argument("--grid", type=int, default=None, help="Grid size (default: ORACLE_GRID)")
    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Chạy một subcommand; trả về exit code thay vì sys.exit"""
    started = time.perf_counter()
    record = RunLog(command="unknown")
    try:
        args = build_parser().parse_args(argv)
        record.command = args.command

        if args.command == "oracle":
            run_oracle(args.grid)
        elif args.command == "rates":
            run_rates(args.sweep, args.out)
        else:
            cfg = load_config(args)
            record.n = cfg.n
            record.system = "sweep" if args.command == "sweep" else cfg.system
            record.c = cfg.c[0] if args.command != "sweep" else None
            if args.command == "simulate":
                run_simulate(cfg, record)
            elif args.command == "sweep":
                run_sweep_command(cfg, record)
            else:
                run_audit_energy(cfg, record)
        code = 0
    except SystemExit as exc:
        # --help
        code = exc.code if isinstance(exc.code, int) else 0
    except Exception as exc:
        code = exit_code_for(exc)
        response = ErrorResponse(error=type(exc).__name__, detail=str(exc), exit_code=code)
        print(response.model_dump_json(), file=sys.stderr)
        record.status = "error"
        record.error = f"{type(exc).__name__}: {exc}"

    record.wall_time_s = time.perf_counter() - started
    if record.command != "unknown":
        from app.storage import log_run
        log_run(record)
    return code


def main():
    setup_logging()
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
