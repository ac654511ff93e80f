"""Command-line entry point: ``risloc run|bound|aggregate|dump-codebooks``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .codebook import save_codebook
from .errors import ConfigError, InvalidArgument, NumericalFailure
from .harness import (
    SimulationConfig,
    Workspace,
    aggregate,
    emit_aggregate,
    emit_csv,
    format_aggregate,
    load_config,
    noise_free_bound,
    read_csv,
    run_sweep,
)
from .training import write_trace

log = logging.getLogger("risloc")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _config(args) -> SimulationConfig:
    cfg = load_config(args.config) if args.config else SimulationConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
    if getattr(args, "schemes", None):
        overrides["schemes"] = [s.strip() for s in args.schemes.split(",") if s.strip()]
    if getattr(args, "snr_db", None):
        try:
            overrides["snr_list_db"] = [float(v) for v in args.snr_db.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--snr-db: {exc}") from exc
    if getattr(args, "trials", None) is not None:
        overrides["trials_per_point"] = args.trials
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.output_path
    trace = [] if args.trace else None
    records = run_sweep(cfg, trace_rows=trace)
    emit_csv(records, out)
    if args.trace:
        write_trace(args.trace, trace)
    log.info("wrote %d records to %s", len(records), out)
    return 0


def cmd_bound(args) -> int:
    cfg = _config(args)
    results = noise_free_bound(cfg)
    lines = ["scheme,pe_m2,oe_rad2,theta_hat,phi_hat,tau_hat_ns"]
    for scheme, res in results.items():
        est = res.estimate
        lines.append(f"{scheme},{res.record.pe:.10g},{res.record.oe:.10g},{est.theta_hat:.10g},"
                     f"{est.phi_hat:.10g},{est.tau_hat * 1e9:.10g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_aggregate(args) -> int:
    try:
        records = read_csv(args.input)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rows = aggregate(records)
    if args.out:
        emit_aggregate(rows, args.out)
    else:
        sys.stdout.write(format_aggregate(rows))
    return 0


def cmd_dump(args) -> int:
    cfg = _config(args)
    ws = Workspace.build(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_codebook(ws.ris_cb, out / "ris_codebook.txt")
    save_codebook(ws.ms_cb, out / "ms_codebook.txt")
    log.info("wrote codebooks to %s", out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risloc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo sweep to CSV")
    run.add_argument("--config")
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--schemes", help="comma list of proposed,exhaustive,random_phase,optimal")
    run.add_argument("--snr-db", dest="snr_db", help="comma list of SNR values in dB")
    run.add_argument("--trials", type=int)
    run.add_argument("--trace", help="write the per-slot protocol trace CSV here")
    run.set_defaults(func=cmd_run)

    bound = sub.add_parser("bound", help="noise-free saturation errors per scheme")
    bound.add_argument("--config")
    bound.add_argument("--seed", type=int)
    bound.add_argument("--schemes")
    bound.add_argument("--out")
    bound.set_defaults(func=cmd_bound)

    agg = sub.add_parser("aggregate", help="per-scheme/per-SNR means from a raw results CSV")
    agg.add_argument("input")
    agg.add_argument("--out")
    agg.set_defaults(func=cmd_aggregate)

    dump = sub.add_parser("dump-codebooks", help="write RIS and MS codebooks in text form")
    dump.add_argument("--config")
    dump.add_argument("--out-dir", default="codebooks")
    dump.set_defaults(func=cmd_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
