"""Command line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .autoencoder import DivergenceError
from .nn import CheckpointError
from .pipeline import ATTACK_KINDS, ConfigError, DataError
from .rl_cluster import ClusteringError
from .trace_prep import TraceFileError, read_traceset, write_traceset
from .trace_sim import simulate_campaign

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("ascon_sca")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _key(text: str) -> int:
    try:
        value = int(text, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"key must be hexadecimal, got {text!r}")
    if not 0 <= value < 1 << 128:
        raise argparse.ArgumentTypeError("key must fit in 128 bits")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ascon-sca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or YAML config file")
    common.add_argument("--seed", type=int, help="experiment seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output file or directory")

    p = sub.add_parser("simulate", parents=[common], help="simulate a trace campaign into an SCTR file")
    p.add_argument("--num", type=int, help="number of encryptions")
    p.add_argument("--key", type=_key, help="128-bit key in hex (default: derived from the seed)")

    attack_args = argparse.ArgumentParser(add_help=False)
    attack_args.add_argument("--kind", choices=ATTACK_KINDS, required=True)
    attack_args.add_argument("--traces", type=Path, help="input SCTR trace set")
    attack_args.add_argument("--pair", type=int, help="S-box pair index 0..31")
    attack_args.add_argument("--num", type=int, help="use only the first NUM encryptions")
    attack_args.add_argument("--workers", type=int, help="parallel workers for candidates and sweeps")

    sub.add_parser("attack", parents=[common, attack_args], help="run one attack and write a report directory")
    p = sub.add_parser("sweep", parents=[common, attack_args], help="rank of the true candidate versus trace count")
    p.add_argument("--counts", type=_int_list, required=True, help="comma-separated trace counts")

    p = sub.add_parser("ndf", parents=[common], help="per-sample NDF curves")
    p.add_argument("--traces", type=Path, help="input SCTR trace set")
    p.add_argument("--windows", type=_int_list, help="comma-separated window lengths (default 45,50,55)")

    p = sub.add_parser("report", help="render a report directory as text")
    p.add_argument("report_dir", type=Path)
    p.add_argument("--out", type=Path, help="write the text here instead of stdout")
    return parser


def _load(args) -> dict:
    return pipeline.load_config_file(args.config) if getattr(args, "config", None) else {}


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigError("--out is required")
    return args.out


def cmd_simulate(args) -> int:
    data = _load(args)
    key = data.pop("key", None)
    if args.seed is not None:
        data["rng_seed"] = args.seed
    if args.num is not None:
        data["num_encryptions"] = args.num
    cfg = pipeline.sim_config_from_dict(data)
    if args.key is not None:
        key = args.key
    elif key is not None:
        try:
            key = _key(str(key))
        except argparse.ArgumentTypeError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        key = pipeline.planted_key(cfg.rng_seed)
    out = _require_out(args)
    ts = simulate_campaign(cfg, key)
    write_traceset(ts, out)
    log.info("wrote %d traces of %d samples to %s", len(ts), ts.trace_length, out)
    return EXIT_OK


def _attack_setup(args):
    data = _load(args)
    if args.traces is not None:
        data["traceset"] = str(args.traces)
    if args.pair is not None:
        data["pair"] = args.pair
    if args.num is not None:
        data["traces"] = args.num
    if args.workers is not None:
        data["workers"] = args.workers
    seed = data.pop("seed", None)
    if args.seed is not None:
        seed = args.seed
    cfg = pipeline.attack_config_from_dict(data)
    if seed is not None:
        cfg = cfg.with_seed(int(seed))
    if not cfg.traceset:
        raise ConfigError("no trace set given (--traces or 'traceset' in the config)")
    ts = _read(cfg.traceset)
    return cfg, ts


def _read(path):
    try:
        return read_traceset(path)
    except FileNotFoundError as exc:
        raise DataError(f"trace set not found: {path}") from exc


def cmd_attack(args) -> int:
    cfg, ts = _attack_setup(args)
    out = _require_out(args)
    report = pipeline.run_attack(args.kind, ts, cfg)
    pipeline.write_report(report, out)
    sys.stdout.write(pipeline.render_summary(report.summary()))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, ts = _attack_setup(args)
    out = _require_out(args)
    reports = pipeline.run_sweep(args.kind, ts, cfg, args.counts)
    out.mkdir(parents=True, exist_ok=True)
    for r in reports:
        pipeline.write_report(r, out / f"n{r.num_traces}")
    text = pipeline.sweep_text(reports)
    (out / "sweep.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ndf(args) -> int:
    data = _load(args)
    path = args.traces if args.traces is not None else data.get("traceset")
    if not path:
        raise ConfigError("no trace set given (--traces or 'traceset' in the config)")
    windows = args.windows or data.get("windows") or [45, 50, 55]
    out = _require_out(args)
    ts = _read(path)
    matrix = pipeline.run_ndf(ts, windows)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(pipeline.ndf_text(matrix, windows))
    return EXIT_OK


def cmd_report(args) -> int:
    path = args.report_dir / "summary.json"
    sweep = args.report_dir / "sweep.csv"
    if not path.exists() and not sweep.exists():
        raise DataError(f"no summary.json or sweep.csv in {args.report_dir}")
    text = ""
    if path.exists():
        try:
            summary = json.loads(path.read_text())
            timing = args.report_dir / "timing.json"
            if timing.exists():
                summary["timing"] = json.loads(timing.read_text())
            text = pipeline.render_summary(summary)
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"malformed summary {path}: {exc}") from exc
    if sweep.exists():
        text += sweep.read_text()
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "attack": cmd_attack, "sweep": cmd_sweep, "ndf": cmd_ndf, "report": cmd_report}


def _fail(code: int, category: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": category, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (DataError, TraceFileError, CheckpointError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (DivergenceError, ClusteringError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except (ValueError, OSError) as exc:
        # remaining validation errors come from malformed inputs
        return _fail(EXIT_DATA, "data", exc)


if __name__ == "__main__":
    sys.exit(main())
