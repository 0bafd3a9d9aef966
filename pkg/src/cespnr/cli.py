"""Command line: ``python -m cespnr run --config cfg.yaml --preset rate-vs-power ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .baselines import SCHEMES, BaselineSpec, GAParams
from .harness import PRESETS, prepare, run_preset, write_outputs
from .scenario import ConfigError, load_config


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cespnr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run a sweep preset and write <preset>.csv and <preset>.summary.json")
    run.add_argument("--config", help="YAML config (missing keys fall back to the built-in defaults)")
    run.add_argument("--preset", required=True, choices=PRESETS)
    run.add_argument("--scheme", default="full_cesp", choices=SCHEMES)
    run.add_argument("--comp", dest="comp", action="store_true", default=True)
    run.add_argument("--no-comp", dest="comp", action="store_false")
    run.add_argument("--mn", dest="sn", action="store_false", default=False)
    run.add_argument("--sn", dest="sn", action="store_true")
    run.add_argument("--seeds", type=int, default=20, help="number of seeds (0..n-1)")
    run.add_argument("--seed", type=int, default=None, help="base RNG seed overriding the config's rng_seed")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("-v", "--verbose", action="store_true")
    dump = sub.add_parser("channels", help="write the channel gains of one run seed as 'k m i n gain_sq' rows")
    dump.add_argument("--config")
    dump.add_argument("--run-seed", type=int, default=0, help="seed index within a sweep")
    dump.add_argument("--seed", type=int, default=None, help="base RNG seed overriding the config's rng_seed")
    dump.add_argument("--sn", action="store_true")
    dump.add_argument("--out", required=True, help="output text file")
    dump.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"--seed must be an unsigned 64-bit integer (got {args.seed})")
            cfg = cfg.with_overrides(rng_seed=args.seed)
        if args.command == "channels":
            if args.run_seed < 0:
                raise ConfigError(f"--run-seed must be >= 0 (got {args.run_seed})")
            cfg, _, ch, _ = prepare(cfg, args.run_seed, BaselineSpec(sn=args.sn))
            ch.dump(args.out, cfg.grid.valid)
            print(json.dumps({"channels": args.out, "shape": list(ch.shape)}))
            return 0
        if args.seeds < 1:
            raise ConfigError(f"--seeds must be >= 1 (got {args.seeds})")
        spec = BaselineSpec(args.scheme, args.comp, args.sn, GAParams.from_mapping(cfg.ga))
        table = run_preset(cfg, args.preset, spec, range(args.seeds), workers=args.workers)
        csv_path, json_path = write_outputs(table, args.out, args.preset, cfg, spec)
    except ConfigError as exc:
        return _fail("config", str(exc), 2)
    except OSError as exc:
        return _fail("io", str(exc), 3)
    failed = [r for r in table if not r.ok]
    print(json.dumps({"csv": csv_path, "summary": json_path, "rows": len(table), "failed": len(failed)}))
    return 4 if failed and len(failed) == len(table) else 0
