"""
Batch experiment runner.

Configuration precedence: built-in defaults < --config JSON file <
OPERC_SEED environment variable (seed only) < command-line flags.  Results land in
--out as CSV or JSON tables (plus JSON side-cars for nested structures);
stdout carries a short human summary.  Exit codes: 0 success, 2 config
error, 3 invariant failure, 4 estimator/oracle error.

With --server URL the command runs remotely: the same validated config is
posted to a running service instance and the returned table is written
locally, byte-identical to a local run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from pydantic import ValidationError

from .estimators import EstimatorError
from .oracle import OracleRangeError
from .runs import COMMANDS, build_block, build_oracle
from .tables import ResultTable, table_from_payload

EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_ESTIMATOR = 4

_FLAGS: tuple[tuple[str, type], ...] = (
    ("seed", int),
    ("workers", int),
    ("replicas", int),
    ("p", float),
    ("horizon", int),
    ("n_levels", int),
    ("K", int),
    ("depth", int),
    ("n_eval", int),
    ("threshold", float),
    ("tolerance", float),
    ("p_lo", float),
    ("p_hi", float),
    ("n_max", int),
    ("n_min", int),
    ("alpha_prime", float),
    ("kind", str),
    ("n", int),
    ("m", int),
    ("L", int),
    ("alpha", str),
    ("delta", str),
    ("eps", str),
    ("q", str),
    ("configs", int),
    ("M", int),
    ("op", str),
    ("n_max", int),
    ("contour_len", int),
    ("eta_levels", int),
    ("eta_replicas", int),
    ("footprint_range", int),
)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="operc", description="oriented percolation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None, help="JSON config file")
        sp.add_argument("--out", type=Path, default=Path("results"))
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--server", default=None, help="run via a service instance at this URL")
        seen = set()
        for flag, typ in _FLAGS:
            if flag in seen:
                continue
            seen.add(flag)
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ, default=None)
        sp.add_argument("--p-grid", dest="p_grid", type=str, default=None, help="comma-separated densities")
        sp.add_argument("--ps", dest="ps", type=str, default=None, help="comma-separated densities (verify)")
    return ap


def _merge_config(args) -> dict:
    cfg: dict = {}
    if args.config is not None:
        cfg.update(json.loads(Path(args.config).read_text()))
    env_seed = os.environ.get("OPERC_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    model_cls, _ = COMMANDS[args.command]
    fields = model_cls.model_fields
    for flag, _typ in _FLAGS:
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag not in fields:
            raise ValueError(f"--{flag.replace('_', '-')} does not apply to '{args.command}'")
        cfg[flag] = v
    if getattr(args, "p_grid", None) is not None:
        if "p_grid" not in fields:
            raise ValueError(f"--p-grid does not apply to '{args.command}'")
        cfg["p_grid"] = [float(x) for x in args.p_grid.split(",")]
    if getattr(args, "ps", None) is not None:
        if "ps" not in fields:
            raise ValueError(f"--ps does not apply to '{args.command}'")
        cfg["ps"] = [float(x) for x in args.ps.split(",")]
    return cfg


def _error_record(kind: str, exc: Exception, **extra) -> str:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    rec.update(extra)
    return json.dumps(rec, sort_keys=True)


def _run_remote(server: str, command: str, cfg: dict) -> tuple[ResultTable, dict | None]:
    import httpx

    url = f"{server.rstrip('/')}/v1/{command}"
    resp = httpx.post(url, json=cfg, timeout=None)
    if resp.status_code == 422:
        raise ValueError(f"service rejected config: {resp.text}")
    if resp.status_code != 200:
        raise EstimatorError(f"service error {resp.status_code}: {resp.text}")
    payload = resp.json()
    doc = payload.pop("document", None)
    return table_from_payload(payload), doc


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    t0 = time.time()
    try:
        cfg_dict = _merge_config(args)
        model_cls, builder = COMMANDS[args.command]
        cfg = model_cls(**cfg_dict)
    except (ValidationError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return EXIT_CONFIG

    try:
        doc = None
        if args.server:
            table, doc = _run_remote(args.server, args.command, cfg.model_dump())
        elif args.command == "block":
            table, doc = build_block(cfg)
        elif args.command == "oracle":
            table, doc = build_oracle(cfg)
        else:
            table = builder(cfg)
    except (ValidationError, ValueError) as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return EXIT_CONFIG
    except (EstimatorError, OracleRangeError) as exc:
        print(_error_record("estimator", exc), file=sys.stderr)
        return EXIT_ESTIMATOR

    path = table.write(args.out, args.format)
    if doc is not None:
        side = Path(args.out) / f"{args.command}_detail.json"
        side.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    for line in table.summary_lines():
        print(line)
    print(f"wrote {path} [{time.time() - t0:.2f}s]")

    if args.command == "verify":
        failures = [row for row in table.rows if row[3] > 0]
        if failures:
            worst = failures[0]
            rec = {
                "error": "invariant",
                "check": worst[0],
                "p": worst[1],
                "failures": sum(r[3] for r in failures),
                "example_replica": worst[5],
                "replay": {
                    "seed": cfg.seed,
                    "horizon": cfg.horizon,
                    "K": cfg.K,
                    "M": cfg.M,
                },
            }
            print(json.dumps(rec, sort_keys=True), file=sys.stderr)
            return EXIT_INVARIANT
    return 0


if __name__ == "__main__":
    sys.exit(main())
