"""
Result tables with byte-deterministic CSV and JSON renderings.

A table is columns + rows + a metadata header carrying the exact config,
its digest, the seed, the tool version and the hash-spec identifier, which
is everything needed to reproduce the file bit for bit.  Cell values render
identically in both formats; non-finite floats appear as the strings
"-inf" / "inf" / "nan" in both (JSON has no infinities).  Nothing
time-dependent is ever written to a file, so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .env_lattice import HASH_SPEC


def canon_cell(v):
    """Canonical JSON-safe cell value (shared by both renderings)."""
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if math.isnan(f):
            return "nan"
        return f
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    raise TypeError(f"cannot render {type(v).__name__} cell")


def _cell_text(v) -> str:
    c = canon_cell(v)
    if isinstance(c, bool):
        return "true" if c else "false"
    if isinstance(c, float):
        return repr(c)
    return str(c)


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ResultTable:
    command: str
    columns: list[str]
    rows: list[list]
    config: dict
    extra_metadata: dict = field(default_factory=dict)

    @property
    def metadata(self) -> dict:
        md = {
            "command": self.command,
            "config": self.config,
            "config_digest": config_digest(self.config),
            "hash_spec": HASH_SPEC,
            "seed": self.config.get("seed"),
            "version": __version__,
        }
        md.update(self.extra_metadata)
        return md

    def canon_rows(self) -> list[list]:
        return [[canon_cell(v) for v in row] for row in self.rows]

    def to_csv_text(self) -> str:
        lines = ["# " + json.dumps(self.metadata, sort_keys=True, separators=(",", ":"), default=str)]
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_cell_text(v) for v in row))
        return "\n".join(lines) + "\n"

    def to_json_text(self) -> str:
        payload = {
            "metadata": self.metadata,
            "columns": self.columns,
            "rows": self.canon_rows(),
        }
        return json.dumps(payload, sort_keys=True, indent=1, default=str) + "\n"

    def write(self, outdir: str | Path, fmt: str = "csv") -> Path:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            path = outdir / f"{self.command}.csv"
            path.write_text(self.to_csv_text())
        elif fmt == "json":
            path = outdir / f"{self.command}.json"
            path.write_text(self.to_json_text())
        else:
            raise ValueError("format must be 'csv' or 'json'")
        return path

    def summary_lines(self) -> list[str]:
        head = " ".join(self.columns)
        out = [f"[{self.command}] {head}"]
        for row in self.rows[:12]:
            out.append("  " + " ".join(_cell_text(v) for v in row))
        if len(self.rows) > 12:
            out.append(f"  ... {len(self.rows) - 12} more rows")
        return out


def table_from_payload(payload: dict) -> ResultTable:
    """Rebuild a table from its JSON payload (the thin-client path)."""
    md = dict(payload["metadata"])
    return ResultTable(
        command=md.pop("command"),
        columns=list(payload["columns"]),
        rows=[list(r) for r in payload["rows"]],
        config=md.pop("config"),
        extra_metadata={
            k: v for k, v in md.items() if k not in ("config_digest", "hash_spec", "seed", "version")
        },
    )
