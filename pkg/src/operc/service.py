"""
HTTP service exposing every experiment as a POST endpoint.

Request bodies are the same pydantic configs the CLI validates, responses
are the table payload (metadata/columns/rows, plus a `document` field for
commands with nested side-car output).  Config problems come back as 422,
runs that cannot produce an estimate as 400 with a structured detail.

Run with:  uvicorn operc.service:app
"""

from __future__ import annotations

from typing import Any

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__
from .env_lattice import HASH_SPEC
from .estimators import EstimatorError
from .oracle import OracleRangeError
from .runs import (
    AlphaConfig,
    BlockConfig,
    MonoConfig,
    OracleOpConfig,
    PcConfig,
    RhoConfig,
    TailsConfig,
    ThetaConfig,
    VerifyConfig,
    build_alpha,
    build_block,
    build_mono,
    build_oracle,
    build_pc,
    build_rho,
    build_tails,
    build_theta,
    build_verify,
)
from .tables import ResultTable

app = FastAPI(title="operc", version=__version__)


class TableResponse(BaseModel):
    metadata: dict[str, Any]
    columns: list[str]
    rows: list[list[Any]]
    document: dict[str, Any] | None = None


def _respond(table: ResultTable, document: dict | None = None) -> TableResponse:
    return TableResponse(
        metadata=table.metadata,
        columns=table.columns,
        rows=table.canon_rows(),
        document=document,
    )


def _run(builder, cfg, with_doc: bool = False) -> TableResponse:
    try:
        if with_doc:
            table, doc = builder(cfg)
            return _respond(table, doc)
        return _respond(builder(cfg))
    except (EstimatorError, OracleRangeError) as exc:
        raise HTTPException(status_code=400, detail={"error": "estimator", "message": str(exc)})
    except ValueError as exc:
        raise HTTPException(status_code=422, detail={"error": "config", "message": str(exc)})


@app.get("/v1/health")
def health():
    return {"status": "ok", "version": __version__, "hash_spec": HASH_SPEC}


@app.post("/v1/alpha", response_model=TableResponse)
def alpha(cfg: AlphaConfig):
    return _run(build_alpha, cfg)


@app.post("/v1/theta", response_model=TableResponse)
def theta(cfg: ThetaConfig):
    return _run(build_theta, cfg)


@app.post("/v1/rho", response_model=TableResponse)
def rho(cfg: RhoConfig):
    return _run(build_rho, cfg)


@app.post("/v1/pc", response_model=TableResponse)
def pc(cfg: PcConfig):
    return _run(build_pc, cfg)


@app.post("/v1/tails", response_model=TableResponse)
def tails(cfg: TailsConfig):
    return _run(build_tails, cfg)


@app.post("/v1/mono", response_model=TableResponse)
def mono(cfg: MonoConfig):
    return _run(build_mono, cfg)


@app.post("/v1/block", response_model=TableResponse)
def block(cfg: BlockConfig):
    return _run(build_block, cfg, with_doc=True)


@app.post("/v1/verify", response_model=TableResponse)
def verify(cfg: VerifyConfig):
    return _run(build_verify, cfg)


@app.post("/v1/oracle", response_model=TableResponse)
def oracle_op(cfg: OracleOpConfig):
    return _run(build_oracle, cfg, with_doc=True)
