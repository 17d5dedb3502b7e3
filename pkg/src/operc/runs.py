"""
Experiment configurations and table builders: the shared operations layer.

Every command is a pydantic config model plus a builder that turns the
validated config into a ResultTable.  The CLI and the HTTP service both
dispatch through this module, so a request body, a config file and a set of
command-line flags all describe exactly the same run.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from . import block_renorm, estimators, invariants, oracle
from .block_renorm import BlockSpec
from .frontier import StarterSpec
from .tables import ResultTable


def _dump(cfg: RunConfig) -> dict:
    """Config as embedded in result metadata: worker count excluded, because
    outputs are bit-identical at any parallelism and must say so."""
    return cfg.model_dump(exclude={"workers"})


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=1, ge=0, lt=2**64)
    workers: int = Field(default=1, ge=1, le=256)


class AlphaConfig(RunConfig):
    p: float = Field(ge=0.0, le=1.0)
    n_levels: int = Field(default=200, ge=1, le=5000)
    replicas: int = Field(default=2000, ge=100)
    K: int | None = Field(default=None, ge=0)


class ThetaConfig(RunConfig):
    p: float = Field(ge=0.0, le=1.0)
    horizon: int = Field(default=200, ge=1, le=100_000)
    replicas: int = Field(default=2000, ge=1)


class RhoConfig(RunConfig):
    p: float = Field(gt=0.0, le=1.0)
    depth: int = Field(default=300, ge=2, le=5000)
    replicas: int = Field(default=1600, ge=1)
    n_eval: int | None = None
    alpha_n_levels: int = Field(default=300, ge=1)
    alpha_replicas: int = Field(default=2000, ge=100)


class PcConfig(RunConfig):
    threshold: float = Field(default=0.2, gt=0.0, lt=1.0)
    horizon: int = Field(default=200, ge=1, le=100_000)
    replicas: int = Field(default=2000, ge=10)
    tolerance: float = Field(default=0.02, gt=0.0)
    p_lo: float = Field(default=0.0, ge=0.0, lt=1.0)
    p_hi: float = Field(default=1.0, gt=0.0, le=1.0)


class TailsConfig(RunConfig):
    p: float = Field(gt=0.0, le=1.0)
    kind: Literal["both", "tau", "upper"] = "both"
    n_max: int = Field(default=40, ge=6)
    n_min: int = Field(default=5, ge=1)
    replicas: int = Field(default=100_000, ge=100)
    alpha_prime: float | None = None  # default: slope estimate + 0.1
    horizon_inf: int | None = None
    alpha_n_levels: int = Field(default=100, ge=1)
    alpha_replicas: int = Field(default=2000, ge=100)


class MonoConfig(RunConfig):
    p_grid: list[float] = Field(default=[0.70, 0.80, 0.90, 1.00], min_length=2)
    n_levels: int = Field(default=200, ge=1, le=5000)
    replicas: int = Field(default=2000, ge=100)
    K: int | None = Field(default=None, ge=0)


class BlockConfig(RunConfig):
    p: float = Field(default=0.8, ge=0.0, le=1.0)
    alpha: str = "3/4"
    delta: str = "1/5"
    L: int = 10
    n: int = 0
    m: int = 0
    replicas: int = Field(default=20_000, ge=100)
    eta_levels: int = Field(default=6, ge=1, le=40)
    eta_replicas: int = Field(default=2000, ge=1)
    footprint_range: int = Field(default=20, ge=1, le=40)
    eps: str | None = None  # contour-bound inputs; strings parse as exact rationals
    q: str | None = None
    peierls_N: int | None = None


class VerifyConfig(RunConfig):
    ps: list[float] = Field(default=[0.3, 0.6, 0.8], min_length=1)
    configs: int = Field(default=10_000, ge=1)
    horizon: int = Field(default=60, ge=4, le=500)
    K: int | None = Field(default=None, ge=0)
    M: int = Field(default=6, ge=0)


class OracleOpConfig(RunConfig):
    op: Literal["tau-dist", "u-dist", "addingpoints", "contours", "crossing"]
    p: float = Field(default=0.5, ge=0.0, le=1.0)
    n_max: int = Field(default=5, ge=1)
    n: int = Field(default=2, ge=0)
    K: int = Field(default=2, ge=0)
    contour_len: int = Field(default=10, ge=1)
    first_fixed: bool = True
    alpha: str = "3/4"
    delta: str = "1/5"
    L: int = 10


def _spec(cfg) -> BlockSpec:
    return BlockSpec(Fraction(cfg.alpha), Fraction(cfg.delta), cfg.L)


def build_alpha(cfg: AlphaConfig) -> ResultTable:
    est = estimators.estimate_alpha(cfg.p, cfg.n_levels, cfg.replicas, cfg.seed, cfg.K, cfg.workers)
    cols = ["p", "n", "alpha_n", "se", "replicas", "kept", "truncation_rate"]
    rows = []
    for n in range(1, cfg.n_levels + 1):
        rows.append(
            [cfg.p, n, float(est.alpha_n[n]), float(est.alpha_se[n]), cfg.replicas, est.kept, est.truncation_rate]
        )
    return ResultTable(
        "alpha",
        cols,
        rows,
        _dump(cfg),
        extra_metadata={"alpha_hat": repr(est.alpha_hat), "alpha_hat_se": repr(est.alpha_hat_se), "bound_alpha_le_1": est.bound_satisfied},
    )


def build_theta(cfg: ThetaConfig) -> ResultTable:
    est = estimators.estimate_theta(cfg.p, cfg.horizon, cfg.replicas, cfg.seed, cfg.workers)
    return ResultTable(
        "theta",
        ["p", "horizon", "theta", "se", "survivors", "replicas"],
        [[est.p, est.horizon, est.theta, est.se, est.survivors, est.replicas]],
        _dump(cfg),
    )


def build_rho(cfg: RhoConfig) -> ResultTable:
    alpha_est = estimators.estimate_alpha(
        cfg.p, cfg.alpha_n_levels, cfg.alpha_replicas, cfg.seed, workers=cfg.workers
    )
    est = estimators.estimate_rho(
        cfg.p, cfg.depth, cfg.replicas, cfg.seed, alpha_est=alpha_est, n_eval=cfg.n_eval, workers=cfg.workers
    )
    cols = [
        "p",
        "depth",
        "n_eval",
        "survivors",
        "rho_direct",
        "rho_direct_se",
        "rho_formula",
        "rho_formula_se",
        "alpha_hat",
        "alpha_hat_se",
        "consistency_gap",
        "joint_se",
    ]
    row = [
        est.p,
        est.depth,
        est.n_eval,
        est.survivors,
        est.rho_direct,
        est.rho_direct_se,
        est.rho_formula,
        est.rho_formula_se,
        est.alpha_hat,
        est.alpha_hat_se,
        est.consistency_gap,
        est.joint_se,
    ]
    return ResultTable("rho", cols, [row], _dump(cfg))


def build_pc(cfg: PcConfig) -> ResultTable:
    br = estimators.scan_pc(
        cfg.threshold, cfg.horizon, cfg.replicas, cfg.tolerance, cfg.seed, cfg.p_lo, cfg.p_hi, cfg.workers
    )
    evals = ";".join(f"{p:.6f}:{t:.6f}" for p, t in br.evaluations)
    return ResultTable(
        "pc",
        ["lo", "hi", "theta_lo", "theta_hi", "threshold", "horizon", "replicas", "tolerance", "evaluations"],
        [[br.lo, br.hi, br.theta_lo, br.theta_hi, br.threshold, br.horizon, br.replicas, br.tolerance, evals]],
        _dump(cfg),
    )


def build_tails(cfg: TailsConfig) -> ResultTable:
    rows = []
    cols = ["kind", "p", "gamma_hat", "C_hat", "r_squared", "n_lo", "n_hi", "replicas", "alpha_prime"]
    if cfg.kind in ("both", "tau"):
        fit = estimators.fit_tail_tau(
            cfg.p, cfg.n_max, cfg.replicas, cfg.seed, cfg.horizon_inf, cfg.n_min, workers=cfg.workers
        )
        rows.append(["tau", cfg.p, fit.gamma_hat, fit.C_hat, fit.r_squared, fit.n_range[0], fit.n_range[1], cfg.replicas, ""])
    if cfg.kind in ("both", "upper"):
        alpha_est = estimators.estimate_alpha(
            cfg.p, cfg.alpha_n_levels, cfg.alpha_replicas, cfg.seed, workers=cfg.workers
        )
        a_prime = cfg.alpha_prime if cfg.alpha_prime is not None else alpha_est.alpha_hat + 0.1
        fit = estimators.fit_tail_upper(
            cfg.p, a_prime, cfg.n_max, cfg.replicas, cfg.seed, alpha_est, cfg.n_min, workers=cfg.workers
        )
        rows.append(["upper", cfg.p, fit.gamma_hat, fit.C_hat, fit.r_squared, fit.n_range[0], fit.n_range[1], cfg.replicas, a_prime])
    return ResultTable("tails", cols, rows, _dump(cfg))


def build_mono(cfg: MonoConfig) -> ResultTable:
    rep = estimators.monotonicity_report(cfg.p_grid, cfg.n_levels, cfg.replicas, cfg.seed, cfg.K, cfg.workers)
    cols = ["p", "q", "alpha_p", "alpha_q", "gap", "bound", "margin", "joint_se", "ok"]
    rows = [
        [r.p, r.q, r.alpha_p, r.alpha_q, r.gap, r.bound, r.margin, r.joint_se, r.ok]
        for r in rep.pairs
    ]
    return ResultTable(
        "mono",
        cols,
        rows,
        _dump(cfg),
        extra_metadata={
            "alphas": {repr(p): repr(a) for p, a in zip(rep.p_grid, rep.alphas)},
            "max_adjacent_jump": repr(rep.max_adjacent_jump),
            "coupled_monotone": rep.coupled_monotone,
            "alpha_at_lowest": repr(rep.alphas[0]),
        },
    )


def build_block(cfg: BlockConfig) -> tuple[ResultTable, dict]:
    """Block diagnostics table plus a nested geometry document (JSON side-car)."""
    spec = _spec(cfg)
    geom = block_renorm.block_geometry(spec, cfg.n, cfg.m)
    footprint = block_renorm.check_dependence_footprint(spec, cfg.footprint_range)
    from .env_lattice import replica_seeds

    seeds = replica_seeds(cfg.seed, 0, cfg.replicas)
    eta = block_renorm.eta_values(seeds, cfg.p, spec, cfg.n, cfg.m)
    eta_hat = float(eta.mean())
    eta_se = float((eta_hat * (1 - eta_hat) / cfg.replicas) ** 0.5)
    perc = block_renorm.run_eta_percolation(
        cfg.eta_levels, cfg.eta_replicas, cfg.seed, mode="underlying", p=cfg.p, spec=spec
    )
    rows = [
        ["geometry", "center", f"({geom.center[0]},{geom.center[1]})"],
        ["geometry", "right_edge_rule", block_renorm.RIGHT_EDGE_RULE],
        ["footprint", "passed", footprint.passed],
        ["footprint", "dependent_neighbors", footprint.dependent_neighbor_count],
        ["footprint", "checked_pairs", footprint.checked_pairs],
        ["eta", "p_hat", eta_hat],
        ["eta", "se", eta_se],
        ["eta", "replicas", cfg.replicas],
        ["eta_percolation", "survival", perc.survival],
        ["eta_percolation", "levels", perc.levels],
        ["eta_percolation", "replicas", perc.replicas],
    ]
    if cfg.eps is not None:
        bound = block_renorm.peierls_bound(
            Fraction(cfg.eps), N=cfg.peierls_N, q=Fraction(cfg.q) if cfg.q else None
        )
        rows += [
            ["peierls", "form", bound.form],
            ["peierls", "factor", bound.factor],
            ["peierls", "gamma", bound.gamma],
            ["peierls", "contracts", bound.contracts],
        ]
    table = ResultTable("block", ["section", "key", "value"], rows, _dump(cfg))
    geometry_doc = {
        "spec": {"alpha": str(spec.alpha), "delta": str(spec.delta), "L": spec.L},
        "block": [cfg.n, cfg.m],
        "center": _point_doc(geom.center),
        "rect": {
            "x": [str(geom.rect[0]), str(geom.rect[1])],
            "y": [str(geom.rect[2]), str(geom.rect[3])],
            "x_float": [float(geom.rect[0]), float(geom.rect[1])],
            "y_float": [float(geom.rect[2]), float(geom.rect[3])],
        },
        "rising_tube": [_point_doc(v) for v in geom.a_vertices],
        "falling_tube": [_point_doc(v) for v in geom.b_vertices],
        "right_edge_rule": block_renorm.RIGHT_EDGE_RULE,
    }
    return table, geometry_doc


def _point_doc(pt) -> dict:
    return {"exact": [str(pt[0]), str(pt[1])], "float": [float(pt[0]), float(pt[1])]}


def build_verify(cfg: VerifyConfig) -> ResultTable:
    results = invariants.run_invariant_suite(
        ps=cfg.ps,
        configs=cfg.configs,
        horizon=cfg.horizon,
        seed=cfg.seed,
        K=cfg.K,
        M=cfg.M,
        workers=cfg.workers,
    )
    cols = ["check", "p", "trials", "failures", "skipped", "example_replica"]
    rows = [
        [r.check, r.p, r.trials, r.failures, r.skipped, r.example[0] if r.example else ""]
        for r in results
    ]
    return ResultTable("verify", cols, rows, _dump(cfg))


def build_oracle(cfg: OracleOpConfig) -> tuple[ResultTable, dict | None]:
    doc = None
    if cfg.op == "tau-dist":
        dist = oracle.exact_tau_dist(cfg.p, cfg.n_max)
        rows = [[v, s, f] for v, s, f in dist.rows()]
        table = ResultTable("oracle", ["value", "prob", "prob_float"], rows, _dump(cfg))
        doc = {"op": "tau-dist", "p": cfg.p, "atoms": [[_v(v), s] for v, s, _ in dist.rows()]}
    elif cfg.op == "u-dist":
        dist = oracle.exact_dist_u(cfg.p, cfg.n, StarterSpec.half_below(0), K=cfg.K)
        rows = [[v, s, f] for v, s, f in dist.rows()]
        table = ResultTable("oracle", ["value", "prob", "prob_float"], rows, _dump(cfg))
        doc = {"op": "u-dist", "p": cfg.p, "atoms": [[_v(v), s] for v, s, _ in dist.rows()]}
    elif cfg.op == "addingpoints":
        gap = oracle.exact_addingpoints(cfg.p, cfg.n)
        rows = [[cfg.p, cfg.n, str(gap.gap_lower_bound), float(gap.gap_lower_bound), str(gap.bound_2p), gap.ok]]
        table = ResultTable(
            "oracle", ["p", "n", "gap_lower_bound", "gap_float", "bound_2p", "ok"], rows, _dump(cfg)
        )
    elif cfg.op == "contours":
        c = oracle.count_contours(cfg.contour_len, cfg.first_fixed)
        rows = [[c.m, c.first_fixed, c.no_reversal_count, c.bound_3_pow, c.no_reversal_count <= c.bound_3_pow]]
        table = ResultTable(
            "oracle", ["m", "first_fixed", "count", "bound", "within_bound"], rows, _dump(cfg)
        )
    else:  # crossing
        cr = oracle.exact_crossing(cfg.p, _spec(cfg))
        rows = [[cfg.p, str(cr.p_up), float(cr.p_up), str(cr.p_down), float(cr.p_down), str(cr.p_both), float(cr.p_both)]]
        table = ResultTable(
            "oracle",
            ["p", "p_up", "p_up_float", "p_down", "p_down_float", "p_both", "p_both_float"],
            rows,
            _dump(cfg),
        )
    return table, doc


def _v(v: float):
    import math

    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return int(v)


COMMANDS = {
    "alpha": (AlphaConfig, build_alpha),
    "theta": (ThetaConfig, build_theta),
    "rho": (RhoConfig, build_rho),
    "pc": (PcConfig, build_pc),
    "tails": (TailsConfig, build_tails),
    "mono": (MonoConfig, build_mono),
    "block": (BlockConfig, build_block),
    "verify": (VerifyConfig, build_verify),
    "oracle": (OracleOpConfig, build_oracle),
}
