"""
Monte Carlo estimators for the percolation observables.

All estimators are deterministic functions of (parameters, seed): replica r
always runs on the derived key replica_seeds(seed, r), replicas are chunked
in fixed blocks, and partial statistics merge in chunk order, so repeated
runs agree bit for bit at any worker count.

Estimated quantities:

* alpha: the asymptotic upward slope, estimated as mean(top_n)/n at the
  largest computed level.  The exact level-n means decrease to the limit,
  so the finite-n estimate is a CI-qualified upper estimate; no model-based
  extrapolation is attempted.
* theta: survival probability proxy P(frontier alive at a finite horizon).
  Above criticality the finite-horizon error decays exponentially in the
  horizon, which is why a horizon of a few hundred levels is adequate.
* rho: boundary slope of surviving clusters, both measured directly in the
  reflected frame and mapped from alpha via rho = -(1+alpha)/(1-alpha).
* p_c bracket by bisection on the survival proxy under one shared seed, so
  the scanned function is exactly monotone in p (coupling), not just
  statistically so.
* exponential-tail fits of the death-time and of upward large deviations,
  by unweighted least squares on log-frequencies over bins with enough
  events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .env_lattice import SiteR, replica_seeds, seed_mix
from .frontier import (
    NEG_INF,
    POS_INF,
    StarterSpec,
    Window,
    _materialize,
    _spec_window,
    reflected_sweep,
    sweep_levels,
    sweep_upper_multi,
    tau_from_top,
)
from .parallel import map_chunks


class EstimatorError(RuntimeError):
    """A run could not produce the requested estimate (not a config error)."""


def _state(seed: int, lo: int, hi: int) -> np.ndarray:
    return seed_mix(replica_seeds(seed, lo, hi))


# --- alpha ---


@dataclass(frozen=True)
class AlphaEstimate:
    """Slope estimate from the half-line top edge.

    alpha_n[n] is mean(top_n)/n over untruncated replicas (index 0 unused);
    alpha_hat is alpha_n at the largest level with its standard error.
    """

    p: float
    n_levels: int
    replicas: int
    kept: int
    truncation_rate: float
    alpha_n: np.ndarray
    alpha_se: np.ndarray
    alpha_hat: float
    alpha_hat_se: float
    seed: int
    K: int
    bound_satisfied: bool  # the a-priori bound alpha <= 1


def _alpha_chunk(p, horizon, K, seed, lo, hi):
    state = _state(seed, lo, hi)
    mat = _materialize(StarterSpec.half_below(0), horizon, K)
    win = _spec_window(mat, horizon)
    res = sweep_levels(state, p, horizon, win, win.mask(mat.col0), win.mask(mat.col1))
    kept_rows = ~(res.top < -K).any(axis=1)
    tops = res.top[kept_rows]
    return {
        "total": hi - lo,
        "kept": int(kept_rows.sum()),
        "sum": tops.sum(axis=0),
        "sumsq": (tops * tops).sum(axis=0),
    }


def estimate_alpha(
    p: float,
    n_levels: int,
    replicas: int,
    seed: int,
    K: int | None = None,
    workers: int = 1,
) -> AlphaEstimate:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    if K is None:
        K = n_levels
    if p == 0.0:
        # exactly computable: the frontier beyond level 1 is empty almost surely
        alpha_n = np.full(n_levels + 1, NEG_INF)
        alpha_n[1] = -1.0
        return AlphaEstimate(
            p=p,
            n_levels=n_levels,
            replicas=replicas,
            kept=replicas,
            truncation_rate=0.0,
            alpha_n=alpha_n,
            alpha_se=np.zeros(n_levels + 1),
            alpha_hat=NEG_INF if n_levels > 1 else -1.0,
            alpha_hat_se=0.0,
            seed=seed,
            K=K,
            bound_satisfied=True,
        )
    parts = map_chunks(partial(_alpha_chunk, p, n_levels, K, seed), replicas, workers)
    kept = sum(pt["kept"] for pt in parts)
    total = sum(pt["total"] for pt in parts)
    if kept == 0:
        raise EstimatorError("every replica hit the truncation floor; increase K")
    s = np.zeros(n_levels + 1)
    ss = np.zeros(n_levels + 1)
    for pt in parts:
        s = s + pt["sum"]
        ss = ss + pt["sumsq"]
    mean = s / kept
    var = np.maximum(ss / kept - mean * mean, 0.0)
    ns = np.arange(n_levels + 1, dtype=float)
    ns[0] = np.nan
    alpha_n = mean / ns
    alpha_se = np.sqrt(var / kept) / ns
    return AlphaEstimate(
        p=p,
        n_levels=n_levels,
        replicas=replicas,
        kept=kept,
        truncation_rate=1.0 - kept / total,
        alpha_n=alpha_n,
        alpha_se=alpha_se,
        alpha_hat=float(alpha_n[n_levels]),
        alpha_hat_se=float(alpha_se[n_levels]),
        seed=seed,
        K=K,
        bound_satisfied=bool(alpha_n[n_levels] <= 1.0 + 1e-12),
    )


# --- survival ---


@dataclass(frozen=True)
class ThetaEstimate:
    p: float
    horizon: int
    replicas: int
    survivors: int
    theta: float
    se: float
    seed: int


def _theta_chunk(p, horizon, seed, lo, hi):
    # survival only: dead replicas are compacted away as the sweep proceeds
    state = _state(seed, lo, hi)
    W = 2 * horizon + 1
    heights = np.arange(-horizon, horizon + 1)
    B = state.shape[0]
    cur = np.zeros((B, W), dtype=bool)
    cur[:, horizon] = True
    pend = np.zeros((B, W), dtype=bool)
    from .env_lattice import level_uniforms
    from .frontier import _shift_down, _shift_up

    for n in range(horizon):
        act = cur & (level_uniforms(state, n, heights) < p)
        cur = _shift_up(act) | _shift_down(act) | pend
        pend = act
        if n % 16 == 15:
            alive = cur.any(axis=1) | pend.any(axis=1)
            if not alive.all():
                cur, pend, state = cur[alive], pend[alive], state[alive]
                if state.shape[0] == 0:
                    return 0
    return int(cur.any(axis=1).sum())


def estimate_theta(p: float, horizon: int, replicas: int, seed: int, workers: int = 1) -> ThetaEstimate:
    """Fraction of replicas whose origin frontier outlives the horizon."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    survivors = sum(map_chunks(partial(_theta_chunk, p, horizon, seed), replicas, workers))
    theta = survivors / replicas
    return ThetaEstimate(
        p=p,
        horizon=horizon,
        replicas=replicas,
        survivors=survivors,
        theta=theta,
        se=math.sqrt(theta * (1.0 - theta) / replicas),
        seed=seed,
    )


# --- boundary slope ---


def rho_from_alpha(alpha: float) -> float:
    """Boundary-slope map rho = -(1+alpha)/(1-alpha); alpha must be < 1."""
    if alpha >= 1.0:
        raise ValueError("alpha must be < 1")
    return -(1.0 + alpha) / (1.0 - alpha)


@dataclass(frozen=True)
class RhoEstimate:
    p: float
    depth: int
    n_eval: int
    replicas: int
    survivors: int
    capped_rate: float
    sigma_direct: float
    sigma_direct_se: float
    rho_direct: float
    rho_direct_se: float
    rho_formula: float
    rho_formula_se: float
    alpha_hat: float
    alpha_hat_se: float
    seed: int

    @property
    def consistency_gap(self) -> float:
        return abs(self.rho_direct - self.rho_formula)

    @property
    def joint_se(self) -> float:
        return math.hypot(self.rho_direct_se, self.rho_formula_se)


def _rho_chunk(p, depth, cap, n_eval, seed, lo, hi):
    state = _state(seed, lo, hi)
    w, _v, survived, capped, _ = reflected_sweep(state, p, SiteR(0, 0), depth, cap)
    use = survived & ~capped
    vals = w[use, n_eval] / n_eval
    return {
        "survivors": int(survived.sum()),
        "capped": int((survived & capped).sum()),
        "used": int(use.sum()),
        "sum": float(vals.sum()),
        "sumsq": float((vals * vals).sum()),
    }


def estimate_rho(
    p: float,
    depth: int,
    replicas: int,
    seed: int,
    alpha_est: AlphaEstimate | None = None,
    n_eval: int | None = None,
    workers: int = 1,
    height_cap_ratio: int = 8,
) -> RhoEstimate:
    """Boundary slope of surviving clusters, direct and via the alpha map.

    The direct estimate averages (top height)/(column index) at reflected
    column n_eval over replicas that survive to `depth` without touching
    the height cap; the formula estimate maps alpha_hat through
    -(1+alpha)/(1-alpha) with its standard error propagated.
    """
    if depth < 2:
        raise ValueError("depth must be >= 2")
    if n_eval is None:
        n_eval = (5 * depth) // 6
    if not 1 <= n_eval <= depth:
        raise ValueError("n_eval must lie in [1, depth]")
    if alpha_est is None:
        alpha_est = estimate_alpha(
            p, n_levels=min(depth, 300), replicas=2000, seed=int(replica_seeds(seed, 10**6, 10**6 + 1)[0]), workers=workers
        )
    a, a_se = alpha_est.alpha_hat, alpha_est.alpha_hat_se
    if not a > 3 * a_se:
        raise EstimatorError(f"slope estimate {a:.3f} not clearly positive; p looks subcritical")
    if not a < 1.0 - 3 * a_se - 1e-9:
        raise EstimatorError("slope estimate too close to 1; boundary slope diverges")
    cap = height_cap_ratio * depth + 8
    parts = map_chunks(partial(_rho_chunk, p, depth, cap, n_eval, seed), replicas, workers)
    survivors = sum(pt["survivors"] for pt in parts)
    used = sum(pt["used"] for pt in parts)
    if used == 0:
        raise EstimatorError("no surviving replicas; raise replicas or lower the depth")
    s = 0.0
    ss = 0.0
    for pt in parts:
        s += pt["sum"]
        ss += pt["sumsq"]
    sigma = s / used
    var = max(ss / used - sigma * sigma, 0.0)
    sigma_se = math.sqrt(var / used)
    rho_f = rho_from_alpha(a)
    rho_f_se = 2.0 * a_se / (1.0 - a) ** 2
    return RhoEstimate(
        p=p,
        depth=depth,
        n_eval=n_eval,
        replicas=replicas,
        survivors=survivors,
        capped_rate=sum(pt["capped"] for pt in parts) / max(survivors, 1),
        sigma_direct=sigma,
        sigma_direct_se=sigma_se,
        rho_direct=-sigma,
        rho_direct_se=sigma_se,
        rho_formula=rho_f,
        rho_formula_se=rho_f_se,
        alpha_hat=a,
        alpha_hat_se=a_se,
        seed=seed,
    )


# --- critical-point bracket ---


@dataclass(frozen=True)
class PcBracket:
    lo: float
    hi: float
    theta_lo: float
    theta_hi: float
    threshold: float
    horizon: int
    replicas: int
    tolerance: float
    seed: int
    evaluations: tuple[tuple[float, float], ...]  # (p, theta_hat) in scan order


def scan_pc(
    threshold: float,
    horizon: int,
    replicas: int,
    tolerance: float,
    seed: int,
    p_lo: float = 0.0,
    p_hi: float = 1.0,
    workers: int = 1,
) -> PcBracket:
    """Bisection bracket of the density where the survival proxy crosses threshold.

    All evaluations share one seed, so the scanned map p -> theta_hat(p) is
    exactly nondecreasing (monotone coupling) and bisection is consistent.
    The bracket is always an interval of width <= tolerance, never a point.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if replicas < 10:
        raise ValueError("replicas < 10 cannot resolve a bracket; CI width dominates")
    if not 0.0 <= p_lo < p_hi <= 1.0:
        raise ValueError("need 0 <= p_lo < p_hi <= 1")
    evals: list[tuple[float, float]] = []

    def theta(p: float) -> float:
        t = estimate_theta(p, horizon, replicas, seed, workers).theta
        evals.append((p, t))
        return t

    th_lo = theta(p_lo)
    th_hi = theta(p_hi)
    if th_hi < threshold:
        raise EstimatorError(
            f"threshold {threshold} unreachable: survival at p={p_hi} is {th_hi:.4f}"
        )
    if th_lo >= threshold:
        raise EstimatorError(f"survival already {th_lo:.4f} >= threshold at p={p_lo}")
    lo, hi = p_lo, p_hi
    t_lo, t_hi = th_lo, th_hi
    while hi - lo > tolerance:
        mid = (lo + hi) / 2.0
        t_mid = theta(mid)
        if t_mid >= threshold:
            hi, t_hi = mid, t_mid
        else:
            lo, t_lo = mid, t_mid
    return PcBracket(
        lo=lo,
        hi=hi,
        theta_lo=t_lo,
        theta_hi=t_hi,
        threshold=threshold,
        horizon=horizon,
        replicas=replicas,
        tolerance=tolerance,
        seed=seed,
        evaluations=tuple(evals),
    )


# --- exponential tails ---


@dataclass(frozen=True)
class TailFit:
    kind: str  # "tau" | "upper"
    p: float
    gamma_hat: float
    C_hat: float
    r_squared: float
    n_range: tuple[int, int]
    ns: tuple[int, ...]
    probs: tuple[float, ...]
    replicas: int
    seed: int


def _loglinear(ns: np.ndarray, logp: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(ns, logp, 1)
    fit = slope * ns + intercept
    ss_res = float(((logp - fit) ** 2).sum())
    ss_tot = float(((logp - logp.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -float(slope), float(math.exp(intercept)), r2


def _tau_hist_chunk(p, horizon, seed, lo, hi):
    state = _state(seed, lo, hi)
    win = Window(-horizon, 2 * horizon + 1)
    res = sweep_levels(state, p, horizon, win, win.mask([0]), stop_when_dead=True)
    taus = tau_from_top(res.top)
    finite = taus[np.isfinite(taus)].astype(int)
    return np.bincount(finite, minlength=horizon + 1)


def fit_tail_tau(
    p: float,
    n_max: int,
    replicas: int,
    seed: int,
    horizon_inf: int | None = None,
    n_min: int = 5,
    min_events: int = 10,
    workers: int = 1,
) -> TailFit:
    """Log-linear decay fit of P(death time in [n, horizon_inf]) over n.

    Deaths beyond horizon_inf are treated as survival; above criticality
    that misclassification is exponentially small in horizon_inf.
    """
    if n_max <= n_min:
        raise ValueError("n_max must exceed n_min")
    if horizon_inf is None:
        horizon_inf = max(3 * n_max, 120)
    counts = sum(map_chunks(partial(_tau_hist_chunk, p, horizon_inf, seed), replicas, workers))
    if counts.sum() == 0:
        raise EstimatorError("no finite deaths observed; nothing to fit")
    tail = np.cumsum(counts[::-1])[::-1]  # tail[n] = #{n <= tau <= horizon_inf}
    ns = np.arange(n_min, n_max + 1)
    events = tail[ns]
    usable = events >= min_events
    if usable.sum() < 5:
        raise EstimatorError("fewer than 5 usable bins; increase replicas")
    ns_u = ns[usable]
    probs = events[usable] / replicas
    gamma, C, r2 = _loglinear(ns_u.astype(float), np.log(probs))
    return TailFit(
        kind="tau",
        p=p,
        gamma_hat=gamma,
        C_hat=C,
        r_squared=r2,
        n_range=(int(ns_u[0]), int(ns_u[-1])),
        ns=tuple(int(n) for n in ns_u),
        probs=tuple(float(x) for x in probs),
        replicas=replicas,
        seed=seed,
    )


def _upper_exceed_chunk(p, n_max, K, alpha_prime, seed, lo, hi):
    state = _state(seed, lo, hi)
    mat = _materialize(StarterSpec.half_below(0), n_max, K)
    win = _spec_window(mat, n_max)
    res = sweep_levels(state, p, n_max, win, win.mask(mat.col0), win.mask(mat.col1))
    thresholds = alpha_prime * np.arange(n_max + 1)
    return (res.top > thresholds).sum(axis=0)


def fit_tail_upper(
    p: float,
    alpha_prime: float,
    n_max: int,
    replicas: int,
    seed: int,
    alpha_est: AlphaEstimate | None = None,
    n_min: int = 5,
    min_events: int = 10,
    workers: int = 1,
) -> TailFit:
    """Log-linear decay fit of P(top edge exceeds alpha_prime * n).

    Requires alpha_prime to sit above the estimated slope by a 3-SE margin;
    otherwise the exceedance probability has no exponential decay to fit.
    """
    if n_max <= n_min:
        raise ValueError("n_max must exceed n_min")
    if alpha_est is None:
        alpha_est = estimate_alpha(
            p,
            n_levels=max(60, n_max),
            replicas=2000,
            seed=int(replica_seeds(seed, 2 * 10**6, 2 * 10**6 + 1)[0]),
            workers=workers,
        )
    if not alpha_prime > alpha_est.alpha_hat + 3 * alpha_est.alpha_hat_se:
        raise EstimatorError(
            f"alpha_prime={alpha_prime:.3f} is not above the slope estimate "
            f"{alpha_est.alpha_hat:.3f} (+3 SE); the exceedance event is not a tail"
        )
    K = n_max
    counts = sum(
        map_chunks(partial(_upper_exceed_chunk, p, n_max, K, alpha_prime, seed), replicas, workers)
    )
    ns = np.arange(n_min, n_max + 1)
    events = counts[ns]
    usable = events >= min_events
    if usable.sum() < 5:
        raise EstimatorError(
            "fewer than 5 usable nonzero bins (exceedances too rare); increase replicas"
        )
    ns_u = ns[usable]
    probs = events[usable] / replicas
    gamma, C, r2 = _loglinear(ns_u.astype(float), np.log(probs))
    return TailFit(
        kind="upper",
        p=p,
        gamma_hat=gamma,
        C_hat=C,
        r_squared=r2,
        n_range=(int(ns_u[0]), int(ns_u[-1])),
        ns=tuple(int(n) for n in ns_u),
        probs=tuple(float(x) for x in probs),
        replicas=replicas,
        seed=seed,
    )


# --- strict monotonicity of the slope ---


@dataclass(frozen=True)
class MonoPair:
    p: float
    q: float
    alpha_p: float
    alpha_q: float
    gap: float
    bound: float  # p^2 - q^2
    margin: float  # gap - bound
    joint_se: float

    @property
    def ok(self) -> bool:
        return self.margin >= -3.0 * self.joint_se


@dataclass(frozen=True)
class MonotonicityReport:
    p_grid: tuple[float, ...]
    n_levels: int
    replicas: int
    kept: int
    alphas: tuple[float, ...]
    alpha_ses: tuple[float, ...]
    pairs: tuple[MonoPair, ...]
    max_adjacent_jump: float
    coupled_monotone: bool
    seed: int

    @property
    def all_ok(self) -> bool:
        return all(row.ok for row in self.pairs)


def _mono_chunk(ps, horizon, K, seed, lo, hi):
    state = _state(seed, lo, hi)
    tops = sweep_upper_multi(state, ps, horizon, K)
    finals = tops[:, :, horizon]
    coupled = True
    for k in range(len(ps) - 1):
        if not (tops[k + 1] >= tops[k]).all():
            coupled = False
    kept_rows = ~(tops < -K).any(axis=(0, 2))
    f = finals[:, kept_rows]
    P = len(ps)
    pair_stats = {}
    for i in range(P):
        for j in range(i + 1, P):
            d = f[j] - f[i]
            pair_stats[(i, j)] = (float(d.sum()), float((d * d).sum()))
    return {
        "total": hi - lo,
        "kept": int(kept_rows.sum()),
        "sum": f.sum(axis=1),
        "sumsq": (f * f).sum(axis=1),
        "pairs": pair_stats,
        "coupled": coupled,
    }


def monotonicity_report(
    p_grid,
    n_levels: int,
    replicas: int,
    seed: int,
    K: int | None = None,
    workers: int = 1,
) -> MonotonicityReport:
    """Slope estimates on a density grid with pairwise strict-gap checks.

    For every p > q the gap alpha_hat[p] - alpha_hat[q] is compared with
    p^2 - q^2; the joint SE comes from per-replica coupled differences, so
    the comparison is far tighter than for independent estimates.  Also
    reports the largest adjacent jump as a continuity diagnostic.
    """
    ps = tuple(sorted(float(x) for x in p_grid))
    if len(ps) < 2:
        raise ValueError("need at least two grid points")
    if any(not 0.0 < x <= 1.0 for x in ps):
        raise ValueError("grid values must lie in (0, 1]")
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    if K is None:
        K = n_levels
    parts = map_chunks(partial(_mono_chunk, ps, n_levels, K, seed), replicas, workers)
    kept = sum(pt["kept"] for pt in parts)
    if kept == 0:
        raise EstimatorError("every replica hit the truncation floor; increase K")
    P = len(ps)
    s = np.zeros(P)
    ss = np.zeros(P)
    pair_sum = {k: 0.0 for k in parts[0]["pairs"]}
    pair_sumsq = {k: 0.0 for k in parts[0]["pairs"]}
    coupled = True
    for pt in parts:
        s = s + pt["sum"]
        ss = ss + pt["sumsq"]
        coupled = coupled and pt["coupled"]
        for k, (a, b) in pt["pairs"].items():
            pair_sum[k] += a
            pair_sumsq[k] += b
    mean = s / kept
    var = np.maximum(ss / kept - mean * mean, 0.0)
    alphas = mean / n_levels
    alpha_ses = np.sqrt(var / kept) / n_levels
    rows = []
    for (i, j), total in pair_sum.items():
        dmean = total / kept
        dvar = max(pair_sumsq[(i, j)] / kept - dmean * dmean, 0.0)
        gap = dmean / n_levels
        joint_se = math.sqrt(dvar / kept) / n_levels
        rows.append(
            MonoPair(
                p=ps[j],
                q=ps[i],
                alpha_p=float(alphas[j]),
                alpha_q=float(alphas[i]),
                gap=float(gap),
                bound=ps[j] ** 2 - ps[i] ** 2,
                margin=float(gap - (ps[j] ** 2 - ps[i] ** 2)),
                joint_se=float(joint_se),
            )
        )
    jumps = [abs(float(alphas[k + 1] - alphas[k])) for k in range(P - 1)]
    return MonotonicityReport(
        p_grid=ps,
        n_levels=n_levels,
        replicas=replicas,
        kept=kept,
        alphas=tuple(float(a) for a in alphas),
        alpha_ses=tuple(float(a) for a in alpha_ses),
        pairs=tuple(rows),
        max_adjacent_jump=max(jumps),
        coupled_monotone=coupled,
        seed=seed,
    )
