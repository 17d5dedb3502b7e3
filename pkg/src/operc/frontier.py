"""
Level-set (frontier) evolution of reachability on the rotated lattice.

The frontier at level n is the set of heights m with (n, m) reachable from a
set of starter sites.  Because of the (n+2, m) edge, stepping to level n+1
needs the open reached sites of level n-1 as well, so a frontier state
carries exactly two levels: the current reached set and the previous level's
open reached set.

Starters live at first coordinates 0 and 1 (self-connected, so they are
reached even when closed; outgoing steps still require openness).  Half-line
starter sets are truncated at a finite floor: a starter below floor can gain
at most one height unit per level, so every reported value at level n that is
at least floor + horizon is exactly what the untruncated half-line would give.
Values below that threshold raise the trajectory's truncation flag.

Sentinels: sup of an empty level is -inf and inf of an empty level is +inf,
kept as IEEE infinities (never large finite stand-ins) so that edge-process
comparisons such as the death-time rule are exact.

The module exposes single-environment operations (run_xi, run_barred,
u_bar_relative, tau_via_edges, explore_cluster) built on a vectorised engine
that evolves many replicas at once as boolean height-window arrays; the
engine is also used directly by the estimator and invariant-suite layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .env_lattice import EnvField, SiteR, in_lattice, is_open, level_uniforms, seed_mix, site_uniforms, to_reflected

NEG_INF = float("-inf")
POS_INF = float("inf")


class HalfLine(NamedTuple):
    """All starter heights y <= bound (side 'below') or y >= bound ('above')."""

    bound: int
    side: str  # "below" | "above"


@dataclass(frozen=True)
class StarterSpec:
    """Starter heights at first coordinates 0 and 1.

    Each column is an explicit height tuple, a HalfLine, or None.  Explicit
    heights must have the column's parity (even at column 0, odd at column 1).
    Half-lines are cut at truncation_floor / truncation_ceiling; when a cut is
    left None it defaults to bound -/+ (K + horizon) at run time.
    """

    column0: tuple[int, ...] | HalfLine | None = None
    column1: tuple[int, ...] | HalfLine | None = None
    truncation_floor: int | None = None
    truncation_ceiling: int | None = None

    @staticmethod
    def origin() -> "StarterSpec":
        return StarterSpec(column0=(0,))

    @staticmethod
    def point(y: int) -> "StarterSpec":
        return StarterSpec(column0=(y,))

    @staticmethod
    def half_below(z: int = 0) -> "StarterSpec":
        return StarterSpec(column0=HalfLine(z, "below"), column1=HalfLine(z, "below"))

    @staticmethod
    def half_above(z: int = 0) -> "StarterSpec":
        return StarterSpec(column0=HalfLine(z, "above"), column1=HalfLine(z, "above"))

    @staticmethod
    def interval(lo: int, hi: int) -> "StarterSpec":
        return StarterSpec(column0=tuple(y for y in range(lo, hi + 1) if y % 2 == 0))


def _column_heights(spec_part, parity: int, floor: int, ceiling: int) -> list[int]:
    if spec_part is None:
        return []
    if isinstance(spec_part, HalfLine):
        if spec_part.side == "below":
            hi = spec_part.bound
            return [y for y in range(floor, hi + 1) if y % 2 == parity % 2]
        if spec_part.side == "above":
            lo = spec_part.bound
            return [y for y in range(lo, ceiling + 1) if y % 2 == parity % 2]
        raise ValueError(f"unknown half-line side {spec_part.side!r}")
    heights = sorted(int(y) for y in spec_part)
    for y in heights:
        if y % 2 != parity % 2:
            raise ValueError(f"column-{parity % 2} starter height {y} has wrong parity")
    return heights


class _Materialized(NamedTuple):
    col0: list[int]
    col1: list[int]
    floor: int | None  # resolved cut for below half-lines
    ceiling: int | None


def _materialize(spec: StarterSpec, horizon: int, K: int) -> _Materialized:
    below_bounds = [
        part.bound
        for part in (spec.column0, spec.column1)
        if isinstance(part, HalfLine) and part.side == "below"
    ]
    above_bounds = [
        part.bound
        for part in (spec.column0, spec.column1)
        if isinstance(part, HalfLine) and part.side == "above"
    ]
    floor = ceiling = None
    if below_bounds:
        floor = spec.truncation_floor
        if floor is None:
            floor = min(below_bounds) - K - horizon
    if above_bounds:
        ceiling = spec.truncation_ceiling
        if ceiling is None:
            ceiling = max(above_bounds) + K + horizon
    lo = floor if floor is not None else -(10**9)
    hi = ceiling if ceiling is not None else 10**9
    col0 = _column_heights(spec.column0, 0, lo, hi)
    col1 = _column_heights(spec.column1, 1, lo, hi)
    if not col0 and not col1:
        raise ValueError("empty starter specification")
    return _Materialized(col0, col1, floor, ceiling)


# --- single-step reference semantics ---


@dataclass(frozen=True)
class FrontierState:
    """Reached heights at `level` plus the open reached heights one level back."""

    level: int
    cur: tuple[int, ...]
    prev_open: tuple[int, ...]

    def __post_init__(self):
        for m in self.cur:
            if (self.level + m) % 2 != 0:
                raise ValueError(f"height {m} has wrong parity for level {self.level}")
        for m in self.prev_open:
            if (self.level - 1 + m) % 2 != 0:
                raise ValueError(f"height {m} has wrong parity for level {self.level - 1}")


def frontier_from_heights(level: int, heights: Iterable[int]) -> FrontierState:
    return FrontierState(level, tuple(sorted(set(heights))), ())


def evolve(fs: FrontierState, f: EnvField, p: float) -> FrontierState:
    """One level of frontier evolution.

    Steps (1, +-1) fire from open reached sites of the current level; the
    (2, 0) contributions recorded in prev_open land now.
    """
    opens = [m for m in fs.cur if is_open(f, SiteR(fs.level, m), p)]
    nxt = set(fs.prev_open)
    for m in opens:
        nxt.add(m + 1)
        nxt.add(m - 1)
    return FrontierState(fs.level + 1, tuple(sorted(nxt)), tuple(opens))


def inject(fs: FrontierState, heights: Iterable[int]) -> FrontierState:
    """Add self-connected starters to the current level (column-1 injection)."""
    return FrontierState(fs.level, tuple(sorted(set(fs.cur) | set(heights))), fs.prev_open)


# --- vectorised engine ---


@dataclass(frozen=True)
class Window:
    """Height window [ymin, ymin + width) holding one frontier row per replica."""

    ymin: int
    width: int

    @property
    def heights(self) -> np.ndarray:
        return self.ymin + np.arange(self.width)

    def mask(self, heights: Iterable[int]) -> np.ndarray:
        out = np.zeros(self.width, dtype=bool)
        for y in heights:
            j = y - self.ymin
            if 0 <= j < self.width:
                out[j] = True
        return out


def _shift_up(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[:, 1:] = a[:, :-1]
    return out


def _shift_down(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[:, :-1] = a[:, 1:]
    return out


def _top_heights(cur: np.ndarray, ymin: int) -> np.ndarray:
    idx = np.arange(cur.shape[1])
    v = np.where(cur, idx, -1).max(axis=1)
    return np.where(v < 0, NEG_INF, v + float(ymin))


def _bot_heights(cur: np.ndarray, ymin: int) -> np.ndarray:
    w = cur.shape[1]
    idx = np.arange(w)
    v = np.where(cur, idx, w).min(axis=1)
    return np.where(v >= w, POS_INF, v + float(ymin))


class SweepResult(NamedTuple):
    top: np.ndarray  # (B, H+1) float, -inf where level empty
    bot: np.ndarray  # (B, H+1) float, +inf where level empty
    sets: np.ndarray | None  # (H+1, B, W) bool when collected


def sweep_levels(
    state: np.ndarray,
    p: float,
    horizon: int,
    window: Window,
    cur0: np.ndarray,
    inject1: np.ndarray | None = None,
    level0: int = 0,
    opens: Callable[[int], np.ndarray] | None = None,
    collect_sets: bool = False,
    stop_when_dead: bool = False,
) -> SweepResult:
    """Evolve a batch of frontiers `horizon` levels inside one height window.

    `state` is the pre-mixed per-replica seed array (shape (B,)); `opens`
    overrides the openness source (used to share hashed uniforms between
    runs at several densities).  cur0/inject1 are (B, W) or (W,) boolean
    masks for the level0 frontier and the level0+1 self-connected starters.
    """
    B = state.shape[0]
    W = window.width
    heights = window.heights
    cur = np.broadcast_to(cur0, (B, W)).copy()
    pend = np.zeros((B, W), dtype=bool)
    top = np.full((B, horizon + 1), NEG_INF)
    bot = np.full((B, horizon + 1), POS_INF)
    sets = np.zeros((horizon + 1, B, W), dtype=bool) if collect_sets else None
    for i in range(horizon + 1):
        top[:, i] = _top_heights(cur, window.ymin)
        bot[:, i] = _bot_heights(cur, window.ymin)
        if collect_sets:
            sets[i] = cur
        if i == horizon:
            break
        if stop_when_dead and not cur.any() and not pend.any():
            break
        n = level0 + i
        if opens is not None:
            open_i = opens(n)
        else:
            open_i = level_uniforms(state, n, heights) < p
        act = cur & open_i
        nxt = _shift_up(act) | _shift_down(act) | pend
        if i == 0 and inject1 is not None:
            nxt |= np.broadcast_to(inject1, (B, W))
        pend = act
        cur = nxt
    return SweepResult(top, bot, sets)


def tau_from_top(top: np.ndarray) -> np.ndarray:
    """First level with an empty frontier, +inf if none within the horizon."""
    dead = np.isneginf(top)
    any_dead = dead.any(axis=1)
    first = dead.argmax(axis=1)
    return np.where(any_dead, first.astype(float), POS_INF)


# --- trajectories and public operations ---


@dataclass
class EdgeTrajectory:
    """Per-level edge statistics of one replica.

    u/l are sup/inf of the frontier grown from an explicit starter set;
    ubar/lbar are the half-line edge processes (highest point reachable from
    below the start, lowest from above).  tau is the death time of the
    explicit-starter frontier (+inf sentinel when it outlives the horizon).
    """

    horizon: int
    u: np.ndarray | None = None
    l: np.ndarray | None = None
    ubar: np.ndarray | None = None
    lbar: np.ndarray | None = None
    tau: float | None = None
    truncated_below: bool = False
    truncated_above: bool = False


def _spec_window(mat: _Materialized, horizon: int) -> Window:
    lows = []
    highs = []
    for col in (mat.col0, mat.col1):
        if col:
            lows.append(min(col))
            highs.append(max(col))
    ymin = min(lows) - horizon
    ymax = max(highs) + horizon
    return Window(ymin, ymax - ymin + 1)


def run_xi(f: EnvField, p: float, start: StarterSpec, horizon: int, K: int | None = None) -> EdgeTrajectory:
    """Frontier from an arbitrary starter set: per-level sup/inf and death time."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if K is None:
        K = horizon
    mat = _materialize(start, horizon, K)
    window = _spec_window(mat, horizon)
    state = seed_mix(np.array([f.seed], dtype=np.uint64))
    res = sweep_levels(
        state,
        p,
        horizon,
        window,
        window.mask(mat.col0),
        window.mask(mat.col1) if mat.col1 else None,
    )
    traj = EdgeTrajectory(horizon=horizon, u=res.top[0], l=res.bot[0], tau=float(tau_from_top(res.top)[0]))
    if mat.floor is not None:
        traj.truncated_below = bool((traj.u < mat.floor + horizon).any())
    if mat.ceiling is not None:
        traj.truncated_above = bool((traj.l > mat.ceiling - horizon).any())
    return traj


def run_barred(
    f: EnvField,
    p: float,
    horizon: int,
    K: int | None = None,
    upper_start: int = 0,
    lower_start: int = 0,
) -> EdgeTrajectory:
    """Half-line edge processes: ubar from below upper_start, lbar from above lower_start.

    Starters at columns 0 and 1 run down (up) to start -/+ (K + horizon); a
    reported value is exact for the untruncated half-line whenever it stays
    within K of its start, otherwise the truncation flag is set.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if K is None:
        K = horizon
    if K < 0:
        raise ValueError("K must be >= 0")
    state = seed_mix(np.array([f.seed], dtype=np.uint64))
    up = _upper_sweep(state, p, horizon, K, upper_start)
    lo = _lower_sweep(state, p, horizon, K, lower_start)
    return EdgeTrajectory(
        horizon=horizon,
        ubar=up.top[0],
        lbar=lo.bot[0],
        truncated_below=bool((up.top[0] < upper_start - K).any()),
        truncated_above=bool((lo.bot[0] > lower_start + K).any()),
    )


def _upper_sweep(state, p, horizon, K, z, opens=None, window=None) -> SweepResult:
    mat = _materialize(StarterSpec.half_below(z), horizon, K)
    win = window or _spec_window(mat, horizon)
    return sweep_levels(state, p, horizon, win, win.mask(mat.col0), win.mask(mat.col1), opens=opens)


def _lower_sweep(state, p, horizon, K, z, opens=None, window=None) -> SweepResult:
    mat = _materialize(StarterSpec.half_above(z), horizon, K)
    win = window or _spec_window(mat, horizon)
    return sweep_levels(state, p, horizon, win, win.mask(mat.col0), win.mask(mat.col1), opens=opens)


def tau_via_edges(t: EdgeTrajectory) -> float:
    """Death time from the edge processes: first m with lbar[m] > ubar[m].

    Empty-level sentinels participate exactly (+inf > -inf), which is what
    makes the rule total.
    """
    if t.ubar is None or t.lbar is None:
        raise ValueError("trajectory lacks half-line edge processes")
    above = t.lbar > t.ubar
    if above.any():
        return float(np.argmax(above))
    return POS_INF


def u_bar_relative(
    f: EnvField,
    p: float,
    m: int,
    n: int,
    K: int | None = None,
    absolute_floor: int | None = None,
) -> float:
    """Altitude gain from level m's half-line top to the level-n top.

    Starters sit at columns m and m+1, at heights at most the level-m edge
    value; the result is measured relative to that value.  With the default
    relative floor the construction is an exact distributional copy of the
    plain edge process run n-m levels; an absolute_floor is available so that
    pathwise chain inequalities can be checked against runs sharing one
    window.
    """
    if not 0 <= m < n:
        raise ValueError("need n > m >= 0")
    if K is None:
        K = n - m
    state = seed_mix(np.array([f.seed], dtype=np.uint64))
    if m == 0:
        um = 0.0
    else:
        um = float(_upper_sweep(state, p, m, max(K, m), 0).top[0][m])
    if um == NEG_INF:
        return NEG_INF
    zm = int(um)
    floor = absolute_floor if absolute_floor is not None else zm - K - (n - m)
    col0 = [y for y in range(floor, zm + 1) if (m + y) % 2 == 0]
    col1 = [y for y in range(floor, zm + 1) if (m + 1 + y) % 2 == 0]
    win = Window(floor - (n - m), zm + (n - m) - floor + 2 * (n - m) + 1)
    res = sweep_levels(state, p, n - m, win, win.mask(col0), win.mask(col1), level0=m)
    top = float(res.top[0][n - m])
    return top - um if top != NEG_INF else NEG_INF


def sweep_upper_multi(
    state: np.ndarray,
    ps: tuple[float, ...],
    horizon: int,
    K: int,
    upper_start: int = 0,
) -> np.ndarray:
    """Half-line top edge at several densities sharing one hashed environment.

    Returns tops of shape (len(ps), B, horizon+1).  Because all densities
    compare against the same uniforms, the runs are coupled: for p >= q the
    p-frontier contains the q-frontier on every sample path.
    """
    mat = _materialize(StarterSpec.half_below(upper_start), horizon, K)
    win = _spec_window(mat, horizon)
    B = state.shape[0]
    W = win.width
    heights = win.heights
    P = len(ps)
    cur = [np.broadcast_to(win.mask(mat.col0), (B, W)).copy() for _ in range(P)]
    pend = [np.zeros((B, W), dtype=bool) for _ in range(P)]
    inject1 = win.mask(mat.col1)
    tops = np.full((P, B, horizon + 1), NEG_INF)
    for i in range(horizon + 1):
        for k in range(P):
            tops[k, :, i] = _top_heights(cur[k], win.ymin)
        if i == horizon:
            break
        u = level_uniforms(state, i, heights)
        for k, p in enumerate(ps):
            act = cur[k] & (u < p)
            nxt = _shift_up(act) | _shift_down(act) | pend[k]
            if i == 0:
                nxt |= inject1
            pend[k] = act
            cur[k] = nxt
    return tops


# --- cluster exploration in the reflected frame ---


@dataclass
class ClusterSample:
    """Forward cluster of one source, described in the reflected frame.

    w[k]/v[k] are the sup/inf heights (relative to the source) of the cluster
    in reflected column k; survived means the final column is populated.
    height_capped marks samples whose cluster hit the top of the working
    window (only near p = 1), in which case w is a lower bound.
    """

    source: SiteR
    depth: int
    sites: frozenset[SiteR]
    w: np.ndarray
    v: np.ndarray
    survived: bool
    height_capped: bool


def _upward_closure(enter: np.ndarray, open_: np.ndarray) -> np.ndarray:
    """Heights reachable inside one reflected column via repeated (0, 1) steps.

    A height j is in the closure iff some entered height j' <= j exists with
    all sites in [j', j) open; computed with running maxima so the whole
    batch closes in O(B * W).
    """
    B, W = enter.shape
    idx = np.arange(W)
    last_closed = np.maximum.accumulate(np.where(~open_, idx, -1), axis=1)
    before = np.empty_like(last_closed)
    before[:, 0] = -1
    before[:, 1:] = last_closed[:, :-1]
    last_start = np.maximum.accumulate(np.where(enter, idx, -1), axis=1)
    return last_start > before


def reflected_sweep(
    state: np.ndarray,
    p: float,
    source: SiteR,
    depth: int,
    cap: int,
    collect_sets: bool = False,
):
    """Column-by-column sweep of the reflected cluster for a replica batch.

    Returns (w, v, survived, capped, sets) with w/v of shape (B, depth+1)
    holding heights relative to the source (inf sentinels for empty columns).
    """
    B = state.shape[0]
    x0, y0 = to_reflected(source)
    width = cap + 1
    rel = np.arange(width)
    enter = np.zeros((B, width), dtype=bool)
    enter[:, 0] = True
    w = np.full((B, depth + 1), NEG_INF)
    v = np.full((B, depth + 1), POS_INF)
    capped = np.zeros(B, dtype=bool)
    sets = [] if collect_sets else None
    closure = enter
    for k in range(depth + 1):
        x = x0 + k
        ys = y0 + rel
        open_k = site_uniforms(state, x + ys, ys - x) < p
        closure = _upward_closure(enter, open_k)
        w[:, k] = _top_heights(closure, 0)
        v[:, k] = _bot_heights(closure, 0)
        capped |= closure[:, -1]
        if collect_sets:
            sets.append(closure.copy())
        if k == depth:
            break
        act = closure & open_k
        enter = act | _shift_up(act)
        if not enter.any():
            # remaining columns stay empty; sentinel rows already filled
            if collect_sets:
                sets.extend(np.zeros((B, width), dtype=bool) for _ in range(depth - k))
            break
    survived = np.isfinite(w[:, depth])
    return w, v, survived, capped, sets


def explore_cluster(
    f: EnvField,
    p: float,
    source: SiteR,
    depth: int,
    height_cap: int | None = None,
) -> ClusterSample:
    """Full forward-cluster sample of one source, swept to reflected depth `depth`."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if not in_lattice(*source):
        raise ValueError(f"source {source} is not a lattice site")
    cap = height_cap if height_cap is not None else 8 * depth + 8
    state = seed_mix(np.array([f.seed], dtype=np.uint64))
    w, v, survived, capped, sets = reflected_sweep(state, p, source, depth, cap, collect_sets=True)
    x0, y0 = to_reflected(source)
    sites = set()
    for k, col in enumerate(sets):
        for j in np.nonzero(col[0])[0]:
            x, y = x0 + k, y0 + int(j)
            sites.add(SiteR(x + y, y - x))
    return ClusterSample(
        source=source,
        depth=depth,
        sites=frozenset(sites),
        w=w[0],
        v=v[0],
        survived=bool(survived[0]),
        height_capped=bool(capped[0]),
    )
