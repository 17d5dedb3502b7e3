"""
Block renormalisation of the lattice: parallelogram crossings and the
coarse-grained site process built from them.

Blocks are indexed like lattice sites.  Block (n, m) has center
C = (L*n, (1-delta)*alpha*L*m) and covers the rectangle
C + [0, (1+delta)L] x [-(1+delta/2)*alpha*L, (1+delta/2)*alpha*L].
Two slope-alpha parallelogram tubes are attached to each block, one rising
(A) and one falling (B, the reflection of A).  A block is coarse-open when
both tubes are crossed left to right by open lattice paths; the resulting
0/1 field is one-dependent oriented site percolation with square-lattice
moves (n, m) -> (n+1, m+-1).

All geometry is exact rational arithmetic (fractions.Fraction): a lattice
site belongs to a region iff it satisfies the defining inequalities exactly,
so there is no floating-point boundary flakiness anywhere in this module.

The right edge x = (1+delta)L of a tube need not be an integer; "reaching the
right" is defined as reaching a site of the closed parallelogram with first
coordinate >= ceil of that edge, a fixed convention recorded in output
metadata.  Specs whose tubes contain no such sites simply never cross.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .env_lattice import EnvField, SiteR, derive_seed, level_uniforms, seed_mix, site_uniforms
from .frontier import _shift_down, _shift_up

RIGHT_EDGE_RULE = "first-coordinate >= ceil(center.x + (1+delta)*L), site inside closed parallelogram"

#: survival-form contraction threshold: the contour bound beats the 3^m
#: contour count exactly when the closed-block probability is below 3^-28.
SURVIVAL_EPS_THRESHOLD = Fraction(1, 3**28)


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(str(v))
    if isinstance(v, str):
        return Fraction(v)
    raise TypeError(f"cannot interpret {v!r} as an exact rational")


@dataclass(frozen=True)
class BlockSpec:
    """Block construction parameters (alpha, delta, L).

    Constraints: 0 < alpha <= 1, 0 < delta < 1/4, L a positive even integer,
    and (1-delta)*alpha*L an even integer (the vertical block step).
    Floats are interpreted through their decimal repr, so BlockSpec(0.75,
    0.2, 10) means exactly 3/4, 1/5, 10.
    """

    alpha: Fraction
    delta: Fraction
    L: int

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frac(self.alpha))
        object.__setattr__(self, "delta", _frac(self.delta))
        object.__setattr__(self, "L", int(self.L))
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.delta < Fraction(1, 4):
            raise ValueError("delta must lie in (0, 0.25)")
        if self.L <= 0 or self.L % 2 != 0:
            raise ValueError("L must be a positive even integer")
        hs = (1 - self.delta) * self.alpha * self.L
        if hs.denominator != 1 or hs.numerator % 2 != 0:
            raise ValueError(f"(1-delta)*alpha*L = {hs} must be an even integer")

    @classmethod
    def unchecked(cls, alpha, delta, L) -> "BlockSpec":
        """Bypass validation (for probing invalid geometries in tests)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "alpha", _frac(alpha))
        object.__setattr__(obj, "delta", _frac(delta))
        object.__setattr__(obj, "L", int(L))
        return obj

    @property
    def height_step(self) -> int:
        return int((1 - self.delta) * self.alpha * self.L)

    @property
    def x_extent(self) -> Fraction:
        return (1 + self.delta) * self.L

    @property
    def tube(self) -> Fraction:
        """Vertical thickness delta*alpha*L of each parallelogram."""
        return self.delta * self.alpha * self.L

    @property
    def half_height(self) -> Fraction:
        return (1 + self.delta / 2) * self.alpha * self.L


Point = tuple[Fraction, Fraction]


@dataclass(frozen=True)
class BlockGeometry:
    """Exact geometry of one block: center, rectangle and both tubes.

    a_vertices / b_vertices are (w0, w1, v0, v1): the lower-then-upper edge
    endpoints of the rising (A) and falling (B) parallelograms.
    """

    spec: BlockSpec
    n: int
    m: int
    center: Point
    rect: tuple[Fraction, Fraction, Fraction, Fraction]  # x0, x1, y0, y1
    a_vertices: tuple[Point, Point, Point, Point]
    b_vertices: tuple[Point, Point, Point, Point]


def block_center(spec: BlockSpec, n: int, m: int) -> Point:
    return (Fraction(spec.L * n), Fraction(spec.height_step * m))


def block_rect(spec: BlockSpec, n: int, m: int):
    cx, cy = block_center(spec, n, m)
    return (cx, cx + spec.x_extent, cy - spec.half_height, cy + spec.half_height)


def block_geometry(spec: BlockSpec, n: int, m: int) -> BlockGeometry:
    cx, cy = block_center(spec, n, m)
    t = spec.tube
    dx = spec.x_extent
    dy = (1 + spec.delta) * spec.alpha * spec.L
    w0 = (cx, cy - 3 * t / 2)
    v0 = (cx, cy - t / 2)
    a = (w0, (w0[0] + dx, w0[1] + dy), v0, (v0[0] + dx, v0[1] + dy))
    b = tuple((x, 2 * cy - y) for (x, y) in a)
    return BlockGeometry(spec, n, m, (cx, cy), block_rect(spec, n, m), a, b)


def _band(spec: BlockSpec, n: int, m: int, which: str):
    """The tube as a band: band_lo <= y -/+ alpha*(x - cx) - cy <= band_hi."""
    t = spec.tube
    if which == "up":
        return (-3 * t / 2, -t / 2, spec.alpha)
    if which == "down":
        return (t / 2, 3 * t / 2, -spec.alpha)
    raise ValueError("which must be 'up' or 'down'")


def _ceil_frac(v: Fraction) -> int:
    return -((-v.numerator) // v.denominator)


def _floor_frac(v: Fraction) -> int:
    return v.numerator // v.denominator


class _TubeColumns:
    """Integer-column slices of one parallelogram, with gate bookkeeping."""

    def __init__(self, spec: BlockSpec, n: int, m: int, which: str):
        cx, cy = block_center(spec, n, m)
        lo, hi, slope = _band(spec, n, m, which)
        self.x0 = int(cx)
        self.xmax = _floor_frac(cx + spec.x_extent)
        self.x_right = _ceil_frac(cx + spec.x_extent)
        self.heights: list[list[int]] = []
        for x in range(self.x0, self.xmax + 1):
            line = cy + slope * (x - cx)
            y_lo = _ceil_frac(line + lo)
            y_hi = _floor_frac(line + hi)
            ys = [y for y in range(y_lo, y_hi + 1) if (x + y) % 2 == 0]
            self.heights.append(ys)

    def column(self, x: int) -> list[int]:
        if self.x0 <= x <= self.xmax:
            return self.heights[x - self.x0]
        return []

    @property
    def left_sites(self) -> list[SiteR]:
        return [SiteR(x, y) for x in (self.x0, self.x0 + 1) for y in self.column(x)]

    @property
    def gate_sites(self) -> list[SiteR]:
        return [
            SiteR(x, y)
            for x in range(max(self.x_right, self.x0), self.xmax + 1)
            for y in self.column(x)
        ]

    @property
    def sites(self) -> list[SiteR]:
        return [SiteR(self.x0 + i, y) for i, hs in enumerate(self.heights) for y in hs]


def parallelogram_sites(spec: BlockSpec, n: int, m: int, which: str) -> list[SiteR]:
    """All lattice sites inside the closed rising or falling tube of a block."""
    return _TubeColumns(spec, n, m, which).sites


def rect_sites(spec: BlockSpec, n: int, m: int) -> list[SiteR]:
    """All lattice sites inside the block's dependency rectangle."""
    x0, x1, y0, y1 = block_rect(spec, n, m)
    out = []
    for x in range(_ceil_frac(x0), _floor_frac(x1) + 1):
        for y in range(_ceil_frac(y0), _floor_frac(y1) + 1):
            if (x + y) % 2 == 0:
                out.append(SiteR(x, y))
    return out


# --- crossings ---


def crossing_witness(field, p: float, spec: BlockSpec, n: int, m: int, which: str):
    """Open left-to-right path through one tube, or None.

    `field` only needs a .uniform(SiteR) method.  Starters are the tube
    sites at the two leftmost columns (reached without being open); steps
    out of a site require it open; the path ends at the first reached site
    with first coordinate >= the right-edge threshold.
    """
    cols = _TubeColumns(spec, n, m, which)
    members = {s for s in cols.sites}
    starts = cols.left_sites
    if not starts:
        return None
    gate = set(cols.gate_sites)
    parents: dict[SiteR, SiteR | None] = {s: None for s in starts}
    frontier = list(starts)
    target = None
    for s in starts:
        if s in gate:
            target = s
            break
    while frontier and target is None:
        nxt = []
        for s in frontier:
            if not (field.uniform(s) < p):
                continue
            for t in (SiteR(s.n + 1, s.m + 1), SiteR(s.n + 2, s.m), SiteR(s.n + 1, s.m - 1)):
                if t in members and t not in parents:
                    parents[t] = s
                    if t in gate:
                        target = t
                        break
                    nxt.append(t)
            if target is not None:
                break
        frontier = nxt
    if target is None:
        return None
    path = [target]
    while parents[path[-1]] is not None:
        path.append(parents[path[-1]])
    path.reverse()
    return path


def crossing_hits(state: np.ndarray, p: float, spec: BlockSpec, n: int, m: int, which: str) -> np.ndarray:
    """Vectorised tube crossing for a batch of replicas; returns (B,) bools."""
    cols = _TubeColumns(spec, n, m, which)
    all_heights = sorted({y for hs in cols.heights for y in hs})
    if not all_heights:
        return np.zeros(state.shape[0], dtype=bool)
    ymin, ymax = all_heights[0], all_heights[-1]
    W = ymax - ymin + 1
    B = state.shape[0]
    member = np.zeros((len(cols.heights), W), dtype=bool)
    for i, hs in enumerate(cols.heights):
        for y in hs:
            member[i, y - ymin] = True
    heights = np.arange(ymin, ymax + 1)
    done = np.zeros(B, dtype=bool)
    cur = np.zeros((B, W), dtype=bool)
    pend = np.zeros((B, W), dtype=bool)
    first_gate = max(cols.x_right, cols.x0) - cols.x0
    for i in range(len(cols.heights)):
        if i == 0:
            cur |= member[0]
        if i == 1:
            cur |= member[1]
        if i >= first_gate:
            done |= cur.any(axis=1)
        if i == len(cols.heights) - 1 or done.all():
            break
        x = cols.x0 + i
        open_i = (level_uniforms(state, x, heights) < p) & cur
        nxt = (_shift_up(open_i) | _shift_down(open_i)) & member[i + 1]
        keep = open_i & (member[i + 2] if i + 2 < len(cols.heights) else False)
        cur = nxt | pend
        pend = keep
    return done


@dataclass(frozen=True)
class EtaSample:
    """Coarse-grained openness of one block and its dependency footprint."""

    z: tuple[int, int]
    value: int
    up_crossed: bool
    down_crossed: bool
    footprint_rect: tuple[Fraction, Fraction, Fraction, Fraction]
    footprint_sites: tuple[SiteR, ...]


def sample_eta(field, p: float, spec: BlockSpec, n: int, m: int) -> EtaSample:
    """Coarse openness of block (n, m): both tubes crossed left to right."""
    if n < 0 or (n + m) % 2 != 0:
        raise ValueError("block index must be a lattice site (n >= 0, n+m even)")
    up = crossing_witness(field, p, spec, n, m, "up") is not None
    down = crossing_witness(field, p, spec, n, m, "down") is not None
    return EtaSample(
        z=(n, m),
        value=int(up and down),
        up_crossed=up,
        down_crossed=down,
        footprint_rect=block_rect(spec, n, m),
        footprint_sites=tuple(rect_sites(spec, n, m)),
    )


def eta_values(seeds, p: float, spec: BlockSpec, n: int, m: int) -> np.ndarray:
    """Batched coarse openness of one block across replica seeds."""
    state = seed_mix(np.asarray(seeds, dtype=np.uint64))
    return crossing_hits(state, p, spec, n, m, "up") & crossing_hits(state, p, spec, n, m, "down")


# --- dependency footprint ---


@dataclass(frozen=True)
class FootprintReport:
    """Exhaustive rectangle-disjointness audit over a block grid."""

    spec_alpha: Fraction
    spec_delta: Fraction
    spec_L: int
    grid_range: int
    checked_pairs: int
    dependent_offsets: tuple[tuple[int, int], ...]
    violations: tuple[tuple[tuple[int, int], tuple[int, int]], ...]

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def dependent_neighbor_count(self) -> int:
        return len(self.dependent_offsets)


ALLOWED_DEPENDENT_OFFSETS = frozenset({(0, 2), (0, -2), (1, 1), (1, -1), (-1, 1), (-1, -1)})


def check_dependence_footprint(spec: BlockSpec, range_: int) -> FootprintReport:
    """Verify that block rectangles only overlap at the six allowed offsets.

    Blocks are indexed by lattice sites, so only index pairs with even
    coordinate sums occur.  Rectangles are translation-covariant: each
    offset class is decided once by exact rational interval arithmetic and
    the verdict applied to every pair of the exhaustive |n|, |m| <= range_
    grid.
    """
    x_span = spec.x_extent  # rect width; rects at dx L apart overlap iff |dx| L <= width
    y_span = 2 * spec.half_height
    hs = spec.height_step

    def overlaps(d: tuple[int, int]) -> bool:
        dx, dy = d
        return abs(dx) * spec.L <= x_span and abs(dy) * hs <= y_span

    verdicts: dict[tuple[int, int], bool] = {}
    dependent = set()
    violations = []
    checked = 0
    grid = [(n, m) for n in range(-range_, range_ + 1) for m in range(-range_, range_ + 1) if (n + m) % 2 == 0]
    for n, m in grid:
        for n2, m2 in grid:
            if (n, m) == (n2, m2):
                continue
            checked += 1
            d = (n2 - n, m2 - m)
            v = verdicts.get(d)
            if v is None:
                v = verdicts[d] = overlaps(d)
            if v:
                dependent.add(d)
                if d not in ALLOWED_DEPENDENT_OFFSETS:
                    if len(violations) < 32:
                        violations.append(((n, m), (n2, m2)))
    return FootprintReport(
        spec_alpha=spec.alpha,
        spec_delta=spec.delta,
        spec_L=spec.L,
        grid_range=range_,
        checked_pairs=checked,
        dependent_offsets=tuple(sorted(dependent)),
        violations=tuple(violations),
    )


# --- coarse-grained percolation ---


@dataclass(frozen=True)
class EtaPercolationResult:
    mode: str
    levels: int
    replicas: int
    survival: float
    se: float
    cluster: frozenset[tuple[int, int]] | None


def run_eta_percolation(
    levels: int,
    replicas: int,
    seed: int,
    mode: str = "underlying",
    p: float | None = None,
    spec: BlockSpec | None = None,
    rate: float | None = None,
) -> EtaPercolationResult:
    """Oriented site percolation of the coarse field with moves (n,m)->(n+1,m+-1).

    The cluster consists of open blocks forming directed square-lattice
    chains from (0, 0); survival means some block at level `levels` is in it.
    In underlying mode block openness comes from tube crossings on a shared
    environment (so neighbouring blocks are dependent exactly as the
    geometry dictates); in synthetic mode blocks are independent coins at
    the given rate, which calibrates the percolation threshold of the
    coarse system itself.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if mode not in ("underlying", "synthetic"):
        raise ValueError("mode must be 'underlying' or 'synthetic'")
    if mode == "underlying" and (p is None or spec is None):
        raise ValueError("underlying mode needs p and a BlockSpec")
    if mode == "synthetic" and rate is None:
        raise ValueError("synthetic mode needs a rate")
    seeds = np.array([derive_seed(seed, r) for r in range(replicas)], dtype=np.uint64)
    state = seed_mix(seeds)
    track = replicas == 1
    cluster = set()

    def block_open(k: int, j: int) -> np.ndarray:
        if mode == "synthetic":
            u = site_uniforms(state, np.array([k]), np.array([j]))[:, 0]
            return u < rate
        return crossing_hits(state, p, spec, k, j, "up") & crossing_hits(state, p, spec, k, j, "down")

    cur = {0: block_open(0, 0)}
    if track and cur[0][0]:
        cluster.add((0, 0))
    for k in range(levels):
        nxt: dict[int, np.ndarray] = {}
        reach: dict[int, np.ndarray] = {}
        for j, occ in cur.items():
            for j2 in (j - 1, j + 1):
                if j2 in reach:
                    reach[j2] = reach[j2] | occ
                else:
                    reach[j2] = occ
        for j2, r in reach.items():
            if not r.any():
                continue
            occ2 = r & block_open(k + 1, j2)
            if occ2.any():
                nxt[j2] = occ2
                if track and occ2[0]:
                    cluster.add((k + 1, j2))
        cur = nxt
        if not cur:
            break
    alive = np.zeros(replicas, dtype=bool)
    for occ in cur.values():
        alive |= occ
    surv = float(alive.mean()) if replicas else 0.0
    se = math.sqrt(surv * (1 - surv) / replicas) if replicas else 0.0
    return EtaPercolationResult(
        mode=mode,
        levels=levels,
        replicas=replicas,
        survival=surv,
        se=se,
        cluster=frozenset(cluster) if track else None,
    )


# --- splicing ---


def _heights_at_integer_x(path: list[SiteR]) -> dict[int, tuple[int, bool]]:
    """x -> (height, at_vertex) along the piecewise-linear joined path."""
    out = {path[0].n: (path[0].m, True)}
    for a, b in zip(path, path[1:]):
        if b.n - a.n == 2:
            out[a.n + 1] = (a.m, False)  # midpoint of a (2,0) step, not a lattice point
        out[b.n] = (b.m, True)
    return out


def splice_witness(field, p: float, spec: BlockSpec, n: int, m: int):
    """Explicit open path joining block (n, m)'s rise to block (n+1, m+1)'s fall.

    Returns None unless both blocks are coarse-open.  When they are, the
    rising witness of (n, m) and the falling witness of (n+1, m+1) must
    intersect at a shared lattice vertex (the falling path starts above the
    rising tube and ends below it), and the spliced prefix+suffix is an open
    path from a left starter of block (n, m) to a right endpoint of block
    (n+1, m+1).  The returned path is verified open edge by edge.
    """
    p1 = crossing_witness(field, p, spec, n, m, "up")
    p2 = crossing_witness(field, p, spec, n + 1, m + 1, "down")
    if p1 is None or p2 is None:
        return None
    if crossing_witness(field, p, spec, n, m, "down") is None:
        return None
    if crossing_witness(field, p, spec, n + 1, m + 1, "up") is None:
        return None
    h1 = _heights_at_integer_x(p1)
    h2 = _heights_at_integer_x(p2)
    meet = None
    for x in sorted(set(h1) & set(h2)):
        (y1, v1), (y2, v2) = h1[x], h2[x]
        if y1 == y2 and v1 and v2:
            meet = SiteR(x, y1)
            break
    if meet is None:
        raise RuntimeError(f"crossing paths failed to intersect at a vertex (block {(n, m)})")
    spliced = p1[: p1.index(meet)] + p2[p2.index(meet):]
    verify_open_path(field, p, spliced)
    return spliced


def verify_open_path(field, p: float, path: list[SiteR]) -> None:
    """Check step validity and openness of every non-terminal site; raise if broken."""
    for a, b in zip(path, path[1:]):
        if (b.n - a.n, b.m - a.m) not in ((1, 1), (2, 0), (1, -1)):
            raise ValueError(f"invalid step {a} -> {b}")
        if not (field.uniform(a) < p):
            raise ValueError(f"path steps out of closed site {a}")


# --- contour bound evaluation ---


@dataclass(frozen=True)
class PeierlsBound:
    """Evaluation of the contour-counting decay factor for the coarse field.

    Survival form: factor = 3 * eps^(1/28), contracting exactly when
    eps < 3^-28 (eps is the probability a block is coarse-closed).  Slope
    form (with a rate q < 1): factor = 3 * eps^((1-q)/28).  gamma is the
    implied per-level decay rate -log(factor); bound_at_N evaluates
    factor^(2N) with the unknown prefactor set to 1.
    """

    eps: Fraction
    form: str
    q: Fraction | None
    factor: float
    gamma: float
    contracts: bool
    survival_threshold: Fraction
    N: int | None
    bound_at_N: float | None


def peierls_bound(eps, N: int | None = None, q=None) -> PeierlsBound:
    eps = _frac(eps)
    if not 0 < eps < Fraction(1, 2):
        raise ValueError("eps must lie in (0, 0.5)")
    if q is None:
        factor = 3.0 * float(eps) ** (1.0 / 28.0)
        contracts = eps < SURVIVAL_EPS_THRESHOLD  # exact rational comparison
        form = "survival"
        qf = None
    else:
        qf = _frac(q)
        if not 0 <= qf < 1:
            raise ValueError("q must lie in [0, 1)")
        factor = 3.0 * float(eps) ** (float(1 - qf) / 28.0)
        contracts = factor < 1.0
        form = "slope"
    gamma = -math.log(factor)
    return PeierlsBound(
        eps=eps,
        form=form,
        q=qf,
        factor=factor,
        gamma=gamma,
        contracts=contracts,
        survival_threshold=SURVIVAL_EPS_THRESHOLD,
        N=N,
        bound_at_N=factor ** (2 * N) if N is not None else None,
    )
