"""
Exact desk-scale ground truth for the simulation engines.

Everything here is computed in exact rational arithmetic.  Densities given
as binary64 floats are interpreted exactly (every float is a dyadic
rational), so an oracle probability is exactly the probability of the event
under the simulator's `uniform < p` coupling, and Monte Carlo frequencies
can be tested against oracle values with nothing but sampling error.

The workhorse is a frontier dynamic program: instead of summing over all
2^sites openness assignments one by one, configurations are grouped by the
frontier state they induce level by level (reached set, pending double-step
contributions), which is a lossless reorganisation of the full enumeration.
Site openness is only ever branched at reached sites, because the openness
of an unreached site can never influence anything downstream.

Light-cone windows make every distribution finite: per-level height change
is at most one, so a level-n statistic only sees sites a starter can touch
within n levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .block_renorm import BlockSpec, _TubeColumns
from .frontier import StarterSpec, _materialize

NEG_INF = float("-inf")
POS_INF = float("inf")


class OracleRangeError(ValueError):
    """Requested instance exceeds the oracle's exact-computation range."""


@dataclass(frozen=True)
class ExactDist:
    """Finite probability distribution with exact rational weights.

    Support values are integers, with -inf / +inf sentinels for "frontier
    dead" and "beyond horizon" atoms.  Probabilities are Fractions and sum
    to exactly 1.
    """

    support: tuple[float, ...]
    probs: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise ValueError("support/probs length mismatch")
        if any(pr < 0 for pr in self.probs):
            raise ValueError("negative probability")
        if sum(self.probs, Fraction(0)) != 1:
            raise ValueError("probabilities must sum to exactly 1")

    def prob(self, value) -> Fraction:
        for v, pr in zip(self.support, self.probs):
            if v == value:
                return pr
        return Fraction(0)

    def prob_at_least(self, value) -> Fraction:
        return sum((pr for v, pr in zip(self.support, self.probs) if v >= value), Fraction(0))

    def mean(self):
        """Exact mean; -inf/+inf if the matching sentinel carries mass."""
        for sentinel in (NEG_INF, POS_INF):
            if self.prob(sentinel) > 0:
                return sentinel
        return sum((Fraction(int(v)) * pr for v, pr in zip(self.support, self.probs)), Fraction(0))

    def rows(self):
        return [(v, str(pr), float(pr)) for v, pr in zip(self.support, self.probs)]


def _dist_from_weights(weights: dict) -> ExactDist:
    items = sorted(weights.items(), key=lambda kv: kv[0])
    return ExactDist(tuple(v for v, _ in items), tuple(pr for _, pr in items))


# --- exact frontier DP machinery ---


def _bit_indices(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


class _LevelMaps:
    """Bitmask transition tables between consecutive height windows."""

    def __init__(self, levels: list[list[int]]):
        self.levels = levels
        self.pos = [{h: i for i, h in enumerate(hs)} for hs in levels]
        self.shift: list[list[int]] = []
        self.keep: list[list[int]] = []
        for l in range(len(levels) - 1):
            srow, krow = [], []
            nxt = self.pos[l + 1]
            nnxt = self.pos[l + 2] if l + 2 < len(levels) else {}
            for h in levels[l]:
                t = 0
                if h + 1 in nxt:
                    t |= 1 << nxt[h + 1]
                if h - 1 in nxt:
                    t |= 1 << nxt[h - 1]
                srow.append(t)
                krow.append(1 << nnxt[h] if h in nnxt else 0)
            self.shift.append(srow)
            self.keep.append(krow)

    def mask(self, level: int, heights: Iterable[int]) -> int:
        pos = self.pos[level]
        m = 0
        for h in heights:
            if h in pos:
                m |= 1 << pos[h]
        return m

    def top(self, level: int, mask: int) -> float:
        if mask == 0:
            return NEG_INF
        return float(self.levels[level][mask.bit_length() - 1])


def _openness_weights(k: int, p: Fraction) -> list[Fraction]:
    """Weight of an openness pattern by popcount, for k branched sites."""
    q = 1 - p
    return [p**j * q ** (k - j) for j in range(k + 1)]


def _reach_levels(col0: list[int], col1: list[int], n: int, floor_at=None) -> list[list[int]]:
    """Per-level reachable-height supersets for starters at columns 0 and 1."""
    levels = [set(col0)]
    for l in range(1, n + 1):
        s = {y + d for y in levels[l - 1] for d in (1, -1)}
        if l == 1:
            s |= set(col1)
        if l >= 2:
            s |= levels[l - 2]
        if floor_at is not None:
            s = {y for y in s if y >= floor_at(l)}
        levels.append(s)
    return [sorted(s) for s in levels]


def _frac_p(p) -> Fraction:
    pf = p if isinstance(p, Fraction) else Fraction(p)
    if not 0 <= pf <= 1:
        raise ValueError("p must lie in [0, 1]")
    return pf


# --- operations ---


def exact_tau_dist(p, n_max: int) -> ExactDist:
    """Exact distribution of the frontier death time from the origin.

    Support is {1, ..., n_max} plus a +inf atom for survival beyond n_max.
    Death at 0 is impossible (the origin is self-connected) and death at 2
    is impossible (a live level 1 forces the origin open, whose double step
    reaches level 2).
    """
    pf = _frac_p(p)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if n_max > 8:
        sites = n_max * (n_max + 1) // 2
        raise OracleRangeError(
            f"n_max={n_max} branches {sites} sites (2^{sites} assignments); limit is 8"
        )
    levels = _reach_levels([0], [], n_max)
    maps = _LevelMaps(levels)
    weights: dict[float, Fraction] = {}
    states: dict[tuple[int, int], Fraction] = {(1, 0): Fraction(1)}
    for l in range(n_max + 1):
        new: dict[tuple[int, int], Fraction] = {}
        for (cur, pend), w in states.items():
            if cur == 0:
                weights[float(l)] = weights.get(float(l), Fraction(0)) + w
                continue
            if l == n_max:
                weights[POS_INF] = weights.get(POS_INF, Fraction(0)) + w
                continue
            bits = _bit_indices(cur)
            wts = _openness_weights(len(bits), pf)
            for o in range(1 << len(bits)):
                prob = wts[o.bit_count()]
                nxt, npend = pend, 0
                for t, b in enumerate(bits):
                    if o >> t & 1:
                        nxt |= maps.shift[l][b]
                        npend |= maps.keep[l][b]
                key = (nxt, npend)
                new[key] = new.get(key, Fraction(0)) + w * prob
        states = new
    return _dist_from_weights(weights)


def exact_dist_u(
    p,
    n: int,
    start: StarterSpec,
    K: int | None = None,
    conditional_on_untruncated: bool = False,
) -> ExactDist:
    """Exact distribution of the level-n frontier top for a starter spec.

    Includes the -inf dead atom.  With conditional_on_untruncated=True the
    distribution is conditioned on the top never dropping below start - K
    at any level (the same event the simulators use to discard replicas
    whose half-line truncation may have bitten), matching their kept-replica
    population exactly.
    """
    pf = _frac_p(p)
    if n < 1:
        raise ValueError("n must be >= 1")
    if K is None:
        K = n
    mat = _materialize(start, n, K)
    levels = _reach_levels(mat.col0, mat.col1, n)
    branched = sum(len(hs) for hs in levels[:-1])
    if branched > 24:
        raise OracleRangeError(
            f"window branches {branched} sites (2^{branched} assignments); limit is 24"
        )
    maps = _LevelMaps(levels)
    top0 = max(mat.col0) if mat.col0 else max(mat.col1) - 1
    threshold = top0 - K
    inject1 = maps.mask(1, mat.col1) if mat.col1 and n >= 1 else 0
    states: dict[tuple[int, int, bool], Fraction] = {
        (maps.mask(0, mat.col0), 0, False): Fraction(1)
    }
    for l in range(n):
        new: dict[tuple[int, int, bool], Fraction] = {}
        for (cur, pend, taint), w in states.items():
            bits = _bit_indices(cur)
            wts = _openness_weights(len(bits), pf)
            for o in range(1 << len(bits)):
                prob = wts[o.bit_count()]
                nxt, npend = pend, 0
                for t, b in enumerate(bits):
                    if o >> t & 1:
                        nxt |= maps.shift[l][b]
                        npend |= maps.keep[l][b]
                if l == 0:
                    nxt |= inject1
                ntaint = taint or maps.top(l + 1, nxt) < threshold
                key = (nxt, npend, ntaint)
                new[key] = new.get(key, Fraction(0)) + w * prob
        states = new
    weights: dict[float, Fraction] = {}
    kept: dict[float, Fraction] = {}
    for (cur, _pend, taint), w in states.items():
        v = maps.top(n, cur)
        weights[v] = weights.get(v, Fraction(0)) + w
        if not taint:
            kept[v] = kept.get(v, Fraction(0)) + w
    if not conditional_on_untruncated:
        return _dist_from_weights(weights)
    total = sum(kept.values(), Fraction(0))
    if total == 0:
        raise OracleRangeError("no untruncated mass: increase K")
    return _dist_from_weights({v: w / total for v, w in kept.items()})


@dataclass(frozen=True)
class AddingPointsGap:
    """Certified lower bound on the expected top-edge gain from adding the origin.

    The reference starter set is the half-line at columns 0 and 1 below the
    origin.  Deep starters are summarised exactly by censoring the level-n
    top at `censor`: a starter below censor - n cannot exceed censor, so the
    censored gap over the retained window equals the censored gap over the
    full half-line, and censoring only ever shrinks the pathwise difference.
    Hence gap_lower_bound <= the true expected gap, and the 2p test below is
    a sound certificate.
    """

    p: Fraction
    n: int
    censor: int
    starter_floor: int
    gap_lower_bound: Fraction
    bound_2p: Fraction

    @property
    def ok(self) -> bool:
        return self.gap_lower_bound >= self.bound_2p


def exact_addingpoints(p, n: int, depth_margin: int = 4) -> AddingPointsGap:
    """Exact censored gap E[(top_from_origin - max(top_from_halfline, censor))+]."""
    pf = _frac_p(p)
    if not 0 <= n <= 3:
        raise OracleRangeError("n must lie in 0..3")
    censor = -(n + 1 + depth_margin)
    floor = censor - n
    col0_c = [y for y in range(floor, -1) if y % 2 == 0]
    col1_c = [y for y in range(floor, 0) if abs(y) % 2 == 1]
    if n == 0:
        # no randomness: tops are 0 and max(top starter, censor)
        top_c = max(max(col0_c), censor)
        return AddingPointsGap(pf, 0, censor, floor, Fraction(0 - top_c), 2 * pf)

    def prune(l: int) -> int:
        return censor - (n - l)

    lev_o = _reach_levels([0], [], n)
    lev_c = _reach_levels(col0_c, col1_c, n, floor_at=prune)
    levels = [sorted(set(a) | set(b)) for a, b in zip(lev_o, lev_c)]
    maps = _LevelMaps(levels)
    inject_c = maps.mask(1, col1_c)
    start = (maps.mask(0, [0]), 0, maps.mask(0, col0_c), 0)
    states: dict[tuple[int, int, int, int], Fraction] = {start: Fraction(1)}
    for l in range(n):
        new: dict[tuple[int, int, int, int], Fraction] = {}
        for (cur_o, pend_o, cur_c, pend_c), w in states.items():
            union = cur_o | cur_c
            bits = _bit_indices(union)
            wts = _openness_weights(len(bits), pf)
            for o in range(1 << len(bits)):
                prob = wts[o.bit_count()]
                no_, np_o, nc, np_c = pend_o, 0, pend_c, 0
                for t, b in enumerate(bits):
                    if o >> t & 1:
                        flag = 1 << b
                        if cur_o & flag:
                            no_ |= maps.shift[l][b]
                            np_o |= maps.keep[l][b]
                        if cur_c & flag:
                            nc |= maps.shift[l][b]
                            np_c |= maps.keep[l][b]
                if l == 0:
                    nc |= inject_c
                key = (no_, np_o, nc, np_c)
                new[key] = new.get(key, Fraction(0)) + w * prob
        states = new
    gap = Fraction(0)
    for (cur_o, _po, cur_c, _pc), w in states.items():
        t_o = maps.top(n, cur_o)
        if t_o == NEG_INF:
            continue
        t_c = max(maps.top(n, cur_c), float(censor))
        if t_o > t_c:
            gap += w * Fraction(int(t_o) - int(t_c))
    return AddingPointsGap(pf, n, censor, floor, gap, 2 * pf)


@dataclass(frozen=True)
class CrossingProbabilities:
    """Exact tube-crossing probabilities of one block (and their joint)."""

    p: Fraction
    p_up: Fraction
    p_down: Fraction
    p_both: Fraction
    columns: int
    max_column_width: int
    sites_up: int
    sites_down: int


def exact_crossing(p, spec: BlockSpec, n: int = 0, m: int = 0) -> CrossingProbabilities:
    """Joint exact probability that a block's tubes are crossed left to right.

    The two tubes share sites near the left throat, so the joint probability
    is computed by evolving both frontiers on one branched environment.
    """
    pf = _frac_p(p)
    up = _TubeColumns(spec, n, m, "up")
    down = _TubeColumns(spec, n, m, "down")
    ncols = up.xmax - up.x0 + 1
    levels = [sorted(set(up.column(up.x0 + i)) | set(down.column(up.x0 + i))) for i in range(ncols)]
    width = max((len(hs) for hs in levels), default=0)
    if width > 20:
        raise OracleRangeError(
            f"column width {width} exceeds the exact-DP limit of 20 "
            f"({ncols} columns, {sum(map(len, levels))} sites)"
        )
    maps = _LevelMaps(levels)
    mem_up = [maps.mask(i, up.column(up.x0 + i)) for i in range(ncols)]
    mem_dn = [maps.mask(i, down.column(up.x0 + i)) for i in range(ncols)]
    gate_up_first = max(up.x_right, up.x0) - up.x0
    gate_dn_first = max(down.x_right, down.x0) - down.x0

    outcomes: dict[tuple[bool, bool], Fraction] = {}

    def absorb(key, w):
        outcomes[key] = outcomes.get(key, Fraction(0)) + w

    # state: (cur_up, pend_up, done_up, cur_dn, pend_dn, done_dn)
    states = {(mem_up[0], 0, False, mem_dn[0], 0, False): Fraction(1)}
    for i in range(ncols):
        new: dict[tuple, Fraction] = {}
        for (cu, pu, du, cd, pd, dd), w in states.items():
            if not du and i >= gate_up_first and cu:
                du, cu, pu = True, 0, 0
            if not dd and i >= gate_dn_first and cd:
                dd, cd, pd = True, 0, 0
            dead_u = du or (cu == 0 and pu == 0)
            dead_d = dd or (cd == 0 and pd == 0)
            if (dead_u and dead_d) or i == ncols - 1:
                absorb((du, dd), w)
                continue
            union = cu | cd
            bits = _bit_indices(union)
            wts = _openness_weights(len(bits), pf)
            for o in range(1 << len(bits)):
                prob = wts[o.bit_count()]
                ncu, npu, ncd, npd = pu, 0, pd, 0
                for t, b in enumerate(bits):
                    if o >> t & 1:
                        flag = 1 << b
                        if cu & flag:
                            ncu |= maps.shift[i][b]
                            npu |= maps.keep[i][b]
                        if cd & flag:
                            ncd |= maps.shift[i][b]
                            npd |= maps.keep[i][b]
                ncu &= mem_up[i + 1]
                ncd &= mem_dn[i + 1]
                if i + 2 < ncols:
                    npu &= mem_up[i + 2]
                    npd &= mem_dn[i + 2]
                else:
                    npu = npd = 0
                if i == 0:
                    ncu |= mem_up[1]
                    ncd |= mem_dn[1]
                key = (ncu, npu, du, ncd, npd, dd)
                new[key] = new.get(key, Fraction(0)) + w * prob
        states = new
    p_both = outcomes.get((True, True), Fraction(0))
    p_up = p_both + outcomes.get((True, False), Fraction(0))
    p_down = p_both + outcomes.get((False, True), Fraction(0))
    return CrossingProbabilities(
        p=pf,
        p_up=p_up,
        p_down=p_down,
        p_both=p_both,
        columns=ncols,
        max_column_width=width,
        sites_up=len(up.sites),
        sites_down=len(down.sites),
    )


# --- contours ---


_SEGMENTS = ("NE", "NW", "SW", "SE")
_REVERSAL = {"NE": "SW", "SW": "NE", "NW": "SE", "SE": "NW"}
# contribution of each segment to (d1, d2) = (#NE + #SE - #NW - #SW, #NE + #NW - #SW - #SE)
_DELTAS = {"NE": (1, 1), "NW": (-1, 1), "SW": (-1, -1), "SE": (1, -1)}


@dataclass(frozen=True)
class ContourWord:
    """Contour as a segment word; immediate reversals are forbidden."""

    segments: tuple[str, ...]

    def __post_init__(self):
        for s in self.segments:
            if s not in _SEGMENTS:
                raise ValueError(f"unknown segment {s!r}")
        for a, b in zip(self.segments, self.segments[1:]):
            if _REVERSAL[a] == b:
                raise ValueError(f"immediate reversal {a} -> {b}")

    def balance(self) -> tuple[int, int]:
        d1 = d2 = 0
        for s in self.segments:
            a, b = _DELTAS[s]
            d1 += a
            d2 += b
        return d1, d2


@dataclass(frozen=True)
class ContourCount:
    m: int
    first_fixed: bool
    no_reversal_count: int
    bound_3_pow: int
    closure_targets: tuple[int, int] | None
    balanced_count: int | None


def count_contours(
    m: int,
    first_fixed: bool = True,
    closure_targets: tuple[int, int] | None = None,
) -> ContourCount:
    """Count non-reversing contour words of length m (first segment NE if fixed).

    Optionally also counts the words whose (d1, d2) balance hits the given
    closure targets.  Dynamic program over (last segment, d1, d2); m <= 18.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > 18:
        raise OracleRangeError(f"m={m} exceeds the enumeration limit of 18")
    counts: dict[tuple[str, int, int], int] = {}
    firsts = ("NE",) if first_fixed else _SEGMENTS
    for s in firsts:
        d = _DELTAS[s]
        counts[(s, d[0], d[1])] = counts.get((s, d[0], d[1]), 0) + 1
    for _ in range(m - 1):
        new: dict[tuple[str, int, int], int] = {}
        for (last, d1, d2), c in counts.items():
            for s in _SEGMENTS:
                if _REVERSAL[last] == s:
                    continue
                a, b = _DELTAS[s]
                key = (s, d1 + a, d2 + b)
                new[key] = new.get(key, 0) + c
        counts = new
    total = sum(counts.values())
    balanced = None
    if closure_targets is not None:
        t1, t2 = closure_targets
        balanced = sum(c for (s, d1, d2), c in counts.items() if (d1, d2) == (t1, t2))
    return ContourCount(
        m=m,
        first_fixed=first_fixed,
        no_reversal_count=total,
        bound_3_pow=3 ** (m - 1) * (1 if first_fixed else 4),
        closure_targets=closure_targets,
        balanced_count=balanced,
    )
