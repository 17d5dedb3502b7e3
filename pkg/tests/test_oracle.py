import itertools
import math
from fractions import Fraction

import pytest

from operc.block_renorm import BlockSpec, crossing_witness
from operc.env_lattice import SiteR
from operc.frontier import StarterSpec
from operc.oracle import (
    NEG_INF,
    POS_INF,
    ContourCount,
    ContourWord,
    ExactDist,
    OracleRangeError,
    count_contours,
    exact_addingpoints,
    exact_crossing,
    exact_dist_u,
    exact_tau_dist,
)

F = Fraction


# --- reference machinery: explicit-environment evolution for brute force ---


def _reach_windows(col0, col1, n):
    levels = [set(col0)]
    for l in range(1, n + 1):
        s = {y + d for y in levels[l - 1] for d in (1, -1)}
        if l == 1:
            s |= set(col1)
        if l >= 2:
            s |= levels[l - 2]
        levels.append(s)
    return levels


def _ref_frontiers(open_map, col0, col1, n):
    cur = set(col0)
    prev_open = set()
    out = [set(cur)]
    for l in range(n):
        opens = {m for m in cur if open_map.get((l, m), False)}
        nxt = {m + d for m in opens for d in (1, -1)} | prev_open
        if l == 0:
            nxt |= set(col1)
        prev_open = opens
        cur = nxt
        out.append(set(cur))
    return out


def _brute(col0, col1, n, p: Fraction, stat):
    """Exact expectation of stat(frontier levels) by full enumeration."""
    sites = sorted(
        (l, m) for l in range(n) for m in _reach_windows(col0, col1, n)[l]
    )
    acc = {}
    for bits in itertools.product((False, True), repeat=len(sites)):
        w = F(1)
        for b in bits:
            w *= p if b else 1 - p
        open_map = dict(zip(sites, bits))
        v = stat(_ref_frontiers(open_map, col0, col1, n))
        acc[v] = acc.get(v, F(0)) + w
    return acc


def _tau_stat(levels):
    for i, s in enumerate(levels):
        if not s:
            return float(i)
    return POS_INF


def _top_stat(levels):
    return float(max(levels[-1])) if levels[-1] else NEG_INF


# --- death-time distribution ---


def test_tau_dist_closed_forms():
    p = 0.6
    d = exact_tau_dist(p, 5)
    pf = F(p)
    assert d.prob(1.0) == 1 - pf
    assert d.prob(2.0) == 0
    assert d.prob(3.0) == pf * (1 - pf) ** 3
    assert abs(float(d.prob(3.0)) - 0.0384) < 1e-12
    assert sum(d.probs, F(0)) == 1


@pytest.mark.parametrize("p", [0.25, 0.5, 0.8])
@pytest.mark.parametrize("n_max", [1, 2, 3, 4])
def test_tau_dist_matches_brute_force(p, n_max):
    got = exact_tau_dist(p, n_max)
    want = _brute([0], [], n_max, F(p), _tau_stat)
    for v, pr in want.items():
        assert got.prob(v) == pr, (v, p, n_max)


def test_tau_dist_refuses_large():
    with pytest.raises(OracleRangeError):
        exact_tau_dist(0.5, 9)


def test_tau_dist_extremes():
    assert exact_tau_dist(1.0, 4).prob(POS_INF) == 1
    assert exact_tau_dist(0.0, 4).prob(1.0) == 1


# --- level-top distribution ---


def test_dist_u_hand_case():
    # start {0}, n = 2, p = 1/2: dead 1/2; top 0 iff origin open and (1,1)
    # closed (the double step always lands); top 2 iff both open
    d = exact_dist_u(0.5, 2, StarterSpec.origin())
    assert d.prob(NEG_INF) == F(1, 2)
    assert d.prob(0.0) == F(1, 4)
    assert d.prob(2.0) == F(1, 4)
    assert d.prob(-2.0) == 0


def test_dist_u_extremes():
    assert exact_dist_u(1.0, 3, StarterSpec.origin()).prob(3.0) == 1
    assert exact_dist_u(0.0, 2, StarterSpec.origin()).prob(NEG_INF) == 1
    # self-connected column-1 starters keep level 1 alive even at p = 0
    d = exact_dist_u(0.0, 1, StarterSpec.half_below(0), K=2)
    assert d.prob(-1.0) == 1


@pytest.mark.parametrize("p", [0.3, 0.5, 0.75])
def test_dist_u_matches_brute_force(p):
    spec = StarterSpec(column0=(0, -2), column1=(-1,))
    got = exact_dist_u(p, 3, spec)
    want = _brute([0, -2], [-1], 3, F(p), _top_stat)
    for v, pr in want.items():
        assert got.prob(v) == pr, (v, p)


def test_dist_u_halfline_matches_brute_force():
    p = 0.5
    spec = StarterSpec.half_below(0)
    got = exact_dist_u(p, 2, spec, K=2)
    col0 = [y for y in range(-4, 1) if y % 2 == 0]
    col1 = [y for y in range(-4, 0) if y % 2 != 0]
    want = _brute(col0, col1, 2, F(p), _top_stat)
    for v, pr in want.items():
        assert got.prob(v) == pr


def test_dist_u_conditional_on_untruncated():
    spec = StarterSpec.half_below(0)
    d = exact_dist_u(0.5, 2, spec, K=2, conditional_on_untruncated=True)
    assert all(v >= -2 for v in d.support)
    assert sum(d.probs, F(0)) == 1


def test_dist_u_refuses_large_windows():
    with pytest.raises(OracleRangeError):
        exact_dist_u(0.5, 6, StarterSpec.half_below(0), K=6)


def test_exact_dist_validation():
    with pytest.raises(ValueError):
        ExactDist((0.0,), (F(1, 2),))
    with pytest.raises(ValueError):
        ExactDist((0.0, 1.0), (F(3, 2), F(-1, 2)))


# --- adding the origin to a half-line ---


def test_addingpoints_level_zero_and_one():
    for p in (0.25, 0.5, 0.75):
        g0 = exact_addingpoints(p, 0)
        assert g0.gap_lower_bound == 2
        assert g0.ok
        # at n = 1 the half-line top is -1 with certainty (self-connection),
        # so the gap is exactly 2p and the bound is tight
        g1 = exact_addingpoints(p, 1)
        assert g1.gap_lower_bound == 2 * F(p)
        assert g1.ok


def test_addingpoints_matches_brute_force_n2():
    p = F(0.5)
    g = exact_addingpoints(0.5, 2, depth_margin=2)
    censor = g.censor
    col0 = [y for y in range(g.starter_floor, -1) if y % 2 == 0]
    col1 = [y for y in range(g.starter_floor, 0) if abs(y) % 2 == 1]
    sites = sorted(
        set((l, m) for l in range(2) for m in _reach_windows([0], [], 2)[l])
        | set((l, m) for l in range(2) for m in _reach_windows(col0, col1, 2)[l])
    )
    gap = F(0)
    for bits in itertools.product((False, True), repeat=len(sites)):
        w = F(1)
        for b in bits:
            w *= p if b else 1 - p
        open_map = dict(zip(sites, bits))
        t_o = _top_stat(_ref_frontiers(open_map, [0], [], 2))
        t_c = max(_top_stat(_ref_frontiers(open_map, col0, col1, 2)), censor)
        if t_o > t_c:
            gap += w * int(t_o - t_c)
    assert g.gap_lower_bound == gap
    assert g.ok


def test_addingpoints_deterministic_env():
    g = exact_addingpoints(1.0, 2)
    assert g.gap_lower_bound == 2
    assert g.ok


def test_addingpoints_bound_grid():
    for p in (0.25, 0.5, 0.75):
        for n in (0, 1, 2, 3):
            g = exact_addingpoints(p, n)
            assert g.ok, (p, n, g.gap_lower_bound)


def test_addingpoints_range():
    with pytest.raises(OracleRangeError):
        exact_addingpoints(0.5, 4)


# --- contours ---


def test_contour_counts_small():
    assert count_contours(1).no_reversal_count == 1
    assert count_contours(2).no_reversal_count == 3
    c10 = count_contours(10)
    assert c10.no_reversal_count == 3**9 == c10.bound_3_pow
    assert count_contours(3, first_fixed=False).no_reversal_count == 4 * 9


def _enumerate_words(m, first_fixed):
    segs = ("NE", "NW", "SW", "SE")
    rev = {"NE": "SW", "SW": "NE", "NW": "SE", "SE": "NW"}
    firsts = ("NE",) if first_fixed else segs
    words = [[s] for s in firsts]
    for _ in range(m - 1):
        words = [w + [s] for w in words for s in segs if rev[w[-1]] != s]
    return words


@pytest.mark.parametrize("m", [1, 2, 4, 6])
@pytest.mark.parametrize("first_fixed", [True, False])
def test_contour_dp_matches_enumeration(m, first_fixed):
    words = _enumerate_words(m, first_fixed)
    c = count_contours(m, first_fixed=first_fixed)
    assert c.no_reversal_count == len(words)
    target = (0, -2)
    cb = count_contours(m, first_fixed=first_fixed, closure_targets=target)
    explicit = sum(1 for w in words if ContourWord(tuple(w)).balance() == target)
    assert cb.balanced_count == explicit


def test_contour_word_validation():
    ContourWord(("NE", "NW", "SW"))
    with pytest.raises(ValueError):
        ContourWord(("NE", "SW"))
    with pytest.raises(ValueError):
        ContourWord(("XX",))
    with pytest.raises(OracleRangeError):
        count_contours(19)


# --- block crossings ---

FIG_SPEC = BlockSpec("3/4", "1/5", 10)


def test_crossing_extremes():
    c1 = exact_crossing(1.0, FIG_SPEC)
    assert c1.p_both == 1 and c1.p_up == 1 and c1.p_down == 1
    c0 = exact_crossing(0.0, FIG_SPEC)
    assert c0.p_both == 0


def test_crossing_joint_bounds():
    c = exact_crossing(0.8, FIG_SPEC)
    assert 0 < c.p_both <= min(c.p_up, c.p_down)
    assert c.p_both >= c.p_up + c.p_down - 1
    assert c.p_up == c.p_down  # reflection symmetry of the two tubes


class _DictField:
    def __init__(self, open_sites, p):
        self.open_sites = open_sites
        self.p = p

    def uniform(self, s):
        return 0.0 if s in self.open_sites else 1.0 - 2**-53


def test_crossing_marginal_matches_brute_force():
    # thin tube: few enough sites for full enumeration of one parallelogram
    spec = BlockSpec("1/2", "1/5", 10)
    from operc.block_renorm import parallelogram_sites

    sites = parallelogram_sites(spec, 0, 0, "up")
    assert 0 < len(sites) <= 14
    p = F(0.7)
    total = F(0)
    for bits in itertools.product((False, True), repeat=len(sites)):
        w = F(1)
        for b in bits:
            w *= p if b else 1 - p
        fld = _DictField({s for s, b in zip(sites, bits) if b}, 0.7)
        if crossing_witness(fld, 0.5, spec, 0, 0, "up") is not None:
            total += w
    got = exact_crossing(0.7, spec)
    assert got.p_up == total
