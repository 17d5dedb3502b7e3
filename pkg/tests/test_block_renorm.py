import math
from fractions import Fraction

import numpy as np
import pytest

from operc.block_renorm import (
    ALLOWED_DEPENDENT_OFFSETS,
    SURVIVAL_EPS_THRESHOLD,
    BlockSpec,
    block_center,
    block_geometry,
    block_rect,
    check_dependence_footprint,
    crossing_hits,
    crossing_witness,
    eta_values,
    parallelogram_sites,
    peierls_bound,
    rect_sites,
    run_eta_percolation,
    sample_eta,
    splice_witness,
    verify_open_path,
)
from operc.env_lattice import EnvField, SiteR, derive_seed, seed_mix
from operc.oracle import exact_crossing

F = Fraction
FIG = BlockSpec("3/4", "1/5", 10)  # the worked example: delta=.2, alpha=.75, L=10


def test_block_spec_validation():
    assert FIG.height_step == 6
    assert FIG.x_extent == 12
    with pytest.raises(ValueError):
        BlockSpec("3/4", "3/10", 10)  # delta >= 0.25
    with pytest.raises(ValueError):
        BlockSpec("3/4", "1/5", 9)  # odd L
    with pytest.raises(ValueError):
        BlockSpec("2/3", "1/5", 10)  # (1-delta)*alpha*L not an even integer
    with pytest.raises(ValueError):
        BlockSpec("5/4", "1/5", 16)  # alpha > 1
    bad = BlockSpec.unchecked("3/4", "3/10", 10)
    assert bad.delta == F(3, 10)


def test_geometry_worked_values():
    assert block_center(FIG, 1, 1) == (F(10), F(6))
    g = block_geometry(FIG, 0, 0)
    w0, w1, v0, v1 = g.a_vertices
    assert w0 == (F(0), F(-9, 4))  # (0, -2.25)
    assert w1 == (F(12), F(27, 4))  # (12, 6.75)
    assert v0 == (F(0), F(-3, 4))  # (0, -0.75)
    assert v1 == (F(12), F(33, 4))  # (12, 8.25)
    assert g.b_vertices == tuple((x, -y) for (x, y) in g.a_vertices)
    x0, x1, y0, y1 = g.rect
    assert (x0, x1) == (F(0), F(12))
    assert y1 == -y0 == F(11, 10) * F(3, 4) * 10  # (1 + delta/2) * alpha * L


def test_parallelogram_sites_inside_band():
    for which in ("up", "down"):
        sites = parallelogram_sites(FIG, 0, 0, which)
        assert sites
        slope = FIG.alpha if which == "up" else -FIG.alpha
        lo = FIG.tube / 2 if which == "down" else -3 * FIG.tube / 2
        hi = 3 * FIG.tube / 2 if which == "down" else -FIG.tube / 2
        for s in sites:
            assert (s.n + s.m) % 2 == 0
            rel = F(s.m) - slope * s.n
            assert lo <= rel <= hi
            assert 0 <= s.n <= 12
    # tubes sit inside the dependency rectangle
    rect = set(rect_sites(FIG, 0, 0))
    assert set(parallelogram_sites(FIG, 0, 0, "up")) <= rect
    assert set(parallelogram_sites(FIG, 0, 0, "down")) <= rect


def test_footprint_fig_spec():
    rep = check_dependence_footprint(FIG, 4)
    assert rep.passed
    assert rep.dependent_neighbor_count == 6
    assert set(rep.dependent_offsets) == set(ALLOWED_DEPENDENT_OFFSETS)


def test_footprint_delta_too_large_reports_violation():
    bad = BlockSpec.unchecked("3/4", "3/10", 10)
    rep = check_dependence_footprint(bad, 4)
    assert not rep.passed
    offsets = {(b[0] - a[0], b[1] - a[1]) for a, b in rep.violations}
    assert (1, 3) in offsets or (-1, -3) in offsets


def test_footprint_small_delta():
    rep = check_dependence_footprint(BlockSpec("1/2", "1/20", 80), 3)
    assert rep.passed and rep.dependent_neighbor_count == 6


def test_eta_extremes():
    f = EnvField(seed=1)
    assert sample_eta(f, 1.0, FIG, 0, 0).value == 1
    assert sample_eta(f, 0.0, FIG, 0, 0).value == 0
    with pytest.raises(ValueError):
        sample_eta(f, 0.5, FIG, 0, 1)  # odd block index
    s = sample_eta(f, 1.0, FIG, 2, 0)
    assert s.footprint_sites
    rect = s.footprint_rect
    assert all(rect[0] <= t.n <= rect[1] and rect[2] <= t.m <= rect[3] for t in s.footprint_sites)


def test_eta_batch_matches_single():
    seeds = np.array([derive_seed(77, r) for r in range(80)], dtype=np.uint64)
    batch = eta_values(seeds, 0.8, FIG, 1, 1)
    for i in range(80):
        single = sample_eta(EnvField(seed=int(seeds[i])), 0.8, FIG, 1, 1)
        assert bool(batch[i]) == bool(single.value), i


def test_crossing_hits_matches_witness():
    seeds = np.array([derive_seed(5, r) for r in range(120)], dtype=np.uint64)
    state = seed_mix(seeds)
    for which in ("up", "down"):
        hits = crossing_hits(state, 0.75, FIG, 0, 0, which)
        for i in range(120):
            w = crossing_witness(EnvField(seed=int(seeds[i])), 0.75, FIG, 0, 0, which)
            assert bool(hits[i]) == (w is not None), (which, i)


def test_eta_monte_carlo_matches_exact():
    n = 30_000
    seeds = np.array([derive_seed(123, r) for r in range(n)], dtype=np.uint64)
    got = float(eta_values(seeds, 0.8, FIG, 0, 0).mean())
    want = float(exact_crossing(0.8, FIG).p_both)
    se = math.sqrt(want * (1 - want) / n)
    assert abs(got - want) <= 3 * se


class _PatchedField:
    """Same seed inside the rectangle, a fresh seed outside."""

    def __init__(self, inside: EnvField, outside: EnvField, rect):
        self.inside = inside
        self.outside = outside
        self.rect = rect

    def uniform(self, s):
        x0, x1, y0, y1 = self.rect
        if x0 <= s.n <= x1 and y0 <= s.m <= y1:
            return self.inside.uniform(s)
        return self.outside.uniform(s)


def test_eta_measurable_from_rectangle():
    # re-randomising everything outside the block's rectangle never changes eta
    rect = block_rect(FIG, 1, 1)
    for trial in range(1000):
        inside = EnvField(seed=derive_seed(9, trial))
        patched = _PatchedField(inside, EnvField(seed=derive_seed(10**9, trial)), rect)
        assert (
            sample_eta(inside, 0.8, FIG, 1, 1).value
            == sample_eta(patched, 0.8, FIG, 1, 1).value
        ), trial


def test_eta_disjoint_blocks_uncorrelated():
    # blocks (0,0) and (2,0) have disjoint rectangles: structural independence
    r00 = set(rect_sites(FIG, 0, 0))
    r20 = set(rect_sites(FIG, 2, 0))
    assert not (r00 & r20)
    n = 20_000
    seeds = np.array([derive_seed(31, r) for r in range(n)], dtype=np.uint64)
    a = eta_values(seeds, 0.8, FIG, 0, 0)
    b = eta_values(seeds, 0.8, FIG, 2, 0)
    cov = float((a & b).mean()) - float(a.mean()) * float(b.mean())
    se = 1.0 / math.sqrt(n)  # covariance of two Bernoullis is O(1/sqrt(n))
    assert abs(cov) <= 3 * se


def test_eta_percolation_synthetic():
    full = run_eta_percolation(6, 50, seed=3, mode="synthetic", rate=1.0)
    assert full.survival == 1.0
    none = run_eta_percolation(6, 50, seed=3, mode="synthetic", rate=0.0)
    assert none.survival == 0.0
    one = run_eta_percolation(4, 1, seed=3, mode="synthetic", rate=1.0)
    assert one.cluster is not None and (0, 0) in one.cluster


def test_eta_percolation_underlying():
    res = run_eta_percolation(3, 300, seed=11, mode="underlying", p=0.85, spec=FIG)
    assert 0.0 <= res.survival <= 1.0
    assert res.se >= 0.0
    with pytest.raises(ValueError):
        run_eta_percolation(3, 10, seed=1, mode="underlying")
    with pytest.raises(ValueError):
        run_eta_percolation(3, 10, seed=1, mode="synthetic")


def test_splice_witness_extremes():
    f = EnvField(seed=8)
    path = splice_witness(f, 1.0, FIG, 0, 0)
    assert path is not None
    verify_open_path(f, 1.0, path)
    assert path[0].n in (0, 1)
    assert path[-1].n >= 10 + 12  # right-edge threshold of block (1, 1)
    assert splice_witness(f, 0.0, FIG, 0, 0) is None


def test_splice_witness_trials():
    hits = 0
    for trial in range(200):
        f = EnvField(seed=derive_seed(444, trial))
        path = splice_witness(f, 0.95, FIG, 0, 0)
        if path is None:
            continue
        hits += 1
        verify_open_path(f, 0.95, path)
        assert path[0].n in (0, 1)
        assert path[-1].n >= 22
    assert hits > 10


def test_verify_open_path_rejects():
    f = EnvField(seed=8)
    with pytest.raises(ValueError):
        verify_open_path(f, 1.0, [SiteR(0, 0), SiteR(3, 1)])
    with pytest.raises(ValueError):
        verify_open_path(f, 0.0, [SiteR(0, 0), SiteR(1, 1)])


def test_peierls_bound_values():
    b = peierls_bound(1e-14)
    assert b.form == "survival"
    assert abs(b.factor - 3 * 10 ** (-0.5)) < 1e-12
    assert b.factor < 1 and b.contracts and b.gamma > 0

    b2 = peierls_bound(F(1, 10**30), q=F(1, 2))
    assert abs(b2.factor - 3 * 10 ** (-30 * 0.5 / 28)) < 1e-9
    assert b2.factor < 1 and b2.contracts

    bn = peierls_bound(1e-20, N=5)
    assert bn.bound_at_N == pytest.approx(bn.factor**10)


def test_peierls_threshold_is_exact():
    eps = SURVIVAL_EPS_THRESHOLD
    assert not peierls_bound(eps).contracts  # factor exactly 1
    assert peierls_bound(eps - F(1, 10**30)).contracts
    assert not peierls_bound(eps + F(1, 10**30)).contracts
    # closed-form inversion: contracting iff eps < 3^-28
    assert eps == F(1, 3**28)
    with pytest.raises(ValueError):
        peierls_bound(0.5)
    with pytest.raises(ValueError):
        peierls_bound(0)
