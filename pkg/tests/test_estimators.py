import math

import numpy as np
import pytest

from operc.estimators import (
    EstimatorError,
    estimate_alpha,
    estimate_rho,
    estimate_theta,
    fit_tail_tau,
    fit_tail_upper,
    monotonicity_report,
    rho_from_alpha,
    scan_pc,
)
from operc.frontier import NEG_INF, StarterSpec
from operc.oracle import exact_dist_u, exact_tau_dist

SEED = 20260810


def test_alpha_deterministic_extremes():
    a1 = estimate_alpha(1.0, n_levels=30, replicas=200, seed=SEED)
    assert a1.alpha_hat == 1.0 and a1.alpha_hat_se == 0.0
    assert a1.bound_satisfied and a1.truncation_rate == 0.0
    a0 = estimate_alpha(0.0, n_levels=30, replicas=200, seed=SEED)
    assert a0.alpha_hat == NEG_INF


def test_alpha_validation():
    with pytest.raises(ValueError):
        estimate_alpha(0.5, 10, 50, SEED)  # replicas < 100
    with pytest.raises(ValueError):
        estimate_alpha(1.5, 10, 200, SEED)


def test_alpha_matches_oracle_small_n():
    # alpha_4 against the exact conditional mean of the truncated half-line top
    p, n, K = 0.5, 4, 2
    est = estimate_alpha(p, n_levels=n, replicas=40_000, seed=SEED, K=K)
    d = exact_dist_u(p, n, StarterSpec.half_below(0), K=K, conditional_on_untruncated=True)
    want = float(d.mean()) / n
    assert abs(est.alpha_n[n] - want) <= 3 * est.alpha_se[n]
    # level means are reproducible bit for bit
    est2 = estimate_alpha(p, n_levels=n, replicas=40_000, seed=SEED, K=K)
    assert np.array_equal(est.alpha_n[1:], est2.alpha_n[1:])


def test_alpha_workers_bit_identical():
    a = estimate_alpha(0.7, n_levels=40, replicas=3000, seed=SEED, workers=1)
    b = estimate_alpha(0.7, n_levels=40, replicas=3000, seed=SEED, workers=4)
    assert np.array_equal(a.alpha_n[1:], b.alpha_n[1:])
    assert a.alpha_hat == b.alpha_hat


def test_theta_extremes_and_coupling():
    assert estimate_theta(1.0, 60, 500, SEED).theta == 1.0
    assert estimate_theta(0.0, 60, 500, SEED).theta == 0.0
    lo = estimate_theta(0.6, 60, 4000, SEED)
    hi = estimate_theta(0.7, 60, 4000, SEED)
    assert lo.theta <= hi.theta  # shared seed: exact monotone coupling


def test_theta_matches_oracle_small_horizon():
    p, h = 0.66, 5
    est = estimate_theta(p, h, 100_000, SEED)
    want = float(exact_tau_dist(p, h).prob(math.inf))
    se = math.sqrt(want * (1 - want) / est.replicas)
    assert abs(est.theta - want) <= 3 * se


def test_rho_formula_identity():
    assert rho_from_alpha(1 / 3) == pytest.approx(-2.0)
    with pytest.raises(ValueError):
        rho_from_alpha(1.0)


def test_rho_estimate_consistency_smoke():
    est = estimate_rho(0.8, depth=120, replicas=600, seed=SEED)
    assert est.survivors > 300
    assert est.rho_direct < -1 and est.rho_formula < -1
    # direct and mapped estimates agree loosely at this small scale
    assert est.consistency_gap <= 6 * est.joint_se + 0.25
    # the geometric starter bound: sigma <= p/(1-p) within noise
    assert est.sigma_direct <= 0.8 / 0.2 + 3 * est.sigma_direct_se


def test_rho_requires_supercritical():
    with pytest.raises(EstimatorError):
        estimate_rho(0.4, depth=80, replicas=300, seed=SEED)


def test_scan_pc_bracket():
    br = scan_pc(threshold=0.2, horizon=100, replicas=600, tolerance=0.05, seed=SEED)
    assert 0.0 < br.lo < br.hi < 1.0
    assert br.hi - br.lo <= 0.05 + 1e-12
    assert br.theta_lo < 0.2 <= br.theta_hi
    # crossing sits in the right neighbourhood for this model
    assert 0.4 < br.lo and br.hi < 0.75


def test_scan_pc_errors():
    with pytest.raises(ValueError):
        scan_pc(0.2, 100, 5, 0.05, SEED)  # degenerate replica count
    with pytest.raises(EstimatorError):
        scan_pc(0.5, 100, 200, 0.05, SEED, p_hi=0.3)  # threshold unreachable
    with pytest.raises(EstimatorError):
        scan_pc(0.001, 100, 200, 0.05, SEED, p_lo=0.9)  # already above at p_lo


def test_fit_tail_tau():
    # the death-time tail at p = 0.8 decays fast (gamma near 1), so usable
    # bins concentrate at small n; 1e5 replicas keep at least 5 of them
    fit = fit_tail_tau(0.8, n_max=20, replicas=100_000, seed=SEED, horizon_inf=60)
    assert fit.gamma_hat > 0
    assert fit.r_squared >= 0.85
    assert fit.n_range[0] >= 5
    with pytest.raises(EstimatorError):
        fit_tail_tau(1.0, n_max=30, replicas=2000, seed=SEED)  # no finite deaths


def test_fit_tail_upper():
    alpha = estimate_alpha(0.8, n_levels=60, replicas=2000, seed=SEED)
    fit = fit_tail_upper(0.8, alpha.alpha_hat + 0.12, n_max=30, replicas=30_000, seed=SEED, alpha_est=alpha)
    assert fit.gamma_hat > 0
    # alpha_prime below the slope estimate is rejected as not-a-tail
    with pytest.raises(EstimatorError):
        fit_tail_upper(0.8, alpha.alpha_hat - 0.05, n_max=30, replicas=5000, seed=SEED, alpha_est=alpha)


def test_fit_tail_upper_impossible_event():
    alpha = estimate_alpha(1.0, n_levels=30, replicas=200, seed=SEED)
    with pytest.raises(EstimatorError, match="bins"):
        fit_tail_upper(1.0, 1.1, n_max=30, replicas=5000, seed=SEED, alpha_est=alpha)


def test_monotonicity_report_structure():
    rep = monotonicity_report((0.8, 0.9, 1.0), n_levels=60, replicas=800, seed=SEED)
    assert rep.coupled_monotone
    assert len(rep.pairs) == 3
    assert rep.alphas[0] < rep.alphas[1] < rep.alphas[2] == 1.0
    for row in rep.pairs:
        assert row.gap >= 0
        assert row.joint_se < 0.02
    pair_10_09 = next(r for r in rep.pairs if r.p == 1.0 and r.q == 0.9)
    assert pair_10_09.gap == pytest.approx(1.0 - rep.alphas[1], abs=1e-12)
