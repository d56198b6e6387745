import math

import numpy as np
import pytest

from pacb.errors import ConfigError, DivergenceError
from pacb.experiments import (
    SweepTable,
    chi2_mgf_check,
    clt_rate,
    compare_bounds,
    convergence_sweep,
    coverage_experiment,
    denominator_inequality_check,
    dv_markov_check,
    empirical_loss_convergence,
    hoeffding_mgf_check,
    noniid_asymptote_sweep,
    wilson_interval,
)
from pacb.mc import PriorSpec
from pacb.model import ARX, IIDIsotropic

M = 20_000


@pytest.fixture
def trunc2():
    return PriorSpec.isotropic(2, 1.0, truncation_radius=5.0)


def test_wilson_interval_hand_formula():
    k, n, z = 7, 200, 1.959963984540054
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(centre - half, rel=1e-9) and hi == pytest.approx(centre + half, rel=1e-9)
    assert wilson_interval(0, 1000)[0] == 0.0


def test_coverage_reference_config(iid2, trunc2):
    n = 50
    rep = coverage_experiment(iid2, trunc2, math.sqrt(n), 0.05, n, 1000, seed=1, M=M)
    assert rep.trials == 1000 and rep.violations <= rep.trials
    assert rep.rate == rep.violations / rep.trials
    assert rep.rate <= 0.05
    assert rep.wilson_ci[1] < 0.05 + 0.02
    assert rep.trials_csv().splitlines()[0] == "trial,lhs,rhs,violation"


def test_coverage_delta_one_drops_confidence_term(iid2, trunc2):
    a = coverage_experiment(iid2, trunc2, 5.0, 1.0, 50, 100, seed=2, M=M)
    b = coverage_experiment(iid2, trunc2, 5.0, 0.05, 50, 100, seed=2, M=M)
    np.testing.assert_allclose(b.rhs - a.rhs, math.log(20) / 5.0, rtol=1e-12)
    assert 0 <= a.rate <= 1


def test_coverage_deterministic(iid2, trunc2):
    a = coverage_experiment(iid2, trunc2, 3.0, 0.05, 30, 100, seed=3, M=M, threads=1)
    b = coverage_experiment(iid2, trunc2, 3.0, 0.05, 30, 100, seed=3, M=M, threads=4)
    assert a.as_dict() == b.as_dict()
    assert a.lhs.tobytes() == b.lhs.tobytes() and a.rhs.tobytes() == b.rhs.tobytes()


def test_coverage_preconditions(iid2, prior2, trunc2):
    with pytest.raises(ConfigError):
        coverage_experiment(iid2, trunc2, 1.0, 0.05, 30, 99)
    with pytest.raises(DivergenceError) as err:
        coverage_experiment(iid2, prior2, 1.0, 0.05, 30, 100)
    assert "lambda" in str(err.value)


def test_coverage_fixed_posterior_and_bounded_loss(iid2, trunc2):
    rep = coverage_experiment(iid2, trunc2, 3.0, 0.05, 40, 100, seed=4, M=M, fixed_posterior=True)
    assert rep.rate <= 0.05
    rep = coverage_experiment(iid2, trunc2, math.sqrt(40), 0.05, 40, 100, "bounded_loss", seed=4, loss_bound=4.0)
    assert rep.rate <= 0.05 and np.all(rep.lhs <= 4.0 / (1 - 1e-6))


def test_compare_bounds_tightness(iid2):
    c = 2.0
    grid = np.arange(1, 21) / 21 / c
    t = compare_bounds(iid2, 1.0, grid, 0.05, 50, seed=5, M=M)
    assert t.checks["thm3_within_3se_of_thm2_everywhere"]
    assert np.all(t.column("gap") >= -3 * t.column("rhs_se"))
    # near the pole the earlier bound explodes while the exact one stays finite
    assert t.rows[-1][9] > 2 and t.checks["max_ratio_thm2_over_thm3"] > 2
    # approaching the pole the earlier bound grows far faster; once a far mode of the
    # exact integrand takes over (2 lam c > 0.998 here) both share the same pole
    near = compare_bounds(iid2, 1.0, [0.49, 0.495, 0.498, 0.4999], 0.05, 50, seed=5, M=M)
    ratios = near.column("ratio")
    assert ratios[2] > 10 and np.all(ratios > 2)
    assert np.all(np.isfinite(near.column("rhs_thm3")))


def test_compare_bounds_small_lambda_and_domain(iid2):
    t = compare_bounds(iid2, 1.0, [1e-6, 1e-3, 0.6], 0.05, 50, seed=6, M=M)
    small = t.rows[0]
    assert small[5] > 1e5 and small[7] > 1e5
    # the gap at tiny lambda is the difference of complexity terms over lambda
    assert abs(small[8]) < 5.0
    assert t.rows[2][7] is None and t.rows[2][10].startswith("skipped")


def test_convergence_fixed_lambda(iid2, trunc2):
    t = convergence_sweep(iid2, trunc2, "fixed", [100, 1000, 10_000], 0.05, seed=7, lam=1.0, M=M)
    psi, se = t.column("psi"), t.column("psi_se")
    assert np.all(np.diff(psi) <= 0) and t.checks["psi_non_increasing"]
    assert psi[-1] < 0.01 * psi[0] + 3 * se[-1]
    assert [r[0] for r in t.rows] == [100, 1000, 10_000]


def test_convergence_sqrt_n_bounded_loss(iid2, prior2):
    ns = [100, 1000, 10_000]
    t = convergence_sweep(iid2, prior2, "sqrt_n", ns, 0.05, seed=8, bound_kind="bounded_loss", loss_bound=10.0)
    scaled = t.column("penalty") * np.sqrt(ns)
    assert np.max(scaled) / np.min(scaled) < 1.2
    assert np.all(t.column("lhs") <= t.column("rhs"))


def test_convergence_single_row_and_errors(iid2, prior2, trunc2):
    t = convergence_sweep(iid2, trunc2, "fixed", [50], 0.05, seed=9, lam=1.0, M=M)
    assert len(t.rows) == 1
    with pytest.raises(ConfigError):
        convergence_sweep(iid2, prior2, "n_pow_inv_d", [50], 0.05)
    with pytest.raises(DivergenceError):
        convergence_sweep(iid2, prior2, "fixed", [50], 0.05, lam=1.0, M=M)
    t = convergence_sweep(iid2, trunc2, "n_pow_inv_d", [100, 400], 0.05, seed=9, M=M)
    assert t.checks["bound_kind"] == "thm3_relaxed" and np.all(np.isfinite(t.column("rhs")))


def test_sweep_table_sorted():
    t = SweepTable(("n", "lambda", "x"), [(100, 2.0, 1), (10, 3.0, 2), (100, 1.0, 3), (10, 1.0, 4)])
    assert [r[:2] for r in t.rows] == [(10, 1.0), (10, 3.0), (100, 1.0), (100, 2.0)]
    assert t.to_csv().splitlines()[0] == "n,lambda,x"


def test_noniid_asymptote_ar1():
    prior = PriorSpec.isotropic(2, 1.0)
    t = noniid_asymptote_sweep(ARX((0.5,), (0.0,), 1.0, 1.0), prior, 0.25, [32, 64, 128, 256, 512], seed=10, M=M)
    gap = t.column("gap")
    assert t.checks["above_limit_within_3se"] and t.checks["thm4_above_thm3"]
    assert gap[-1] < gap[0]
    assert np.all(t.column("psi_thm4") >= t.column("psi_thm3_qfloor"))


def test_noniid_asymptote_iid_equivalent():
    prior = PriorSpec.isotropic(2, 1.0)
    arx = ARX((0.0,), (0.0,), 1.0, 1.0)
    t = noniid_asymptote_sweep(arx, prior, 0.25, [16, 128, 1024], seed=11, M=M)
    assert abs(t.checks["limit"]) < 1e-12
    psi = t.column("psi_thm4")
    assert np.all(np.diff(psi) < 0) and psi[-1] < 0.01


def test_empirical_loss_convergence_best_predictor():
    arx = ARX((0.5,), (0.3,), 0.5, 1.0)
    t = empirical_loss_convergence(arx, arx.w_star, [1000, 100_000, 1_000_000], seed=12)
    assert t.column("generalization")[0] == 0.25
    assert t.checks["final_gap_within_5_clt_scales"]
    assert t.column("abs_gap")[-1] < 0.01
    again = empirical_loss_convergence(arx, arx.w_star, [1000, 100_000, 1_000_000], seed=12)
    assert t.to_csv() == again.to_csv()


def test_empirical_loss_convergence_off_optimum():
    arx = ARX((0.5,), (0.3,), 0.5, 1.0)
    t = empirical_loss_convergence(arx, arx.w_star + np.array([0.2, -0.1]), [1000, 1_000_000], seed=13)
    assert t.checks["final_gap_within_5_clt_scales"]


def test_clt_rate():
    arx = ARX((0.5,), (0.3,), 0.5, 1.0)
    r = clt_rate(arx, arx.w_star + 0.1, n0=1000, doublings=6, seeds=20, seed=14)
    assert abs(r["shrink_per_doubling"] - 1 / math.sqrt(2)) < 0.3 / math.sqrt(2)


def test_dv_markov_check():
    rep = dv_markov_check(seed=15)
    assert rep.passed and rep.cases == 1000
    assert rep.worst <= 1e-12 and rep.detail["tilted_max_err"] <= 1e-9


def test_dv_constant_function_by_hand():
    # rho = pi and a constant phi: both sides equal the constant
    pi = np.array([0.2, 0.3, 0.5])
    c = 1.7
    lhs = float(pi @ np.full(3, c))
    rhs = 0.0 + math.log(float(pi @ np.exp(np.full(3, c))))
    assert lhs == pytest.approx(c, abs=1e-15) and rhs == pytest.approx(c, abs=1e-15)


def test_hoeffding_examples():
    rep = hoeffding_mgf_check(1.0, 0.0, 100, trials=2000, seed=16)
    assert rep.passed and rep.detail["bound"] == 1.0
    assert all(p["mgf"] == 1.0 for p in rep.detail["predictors"])
    const = hoeffding_mgf_check(1.0, 3.0, 50, trials=2000, seed=16, v_values=[0.0])
    assert const.passed and const.detail["predictors"][0]["mgf"] == 1.0
    rep = hoeffding_mgf_check(1.0, 10.0, 100, seed=17)
    assert rep.passed and rep.cases == 20
    with pytest.raises(ValueError):
        hoeffding_mgf_check(0.0, 1.0, 10)


def test_denominator_inequality():
    rep = denominator_inequality_check(seed=18)
    assert rep.passed and rep.cases == 10_000 and rep.worst > 0
    two, e_half = rep.detail["spot_a1_b1"]
    assert two == 2.0 and abs(e_half - 1.64872) < 1e-5


def test_chi2_mgf_check(arx_ref):
    ts = [-0.05, -0.1, -0.25, -0.5, -1.0]
    assert chi2_mgf_check(5, ts, seed=19).passed
    rep = chi2_mgf_check(6, ts, seed=20, model=arx_ref, w=arx_ref.w_star + np.array([0.3, -0.2]))
    assert rep.passed and rep.cases == 5
    with pytest.raises(ValueError):
        chi2_mgf_check(3, [0.1], draws=1000)
