"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line. Run standalone with
``python tests/test_acceptance.py`` for the summary alone.
"""

import contextlib
import io
import json
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

sys.path.insert(0, str(Path(__file__).parent))
from conftest import random_stable_arx  # noqa: E402

from pacb import bounds, experiments  # noqa: E402
from pacb.cli import run  # noqa: E402
from pacb.datagen import recast_arx, simulate_arx  # noqa: E402
from pacb.mc import PriorSpec  # noqa: E402
from pacb.model import ARX, Dataset, IIDIsotropic  # noqa: E402
from pacb.posterior import GaussianWeightMeasure, gibbs_posterior, kl_gaussian  # noqa: E402
from pacb.spectral import arx_state_covariance, joint_covariance, rho_at, rho_sequence  # noqa: E402

IID = IIDIsotropic([1.0, -0.5], 1.0, 0.5)


def _line(num, name, ok, detail):
    return f"{'PASS' if ok else 'FAIL'}  criterion {num:2d}  {name}: {detail}"


# ---------------------------------------------------------------- criteria


def crit1():
    n, lam = 50, math.sqrt(50)
    prior = PriorSpec.isotropic(2, 1.0, truncation_radius="default")
    t0 = time.perf_counter()
    rep = experiments.coverage_experiment(IID, prior, lam, 0.05, n, 1000, "thm3_exact", seed=1)
    dt = time.perf_counter() - t0
    ok = rep.rate <= 0.05 and dt < 60
    return ok, f"violations {rep.violations}/1000 (rate {rep.rate:.3f}, Wilson {rep.wilson_ci[1]:.4f}), {dt:.1f} s"


def crit2():
    arx = ARX((0.5,), (0.3,), 0.5, 1.0)
    prior = PriorSpec.isotropic(2, 1.0, truncation_radius="default")
    t0 = time.perf_counter()
    rep = experiments.coverage_experiment(arx, prior, 4.0, 0.05, 64, 500, "thm4", seed=2)
    dt = time.perf_counter() - t0
    ok = rep.rate <= 0.05 and dt < 120
    return ok, f"violations {rep.violations}/500 (rate {rep.rate:.3f}), rho_64 = {rho_at(arx, 64):.4f}, {dt:.1f} s"


def crit3():
    c = 2 * 1.0**2 * 1.0**2
    grid = np.arange(1, 21) / 21 / c
    t = experiments.compare_bounds(IID, 1.0, grid, 0.05, 50, seed=3)
    gap, se = t.column("gap"), t.column("rhs_se")
    within = bool(np.all(gap >= -3 * se))
    mx = float(np.max(t.column("ratio")))
    return within and mx > 2, f"rhs(thm3) <= rhs(thm2) + 3 SE on {int(np.sum(gap >= -3 * se))}/20 points, max ratio {mx:.2f}"


def crit4():
    prior = PriorSpec.isotropic(2, 1.0, truncation_radius="default")
    vals = [bounds.psi_thm3_exact(prior, IID, 1.0, n, 100_000, 4) for n in (100, 1000, 10_000)]
    v = [e.value for e in vals]
    ok = v[0] >= v[1] >= v[2] and v[2] < 0.02 * v[0] + 3 * vals[2].std_error
    return ok, "psi = " + ", ".join(f"{x:.5f}" for x in v) + f"; ratio {v[2] / v[0]:.4f}"


def crit5():
    prior = PriorSpec.isotropic(2, 1.0)
    t = experiments.noniid_asymptote_sweep(ARX((0.5,), (0.0,), 1.0, 1.0), prior, 0.25, [32, 64, 128, 256, 512], seed=5)
    gap, gse = t.column("gap"), t.column("gap_se")
    above = bool(np.all(gap >= -3 * gse))
    degenerate = bounds.psi_cor6_limit(prior, ARX((0.0,), (0.0,), 1.0, 1.0), 0.25, rho_at(ARX((0.0,), (0.0,), 1.0, 1.0), 64))
    ok = above and gap[-1] < gap[0] and abs(degenerate.value) <= 1e-12
    return ok, f"gap(32) {gap[0]:.5f} > gap(512) {gap[-1]:.5f}, limit {t.checks['limit']:.5f}, degenerate limit {degenerate.value:.1e}"


def crit6():
    # Gibbs posterior against a 1-d grid integration
    w = np.arange(-10.0, 10.0 + 5e-5, 1e-4)
    logd = stats.norm.logpdf(w) - 1.0 * (1.0 - w) ** 2
    dens = np.exp(logd - logd.max())
    Z = integrate.trapezoid(dens, w)
    mean = integrate.trapezoid(w * dens, w) / Z
    var = integrate.trapezoid((w - mean) ** 2 * dens, w) / Z
    rho = gibbs_posterior(GaussianWeightMeasure.isotropic(1, 1.0), Dataset([[1.0]], [1.0]), 1.0)
    gibbs_err = max(abs(rho.mean[0] - mean) / mean, abs(rho.cov[0, 0] - var) / var)
    # Gaussian KL against quadrature
    a, b = stats.norm(0.4, math.sqrt(0.3)), stats.norm(-0.2, math.sqrt(2.0))
    ref, _ = integrate.quad(lambda x: a.pdf(x) * (a.logpdf(x) - b.logpdf(x)), -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13)
    kl_err = abs(kl_gaussian(GaussianWeightMeasure([0.4], [[0.3]]), GaussianWeightMeasure([-0.2], [[2.0]])) - ref)
    # stationary covariance against a 10^6-step simulation, batch-means standard errors
    m = ARX((0.5, -0.3), (1.0, 0.4), 0.8, 1.2)
    S = recast_arx(simulate_arx(m, 1_000_000 + m.k, 6), m.k)
    P, _ = arx_state_covariance(m)
    worst_z = 0.0
    for i in range(m.d):
        for j in range(i, m.d):
            prods = S.x[:, i] * S.x[:, j]
            means = prods[: 10_000 * 100].reshape(100, -1).mean(axis=1)
            se = means.std(ddof=1) / 10.0
            worst_z = max(worst_z, abs(prods.mean() - P[i, j]) / se)
    # chi-square MGF from whitened prediction errors
    chi = experiments.chi2_mgf_check(6, [-0.05, -0.1, -0.25, -0.5, -1.0], seed=6, model=ARX((0.5,), (0.3,), 0.5, 1.0), w=[0.8, 0.1])
    ok = gibbs_err < 1e-6 and kl_err < 1e-8 and worst_z < 5 and chi.passed and chi.cases == 5
    return ok, f"Gibbs rel err {gibbs_err:.1e}, KL err {kl_err:.1e}, Lyapunov max |z| {worst_z:.2f}, chi2 MGF max |z| {chi.worst:.2f}"


def crit7():
    rng = np.random.default_rng(7)
    worst_step = -math.inf
    for _ in range(10):
        m = random_stable_arx(rng, int(rng.integers(1, 3)))
        s = rho_sequence(m, 50)
        worst_step = max(worst_step, float(np.max(np.diff(s.rho))))
    iid_exact = bool(np.all(rho_sequence(IIDIsotropic([1.0, 2.0], 1.7, 0.5), 50).rho == 1.7**2))
    arx = ARX((0.5,), (0.3,), 0.5, 1.0)
    J = joint_covariance(arx, 12)
    r = rho_at(arx, 12)
    R = rng.normal(size=(1000, J.shape[0]))
    rayleigh = bool(np.all(r * np.sum(R * R, axis=1) <= np.einsum("ij,jk,ik->i", R, J, R) + 1e-12))
    ok = worst_step <= 1e-12 and iid_exact and rayleigh
    return ok, f"max rho_(n+1) - rho_n {worst_step:.1e}, iid rho_n == sigma_x^2: {iid_exact}, Rayleigh on 1000 vectors: {rayleigh}"


def crit8():
    dv = experiments.dv_markov_check(seed=8)
    hf = experiments.hoeffding_mgf_check(1.0, 10.0, 100, seed=8)
    den = experiments.denominator_inequality_check(seed=8)
    spot = den.detail["spot_a1_b1"]
    ok = dv.passed and dv.cases == 1000 and hf.passed and hf.cases == 20 and den.passed and den.cases == 10_000
    ok = ok and spot[0] == 2.0 and spot[1] < 1.64873
    return ok, (f"DV worst {dv.worst:.1e} tilted err {dv.detail['tilted_max_err']:.1e}; Hoeffding worst ratio {hf.worst:.3f}; "
                f"denominator min margin {den.worst:.1e}, (1,1): {spot[0]:.0f} > {spot[1]:.5f}")


def _box_log_integral(lam, sx, sp, R, n=50):
    w = np.linspace(-R, R, 400_001)
    v = sx**2 * (w - 1.0) ** 2 + 0.25
    logf = stats.norm.logpdf(w, 0, sp) + lam * v - n / 2 * np.log1p(2 * lam * v / n)
    m = logf.max()
    return m + math.log(integrate.trapezoid(np.exp(logf - m), w))


def _quadrature_finite(lam, sx, sp):
    vals = [_box_log_integral(lam, sx, sp, R * sp) for R in (50, 100, 200, 400)]
    return vals[-1] - vals[-2] < 1e-6


def crit9():
    prior = PriorSpec.isotropic(2, 1.0)
    lam = 1.0
    relaxed = bounds.psi_thm3_relaxed(prior, IID, lam, 50, 100_000, 9)
    # plain prior averaging of the relaxed integrand: the ESS fraction falls as M grows
    f = lambda W: 2 * lam**2 / 50 * (np.sum((W - IID.w_star) ** 2, axis=1) + 0.25) ** 2
    prof = bounds.ess_profile(prior, f, [1000, 10_000, 100_000], 9)
    collapse = prof[-1][1] < prof[0][1]
    agree = 0
    cases = 0
    for sx, sp in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.7), (1.3, 1.1)]:
        model = IIDIsotropic([1.0], sx, 0.5)
        for prod in (0.95, 1.05):
            lam = prod / (2 * sx**2 * sp**2)
            cases += 1
            agree += bounds.finiteness_check(PriorSpec.isotropic(1, sp), model, lam) == _quadrature_finite(lam, sx, sp)
    ok = relaxed.method == "diverged" and relaxed.value == math.inf and collapse and agree == cases
    return ok, f"relaxed term {relaxed.method} (ESS fraction {prof[0][1]:.3f} -> {prof[-1][1]:.5f}); finiteness agrees with quadrature {agree}/{cases}"


def crit10():
    iid = {"kind": "iid", "w_star": [1.0, -0.5], "sigma_x": 1.0, "sigma_eps": 0.5}
    arx = {"kind": "arx", "a": [0.5], "b": [0.3], "sigma_e": 0.5, "sigma_u": 1.0}
    base = {"model": iid, "prior": {"sigma": 1.0}, "lambda": 0.3, "n": 50, "M": 20_000, "seed": 10}
    cases = {
        "certify": base,
        "coverage": dict(base, prior={"sigma": 1.0, "truncation_radius": "default"}, trials=200, **{"lambda": 4.0}),
        "compare": dict(base, lambda_grid=[0.1, 0.25, 0.4]),
        "sweep": dict(base, n_grid=[50, 500], prior={"sigma": 1.0, "truncation_radius": 5.0}, **{"lambda": 1.0}),
        "spectrum": dict(base, model=arx, n=30),
        "simulate": dict(base, model=arx, n=200),
    }
    same = 0
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for cmd, cfg in cases.items():
            p = tmp / f"{cmd}.json"
            p.write_text(json.dumps(cfg))
            outs = []
            for tag, threads in (("a", "1"), ("b", "4"), ("c", "1")):
                out = tmp / cmd / tag
                with contextlib.redirect_stdout(io.StringIO()):
                    code = run([cmd, "--config", str(p), "--out", str(out), "--threads", threads])
                files = {q.name: q.read_bytes() for q in sorted(out.iterdir())} if code == 0 else None
                outs.append(files)
            same += bool(outs[0]) and outs[0] == outs[1] == outs[2]
    return same == len(cases), f"{same}/{len(cases)} commands byte-identical across reruns and thread counts 1/4"


CRITERIA = [
    (1, "coverage, iid exact bound", crit1),
    (2, "coverage, ARX dependent-data bound", crit2),
    (3, "exact bound never looser than the earlier bound", crit3),
    (4, "fixed-lambda convergence of the complexity term", crit4),
    (5, "non-iid asymptote", crit5),
    (6, "oracle equivalences", crit6),
    (7, "spectral properties", crit7),
    (8, "supporting inequalities", crit8),
    (9, "divergence handling", crit9),
    (10, "reproducibility", crit10),
]


@pytest.mark.parametrize("num,name,fn", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_acceptance(num, name, fn, capsys):
    ok, detail = fn()
    with capsys.disabled():
        print("\n" + _line(num, name, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for num, name, fn in CRITERIA:
        ok, detail = fn()
        failed += not ok
        print(_line(num, name, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
