"""Monte Carlo verification harnesses: coverage, bound comparison, sweeps, inequality checks.

Sweeps use common random numbers (one dataset whose prefixes serve every ``n``,
one seed for every complexity term), so the monotonicity checks they report
are deterministic properties of a seed rather than statistical tests.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import bounds
from . import posterior as post
from .datagen import arx_dataset, sample_dataset
from .errors import ConfigError, DivergenceError
from .mc import PriorSpec
from .model import ARX, DataModel, IIDIsotropic, generalization_loss, regression_params
from .rng import as_seed, ordered_map
from .spectral import rho_at, rho_star_bracket


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


@dataclass
class SweepTable:
    columns: tuple
    rows: list
    checks: dict = field(default_factory=dict)
    config_digest: str | None = None
    note: str = ""

    def __post_init__(self):
        i_n, i_l = self.columns.index("n"), self.columns.index("lambda")
        self.rows = sorted(self.rows, key=lambda r: (r[i_n], r[i_l]))

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([np.nan if r[i] is None else r[i] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        return to_csv(self.columns, self.rows)

    def as_dict(self) -> dict:
        out = {
            "columns": list(self.columns),
            "rows": [dict(zip(self.columns, _jsonable(list(r)))) for r in self.rows],
            "checks": _jsonable(self.checks),
            "config_digest": self.config_digest,
        }
        if self.note:
            out["note"] = self.note
        return out


# ---------------------------------------------------------------- coverage


@dataclass(frozen=True)
class CoverageReport:
    trials: int
    violations: int
    rate: float
    delta: float
    wilson_ci: tuple
    bound_kind: str
    psi: bounds.PsiEstimate
    lhs: np.ndarray = field(repr=False, compare=False)
    rhs: np.ndarray = field(repr=False, compare=False)
    config_digest: str | None = None

    def as_dict(self) -> dict:
        return {
            "trials": self.trials,
            "violations": self.violations,
            "rate": self.rate,
            "delta": self.delta,
            "wilson_ci": list(self.wilson_ci),
            "bound_kind": self.bound_kind,
            "psi": self.psi.as_dict(),
            "max_lhs_over_rhs": float(np.max(self.lhs / self.rhs)),
            "config_digest": self.config_digest,
        }

    def trials_csv(self) -> str:
        rows = [(i, l, r, bool(l > r)) for i, (l, r) in enumerate(zip(self.lhs, self.rhs))]
        return to_csv(("trial", "lhs", "rhs", "violation"), rows)


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


def _complexity_term(model, prior, lam, n, bound_kind, M, seed, threads, loss_bound=None):
    if bound_kind == "thm3_exact":
        return bounds.psi_thm3_exact(prior, model, lam, n, M, seed, threads=threads)
    if bound_kind == "thm4":
        return bounds.psi_thm4(prior, model, lam, n, rho_at(model, n), M, seed, threads=threads)
    if bound_kind == "thm3_relaxed":
        return bounds.psi_thm3_relaxed(prior, model, lam, n, M, seed, threads=threads)
    if bound_kind == "thm2":
        sigma_pi = prior.base.isotropic_sigma()
        if prior.truncated or sigma_pi is None:
            raise ConfigError("the earlier bound needs an untruncated isotropic prior")
        return bounds.PsiEstimate.closed_form(bounds.psi_thm2_term(sigma_pi, model, lam))
    if bound_kind == "bounded_loss":
        return bounds.psi_bounded(lam, n, loss_bound)
    raise ConfigError(f"coverage is not defined for bound kind {bound_kind!r}")


def clipped_generalization_loss(W, model: DataModel, L: float) -> np.ndarray:
    """``E min((Y - w.X)^2, L)`` for Gaussian residuals ``N(0, v_w)``, one value per row of ``W``."""
    w_star, Q, s = regression_params(model)
    U = np.atleast_2d(W) - w_star
    v = np.einsum("ij,jk,ik->i", U, Q, U) + s**2
    x = L / v
    return v * stats.chi2.cdf(x, 3) + L * stats.chi2.sf(x, 1)


def coverage_experiment(
    model: DataModel,
    prior: PriorSpec,
    lam: float,
    delta: float,
    n: int,
    trials: int,
    bound_kind: str = "thm3_exact",
    seed=0,
    M: int = 100_000,
    threads: int | None = None,
    fixed_posterior: bool = False,
    loss_bound: float | None = None,
    digest: str | None = None,
) -> CoverageReport:
    """Empirical violation rate of a certificate over independent datasets.

    Each trial draws a dataset on its own stream, fits the Gibbs posterior and
    compares ``E_rho L`` with the certificate. The complexity term is data
    independent and computed once on stream 0. With ``fixed_posterior`` the
    posterior is fitted once on an extra dataset and reused (debug mode).
    """
    if trials < 100:
        raise ConfigError(f"coverage needs at least 100 trials, got {trials}")
    if not 0 < delta <= 1:
        raise ConfigError(f"delta must lie in (0, 1], got {delta}")
    seed = as_seed(seed)
    if not bounds.finiteness_check(prior, model, lam, bound_kind):
        raise DivergenceError(bounds._finiteness_message(prior, model, lam, bound_kind))
    psi = _complexity_term(model, prior, lam, n, bound_kind, M, seed, threads, loss_bound)
    if not psi.finite:
        raise DivergenceError(psi.note)
    log_conf = math.log(1.0 / delta)
    fixed = None
    if fixed_posterior:
        fixed = bounds.posterior_terms(prior, sample_dataset(model, n, seed.child(2**32)), lam)

    def trial(i):
        child = seed.child(i)
        S = sample_dataset(model, n, child)
        if fixed is None:
            terms = bounds.posterior_terms(prior, S, lam)
        else:
            emp = post.expected_empirical_loss(fixed.rho, S) / fixed.mass_lower
            kl = fixed.kl
            terms = bounds.PosteriorTerms(fixed.rho, kl, emp, fixed.mass_lower)
        if bound_kind == "bounded_loss":
            W = terms.rho.sample(4096, child.generator(1))
            lhs = float(np.mean(clipped_generalization_loss(W, model, loss_bound))) / terms.mass_lower
            emp = bounds.clipped_expected_empirical(terms.rho, S, loss_bound, child) / terms.mass_lower
        else:
            lhs = terms.expected_generalization(model)
            emp = terms.expected_empirical
        rhs = emp + (terms.kl + log_conf + psi.value) / lam
        return lhs, rhs

    res = np.array(ordered_map(trial, range(trials), threads))
    lhs, rhs = res[:, 0], res[:, 1]
    k = int(np.sum(lhs > rhs))
    return CoverageReport(trials, k, k / trials, float(delta), wilson_interval(k, trials), bound_kind, psi, lhs, rhs, digest)


# ---------------------------------------------------------------- bound comparison


def compare_bounds(
    model: IIDIsotropic,
    sigma_pi: float,
    lambda_grid,
    delta: float,
    n: int,
    seed=0,
    M: int = 100_000,
    c: float | None = None,
    threads: int | None = None,
    digest: str | None = None,
) -> SweepTable:
    """Earlier bound against the exact iid bound on one dataset, one row per ``lambda``."""
    if not isinstance(model, IIDIsotropic):
        raise ConfigError("bound comparison applies to iid isotropic inputs only")
    seed = as_seed(seed)
    prior = PriorSpec.isotropic(model.d, sigma_pi)
    c = bounds.thm2_floor(sigma_pi, model) if c is None else float(c)
    S = sample_dataset(model, n, seed.child(0))
    log_conf = math.log(1.0 / delta)
    rows = []
    ok = True
    for lam in lambda_grid:
        lam = float(lam)
        terms = bounds.posterior_terms(prior, S, lam)
        lhs = terms.expected_generalization(model)
        psi3 = bounds.psi_thm3_exact(prior, model, lam, n, M, seed, threads=threads)
        rhs3 = terms.expected_empirical + (terms.kl + log_conf + psi3.value) / lam if psi3.finite else math.inf
        se = psi3.std_error / lam
        try:
            rhs2 = terms.expected_empirical + (terms.kl + log_conf + bounds.psi_thm2_term(sigma_pi, model, lam, c)) / lam
            reason = ""
        except ConfigError as exc:
            rhs2, reason = None, f"skipped: {exc}"
        gap = None if rhs2 is None else rhs2 - rhs3
        ratio = None if rhs2 is None else rhs2 / rhs3
        if gap is not None and gap < -3 * se:
            ok = False
        rows.append((n, lam, psi3.value, psi3.std_error, lhs, rhs3, se, rhs2, gap, ratio, reason))
    cols = ("n", "lambda", "psi_thm3", "psi_se", "lhs", "rhs_thm3", "rhs_se", "rhs_thm2", "gap", "ratio", "note")
    table = SweepTable(cols, rows, config_digest=digest)
    ratios = [r[9] for r in rows if r[9] is not None]
    table.checks = {
        "thm3_within_3se_of_thm2_everywhere": ok,
        "max_ratio_thm2_over_thm3": max(ratios) if ratios else None,
        "c": c,
    }
    return table


# ---------------------------------------------------------------- convergence sweeps


LAMBDA_RULES = ("fixed", "sqrt_n", "n_pow_inv_d")


def lambda_for(rule: str, n: int, d: int, delta: float, value: float | None = None) -> float:
    if rule == "fixed":
        if value is None:
            raise ConfigError("fixed lambda rule needs a value")
        return float(value)
    if rule == "sqrt_n":
        return math.sqrt(n)
    if rule == "n_pow_inv_d":
        return n ** (1.0 / d) * math.log(1.0 / delta)
    raise ConfigError(f"unknown lambda rule {rule!r}; expected one of {LAMBDA_RULES}")


def convergence_sweep(
    model: DataModel,
    prior: PriorSpec,
    lambda_rule: str,
    n_grid,
    delta: float,
    seed=0,
    lam: float | None = None,
    bound_kind: str | None = None,
    M: int = 100_000,
    loss_bound: float | None = None,
    threads: int | None = None,
    digest: str | None = None,
) -> SweepTable:
    """Complexity term, certificate and true loss along ``n_grid`` with common random numbers.

    ``bound_kind`` defaults to ``thm3_relaxed`` for the ``n_pow_inv_d`` rule
    (the regime the relaxed term was introduced for) and ``thm3_exact``
    otherwise; ``bounded_loss`` needs ``loss_bound`` and certifies the loss
    clipped at that level.
    """
    if lambda_rule == "n_pow_inv_d" and not prior.truncated:
        raise ConfigError(
            "the n^(1/d) ln(1/delta) rule relies on the relaxed complexity term, which is infinite for an "
            "untruncated Gaussian prior; set a truncation radius"
        )
    if bound_kind is None:
        bound_kind = "thm3_relaxed" if lambda_rule == "n_pow_inv_d" else "thm3_exact"
    if bound_kind == "bounded_loss" and loss_bound is None:
        raise ConfigError("bounded_loss needs loss_bound")
    n_grid = sorted(int(n) for n in n_grid)
    if not n_grid or n_grid[0] < 1:
        raise ConfigError("n_grid must hold positive sizes")
    seed = as_seed(seed)
    w_star, _, _ = regression_params(model)
    d = w_star.size
    S_full = sample_dataset(model, n_grid[-1], seed.child(0))
    log_conf = math.log(1.0 / delta)
    rows = []
    for n in n_grid:
        lam_n = lambda_for(lambda_rule, n, d, delta, lam)
        S = S_full.head(n)
        terms = bounds.posterior_terms(prior, S, lam_n)
        psi = _complexity_term(model, prior, lam_n, n, bound_kind, M, seed, threads, loss_bound)
        if not psi.finite:
            raise DivergenceError(f"n={n}, lambda={lam_n}: {psi.note}")
        if bound_kind == "bounded_loss":
            W = terms.rho.sample(4096, seed.generator(3, n))
            lhs = float(np.mean(clipped_generalization_loss(W, model, loss_bound))) / terms.mass_lower
            emp = bounds.clipped_expected_empirical(terms.rho, S, loss_bound, seed) / terms.mass_lower
        else:
            lhs = terms.expected_generalization(model)
            emp = terms.expected_empirical
        penalty = (terms.kl + log_conf + psi.value) / lam_n
        rhs = emp + penalty
        rows.append((n, lam_n, psi.value, psi.std_error, emp, terms.kl, penalty, lhs, rhs, rhs - lhs))
    cols = ("n", "lambda", "psi", "psi_se", "expected_empirical", "kl", "penalty", "lhs", "rhs", "gap")
    table = SweepTable(cols, rows, config_digest=digest)
    psi_col = table.column("psi")
    table.checks = {
        "lambda_rule": lambda_rule,
        "bound_kind": bound_kind,
        "psi_non_increasing": bool(np.all(np.diff(psi_col) <= 0)),
    }
    if lambda_rule == "n_pow_inv_d":
        table.note = "relaxed complexity term on a truncated prior; infinite for untruncated Gaussian priors"
    return table


def noniid_asymptote_sweep(
    arx: ARX,
    prior: PriorSpec,
    lam: float,
    n_grid,
    seed=0,
    M: int = 100_000,
    threads: int | None = None,
    digest: str | None = None,
) -> SweepTable:
    """Dependent-data complexity term at each ``n`` against its large-``n`` limit.

    ``rho_n`` is exact at every grid point; the limit uses the lower end of the
    ``rho_*`` bracket computed up to ``max(n_grid)``.
    """
    n_grid = sorted(int(n) for n in n_grid)
    seed = as_seed(seed)
    bracket = rho_star_bracket(arx, n_grid[-1])
    rho_star = bracket[0]
    limit = bounds.psi_cor6_limit(prior, arx, lam, rho_star, M, seed, threads=threads)
    if not limit.finite:
        raise DivergenceError(limit.note)
    rows = []
    for n in n_grid:
        rho_n = rho_at(arx, n)
        p4 = bounds.psi_thm4(prior, arx, lam, n, rho_n, M, seed, threads=threads)
        p3 = bounds.psi_thm3_exact(prior, arx, lam, n, M, seed, threads=threads)
        if not p4.finite:
            raise DivergenceError(p4.note)
        se = math.hypot(p4.std_error, limit.std_error)
        rows.append((n, float(lam), rho_n, p4.value, p4.std_error, p3.value, limit.value, p4.value - limit.value, se))
    cols = ("n", "lambda", "rho_n", "psi_thm4", "psi_se", "psi_thm3_qfloor", "limit", "gap", "gap_se")
    table = SweepTable(cols, rows, config_digest=digest, note=bounds.COR6_NOTE + " (limit column)")
    gap = table.column("gap")
    table.checks = {
        "rho_star_bracket": list(bracket),
        "limit": limit.value,
        "above_limit_within_3se": bool(np.all(gap >= -3 * table.column("gap_se"))),
        "gap_decreasing": bool(np.all(np.diff(gap) < 0)),
        "thm4_above_thm3": bool(np.all(table.column("psi_thm4") >= table.column("psi_thm3_qfloor"))),
    }
    return table


# ---------------------------------------------------------------- ARX empirical-loss convergence


def batch_means_variance(z, batches: int = 50) -> float:
    """Long-run variance of a stationary sequence by non-overlapping batch means."""
    z = np.asarray(z, dtype=float)
    m = z.size // batches
    if m < 2:
        return float(np.var(z, ddof=1))
    means = z[: m * batches].reshape(batches, m).mean(axis=1)
    return float(m * np.var(means, ddof=1))


def empirical_loss_convergence(arx: ARX, w, n_grid, seed=0, digest: str | None = None) -> SweepTable:
    """``|Emp_n(f_w) - L(f_w)|`` along prefixes of one long recast trajectory."""
    n_grid = sorted(int(n) for n in n_grid)
    S = arx_dataset(arx, n_grid[-1], seed)
    w = np.asarray(w, dtype=float)
    L = generalization_loss(w, arx)
    r = S.y - S.x @ w
    z = r * r
    csum = np.cumsum(z)
    lrv = batch_means_variance(z)
    rows = []
    for n in n_grid:
        emp = float(csum[n - 1] / n)
        rows.append((n, float("nan"), emp, L, abs(emp - L), math.sqrt(lrv / n)))
    cols = ("n", "lambda", "empirical", "generalization", "abs_gap", "clt_scale")
    table = SweepTable(cols, rows, config_digest=digest)
    table.checks = {
        "long_run_variance": lrv,
        "final_gap_within_5_clt_scales": bool(rows[-1][4] < 5 * rows[-1][5]),
    }
    return table


def clt_rate(arx: ARX, w, n0: int = 1000, doublings: int = 9, seeds: int = 20, seed=0) -> dict:
    """Per-doubling shrink factor of the median absolute gap, fitted over a doubling ladder."""
    seed = as_seed(seed)
    ns = [n0 * 2**j for j in range(doublings + 1)]
    L = generalization_loss(np.asarray(w, dtype=float), arx)
    gaps = np.empty((seeds, len(ns)))
    for s in range(seeds):
        S = arx_dataset(arx, ns[-1], seed.child(s))
        r = S.y - S.x @ np.asarray(w, dtype=float)
        csum = np.cumsum(r * r)
        gaps[s] = [abs(csum[n - 1] / n - L) for n in ns]
    med = np.median(gaps, axis=0)
    slope = np.polyfit(np.arange(len(ns)), np.log(med), 1)[0]
    return {"n": ns, "median_gap": med.tolist(), "shrink_per_doubling": float(np.exp(slope))}


# ---------------------------------------------------------------- inequality checks


@dataclass(frozen=True)
class CheckReport:
    name: str
    cases: int
    passed: bool
    worst: float
    detail: dict = field(default_factory=dict)


def _kl_discrete(p, q) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def dv_markov_check(seed=0, cases: int = 1000, max_atoms: int = 16) -> CheckReport:
    """Change-of-measure inequality ``E_rho phi <= KL(rho||pi) + ln E_pi exp(phi)`` on finite spaces.

    ``worst`` is the largest value of ``lhs - rhs`` over the random cases (must be
    <= 1e-12); ``detail["tilted_max_err"]`` is the largest ``|lhs - rhs|`` when
    ``rho`` is the ``phi``-tilted ``pi`` (must be <= 1e-9).
    """
    rng = as_seed(seed).generator()
    worst = -math.inf
    tilted_err = 0.0
    for _ in range(cases):
        m = int(rng.integers(1, max_atoms + 1))
        pi = rng.dirichlet(np.ones(m))
        rho = rng.dirichlet(np.ones(m))
        phi = rng.normal(0.0, 3.0, m)
        log_mgf = float(logsumexp(phi, b=pi))
        worst = max(worst, float(rho @ phi) - (_kl_discrete(rho, pi) + log_mgf))
        logt = np.log(pi) + phi - log_mgf
        tilt = np.exp(logt)
        # KL(tilt || pi) = E_tilt[phi] - log_mgf in exact arithmetic
        kl_t = float(np.sum(tilt * (logt - np.log(pi))))
        tilted_err = max(tilted_err, abs(float(tilt @ phi) - (kl_t + log_mgf)))
    passed = worst <= 1e-12 and tilted_err <= 1e-9
    return CheckReport("donsker_varadhan", cases, passed, worst, {"tilted_max_err": tilted_err})


def hoeffding_mgf_check(L: float, lam: float, n: int, trials: int = 20_000, seed=0, v_values=None, predictors: int = 20) -> CheckReport:
    """``E exp(lam (L(f) - Emp(f))) <= exp(lam^2 L^2 / (8 n))`` for a loss clipped to ``[0, L]``.

    Each predictor is summarized by its residual variance ``v``: residuals are
    ``N(0, v)`` and the clipped loss is ``min(Z^2, L)``. ``v = 0`` gives the
    constant-loss case. By default ``predictors`` values of ``v`` come from
    random weights of a 2-d iid model (``sigma_x = 1``, ``sigma_eps = 0.5``).
    """
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    seed = as_seed(seed)
    rng = seed.generator()
    if v_values is None:
        W = rng.normal(0.0, 1.0, (predictors, 2))
        v_values = np.sum((W - np.array([1.0, -0.5])) ** 2, axis=1) + 0.25
    rhs = math.exp(lam**2 * L**2 / (8 * n))
    worst = -math.inf
    rows = []
    ok = True
    for j, v in enumerate(np.asarray(v_values, dtype=float)):
        if v > 0:
            x = L / v
            gen = float(v * stats.chi2.cdf(x, 3) + L * stats.chi2.sf(x, 1))
        else:
            gen = 0.0
        g = seed.generator(1, j)
        Z = math.sqrt(v) * g.standard_normal((trials, n))
        emp = np.minimum(Z * Z, L).mean(axis=1)
        vals = np.exp(lam * (gen - emp))
        mean = float(vals.mean())
        se_rel = float(vals.std(ddof=1) / math.sqrt(trials) / mean) if trials > 1 else 0.0
        holds = mean <= rhs * (1 + 5 * se_rel)
        ok &= holds
        worst = max(worst, mean / rhs)
        rows.append({"v": float(v), "generalization": gen, "mgf": mean, "se_rel": se_rel, "holds": bool(holds)})
    return CheckReport("hoeffding_mgf", len(rows), bool(ok), worst, {"bound": rhs, "predictors": rows})


def denominator_inequality_check(seed=0, cases: int = 10_000) -> CheckReport:
    """``(1 + a/b)^b > exp(ab / (a + b))`` for random ``a, b > 0`` (compared in logs)."""
    rng = as_seed(seed).generator()
    a = np.exp(rng.uniform(math.log(1e-3), math.log(1e3), cases))
    b = np.exp(rng.uniform(math.log(1e-3), math.log(1e3), cases))
    lhs = b * np.log1p(a / b)
    rhs = a * b / (a + b)
    margin = lhs - rhs
    spot = (2.0, math.exp(0.5))
    passed = bool(np.all(margin > 0)) and spot[0] > spot[1]
    return CheckReport("denominator", cases, passed, float(np.min(margin)), {"spot_a1_b1": spot})


def chi2_mgf_check(n: int, ts, draws: int = 100_000, seed=0, model: DataModel | None = None, w=None) -> CheckReport:
    """MC average of ``exp(t q)`` against ``(1 - 2t)^(-n/2)`` for ``t < 0``.

    ``q`` is the squared norm of whitened prediction errors when a model is
    given (then ``q`` is chi-square with ``n`` degrees of freedom exactly), and a
    direct chi-square draw otherwise. ``worst`` is the largest ``|z|``.
    """
    from .spectral import whitened_residuals

    if model is None:
        q = as_seed(seed).generator().chisquare(n, draws)
    else:
        w_star, _, _ = regression_params(model)
        w = w_star + 0.5 if w is None else np.asarray(w, dtype=float)
        S = whitened_residuals(w, model, n, draws, seed)
        q = np.sum(S * S, axis=1)
    zs = []
    for t in ts:
        if not t < 0:
            raise ValueError(f"t must be negative, got {t}")
        vals = np.exp(t * q)
        exact = (1.0 - 2.0 * t) ** (-n / 2)
        se = vals.std(ddof=1) / math.sqrt(draws)
        zs.append(float((vals.mean() - exact) / se))
    worst = float(np.max(np.abs(zs)))
    return CheckReport("chi2_mgf", len(zs), worst < 3.0, worst, {"t": list(map(float, ts)), "z": zs})
