"""Complexity terms and certificate assembly for squared-loss linear regression.

Every certificate has the shape

    E_rho L  <=  E_rho Emp + (KL(rho || pi) + ln(1/delta) + Psi) / lambda

and the bound variants differ only in ``Psi``:

=================  ==========================================================
``bounded_loss``   ``lambda^2 L^2 / (8 n)`` for a loss clipped to ``[0, L]``
``thm2``           ``lambda * T`` with the earlier additive term ``T``
``thm3_exact``     ``ln E_pi exp(lambda v_w) / (1 + 2 lambda v_w / n)^{n/2}``
``thm3_relaxed``   ``ln E_pi exp(2 lambda^2 v_w^2 / n)``
``thm4``           as ``thm3_exact`` with ``rho_{n,w}`` in the denominator
``cor6``           large-``n`` limit ``ln E_pi exp(lambda (v_w - rho_{*,w}))``
=================  ==========================================================

``v_w`` is the generalization loss of ``w`` and ``rho_{n,w}`` replaces its
quadratic part by ``rho_n |w - w*|^2`` where ``rho_n`` is the minimal
eigenvalue of the stacked-input covariance.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import posterior as post
from .errors import ConfigError, DivergenceError
from .mc import PriorSpec, PsiEstimate, estimate_log_expectation, ess_profile, tilt_is_valid, tilted_gaussian
from .model import DataModel, Dataset, IIDIsotropic, regression_params

BOUND_KINDS = ("bounded_loss", "thm2", "thm3_exact", "thm3_relaxed", "thm4", "cor6")
COR6_NOTE = "asymptote, not a certificate at finite n"

__all__ = [
    "BOUND_KINDS",
    "BoundCertificate",
    "PriorSpec",
    "PsiEstimate",
    "assemble_certificate",
    "certify",
    "finiteness_check",
    "psi_bounded",
    "psi_cor6_limit",
    "psi_thm2_term",
    "psi_thm3_exact",
    "psi_thm3_relaxed",
    "psi_thm4",
]


def _quad(model: DataModel, U: np.ndarray, Q: np.ndarray) -> np.ndarray:
    # iid models use sigma_x^2 |u|^2 so that v_w and rho_{n,w} agree bit-for-bit at rho_n = sigma_x^2
    if isinstance(model, IIDIsotropic):
        return model.sigma_x**2 * np.sum(U * U, axis=1)
    return np.einsum("ij,jk,ik->i", U, Q, U)


def _check_prior(prior: PriorSpec, d: int):
    if prior.d != d:
        raise ValueError(f"prior dimension {prior.d} does not match model dimension {d}")


def _check_lambda(lam):
    if not (math.isfinite(lam) and lam > 0):
        raise ValueError(f"lambda must be positive and finite, got {lam}")


def psi_bounded(lam: float, n: int, L: float) -> PsiEstimate:
    if not L > 0:
        raise ValueError(f"loss bound L must be positive, got {L}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return PsiEstimate.closed_form(lam**2 * L**2 / (8.0 * n))


def _untruncated_isotropic_sigma(prior: PriorSpec) -> float | None:
    if prior.truncated:
        return None
    return prior.base.isotropic_sigma()


def finiteness_check(prior: PriorSpec, model: DataModel, lam: float, kind: str = "thm3_exact", rho_star: float | None = None) -> bool:
    """Whether the complexity term of ``kind`` is finite.

    For an untruncated Gaussian prior ``N(mu, S)`` the exact terms behave like
    ``exp(lambda (w-w*)^T Q_x (w-w*))`` at infinity (the denominator is only
    polynomial), so they are finite iff ``2 lambda lambda_max(S^1/2 Q_x S^1/2) < 1``;
    for ``S = sigma_pi^2 I`` this is ``2 lambda sigma_pi^2 lambda_max(Q_x) < 1``.
    The relaxed term grows like ``exp(c |w|^4)`` and is never finite. Truncated
    priors have compact support, so every term is finite.
    """
    if prior.truncated:
        return True
    if kind == "thm3_relaxed":
        return False
    if kind in ("bounded_loss", "thm2"):
        return True
    _, Q, _ = regression_params(model)
    if kind in ("thm3_exact", "thm4"):
        return tilt_is_valid(prior.base, lam * Q)
    if kind == "cor6":
        if rho_star is None:
            raise ValueError("cor6 finiteness needs rho_star")
        return tilt_is_valid(prior.base, lam * (Q - rho_star * np.eye(Q.shape[0])))
    raise ValueError(f"unknown bound kind {kind!r}")


def _finiteness_message(prior: PriorSpec, model: DataModel, lam: float, kind: str) -> str:
    _, Q, _ = regression_params(model)
    top = float(np.linalg.eigvalsh(prior.base.cov)[-1]) * float(np.linalg.eigvalsh(Q)[-1])
    return (
        f"{kind} complexity term is infinite for an untruncated Gaussian prior: "
        f"requires 2*lambda*lambda_max(Q_x)*sigma_pi^2 < 1, got 2*{lam:g}*{top:.6g} = {2 * lam * top:.6g}"
    )


def _exact_log_integrand(model: DataModel, lam: float, n: int, rho_n: float | None):
    w_star, Q, s = regression_params(model)
    half_n = 0.5 * n

    def log_f(W):
        U = W - w_star
        v = _quad(model, U, Q) + s**2
        if rho_n is None:
            r = v
        else:
            r = rho_n * np.sum(U * U, axis=1) + s**2
        return lam * v - half_n * np.log1p(lam * r / half_n)

    return log_f, (lam * Q, w_star)


def _mc_psi(prior, model, lam, n, rho_n, M, seed, kind, sampler, threads) -> PsiEstimate:
    w_star, _, _ = regression_params(model)
    _check_prior(prior, w_star.size)
    _check_lambda(lam)
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if M < 1000:
        raise ValueError(f"need at least 1000 Monte Carlo samples, got {M}")
    if not finiteness_check(prior, model, lam, kind):
        return PsiEstimate.diverged(_finiteness_message(prior, model, lam, kind))
    log_f, tilt = _exact_log_integrand(model, lam, n, rho_n)
    return estimate_log_expectation(prior, log_f, M, seed, tilt=tilt, sampler=sampler, threads=threads)


def psi_thm3_exact(prior: PriorSpec, model: DataModel, lam: float, n: int, M: int = 100_000, seed=0, sampler="auto", threads=None) -> PsiEstimate:
    """Exact complexity term under independent inputs (uses ``v_w`` in the denominator)."""
    return _mc_psi(prior, model, lam, n, None, M, seed, "thm3_exact", sampler, threads)


def psi_thm4(prior: PriorSpec, model: DataModel, lam: float, n: int, rho_n: float, M: int = 100_000, seed=0, sampler="auto", threads=None) -> PsiEstimate:
    """Complexity term for dependent inputs with eigenvalue floor ``rho_n``."""
    if not rho_n >= 0:
        raise ValueError(f"rho_n must be non-negative, got {rho_n}")
    return _mc_psi(prior, model, lam, n, float(rho_n), M, seed, "thm4", sampler, threads)


def psi_thm3_relaxed(prior: PriorSpec, model: DataModel, lam: float, n: int, M: int = 100_000, seed=0, sampler="auto", threads=None) -> PsiEstimate:
    """``ln E_pi exp(2 lambda^2 v_w^2 / n)``: finite only for truncated priors."""
    w_star, Q, s = regression_params(model)
    _check_prior(prior, w_star.size)
    _check_lambda(lam)
    if M < 1000:
        raise ValueError(f"need at least 1000 Monte Carlo samples, got {M}")
    coef = 2.0 * lam**2 / n

    def log_f(W):
        v = _quad(model, W - w_star, Q) + s**2
        return coef * v * v

    if not prior.truncated:
        diag = ess_profile(prior, log_f, [M], seed)[0]
        return PsiEstimate.diverged(
            "relaxed complexity term integrates exp(c |w|^4) against a Gaussian prior and is infinite; use a truncated prior",
            ess=diag[1] * diag[0],
            sampler="prior",
        )
    if sampler == "tilted":
        raise ValueError("relaxed term has no quadratic tilt; use 'annealed' or 'prior'")
    return estimate_log_expectation(prior, log_f, M, seed, sampler=sampler, threads=threads)


def psi_cor6_limit(prior: PriorSpec, model: DataModel, lam: float, rho_star: float, M: int = 100_000, seed=0, sampler="auto", threads=None) -> PsiEstimate:
    """Large-``n`` limit ``ln E_pi exp(lambda (w-w*)^T (Q_x - rho_* I) (w-w*))``."""
    if not rho_star >= 0:
        raise ValueError(f"rho_star must be non-negative, got {rho_star}")
    w_star, Q, _ = regression_params(model)
    _check_prior(prior, w_star.size)
    _check_lambda(lam)
    A = lam * (Q - rho_star * np.eye(Q.shape[0]))
    if not prior.truncated:
        if not tilt_is_valid(prior.base, A):
            return PsiEstimate.diverged(_finiteness_message(prior, model, lam, "cor6"))
        tg = tilted_gaussian(prior.base, A, w_star)
        return PsiEstimate.closed_form(tg.log_normalizer, COR6_NOTE)

    def log_f(W):
        U = W - w_star
        return np.einsum("ij,jk,ik->i", U, A, U)

    est = estimate_log_expectation(prior, log_f, M, seed, tilt=(A, w_star), sampler=sampler, threads=threads)
    return PsiEstimate(est.value, est.std_error, est.method, est.ess, est.sampler, COR6_NOTE)


def thm2_floor(sigma_pi: float, model: IIDIsotropic) -> float:
    return 2.0 * model.sigma_x**2 * sigma_pi**2


def thm2_additive_term(sigma_pi: float, model: IIDIsotropic, lam: float, c: float | None = None) -> float:
    """The additive term ``T`` of the earlier bound; ``c`` defaults to its floor ``2 sigma_x^2 sigma_pi^2``."""
    if not isinstance(model, IIDIsotropic):
        raise TypeError("the earlier bound applies to iid isotropic inputs only")
    floor = thm2_floor(sigma_pi, model)
    c = floor if c is None else float(c)
    if c < floor * (1 - 1e-12):
        raise ConfigError(f"c must be >= 2 sigma_x^2 sigma_pi^2 = {floor:g}, got {c:g}")
    _check_lambda(lam)
    if lam * c >= 1.0:
        raise ConfigError(f"lambda must lie in (0, 1/c) = (0, {1.0 / c:g}), got {lam:g}")
    d = model.d
    ws2 = float(model.w_star @ model.w_star)
    return (0.5 * (d + ws2) * c + (1.0 - lam * c) * model.sigma_eps**2) / (1.0 - lam * c)


def psi_thm2_term(sigma_pi: float, model: IIDIsotropic, lam: float, c: float | None = None) -> float:
    """``lambda * T`` so that the earlier bound fits the common certificate shape."""
    return lam * thm2_additive_term(sigma_pi, model, lam, c)


@dataclass(frozen=True)
class BoundCertificate:
    bound_kind: str
    lam: float
    delta: float
    expected_empirical: float
    kl: float
    psi: PsiEstimate
    rhs: float
    rhs_std_error: float
    n: int | None = None
    d: int | None = None
    components: dict = field(default_factory=dict)
    config_digest: str | None = None
    note: str = ""

    @property
    def finite(self) -> bool:
        return math.isfinite(self.rhs)

    def as_dict(self) -> dict:
        out = {
            "bound_kind": self.bound_kind,
            "lambda": self.lam,
            "delta": self.delta,
            "n": self.n,
            "d": self.d,
            "expected_empirical": self.expected_empirical,
            "kl": self.kl,
            "psi": self.psi.as_dict(),
            "rhs": self.rhs if math.isfinite(self.rhs) else None,
            "rhs_std_error": self.rhs_std_error,
            "config_digest": self.config_digest,
        }
        if self.components:
            out["components"] = self.components
        if self.note:
            out["note"] = self.note
        return out


def assemble_certificate(
    expected_empirical: float,
    kl: float,
    psi: PsiEstimate,
    lam: float,
    delta: float,
    bound_kind: str = "thm3_exact",
    n: int | None = None,
    d: int | None = None,
    config_digest: str | None = None,
    components: dict | None = None,
) -> BoundCertificate:
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    _check_lambda(lam)
    if kl < 0:
        raise ValueError(f"KL must be non-negative, got {kl}")
    if bound_kind not in BOUND_KINDS:
        raise ValueError(f"unknown bound kind {bound_kind!r}")
    log_conf = math.log(1.0 / delta)
    penalty = (kl + log_conf + psi.value) / lam
    rhs = expected_empirical + penalty if psi.finite else math.inf
    comps = {
        "kl_over_lambda": kl / lam,
        "log_conf_over_lambda": log_conf / lam,
        "psi_over_lambda": psi.value / lam if psi.finite else None,
    }
    comps.update(components or {})
    note = COR6_NOTE if bound_kind == "cor6" else ""
    return BoundCertificate(
        bound_kind, float(lam), float(delta), float(expected_empirical), float(kl), psi,
        float(rhs), float(psi.std_error / lam), n, d, comps, config_digest, note,
    )


@dataclass(frozen=True, eq=False)
class PosteriorTerms:
    """Gibbs posterior of a (possibly truncated) prior with the data-dependent certificate terms."""

    rho: post.GaussianWeightMeasure
    kl: float
    expected_empirical: float
    mass_lower: float  # lower bound on rho(B); 1 without truncation

    def expected_generalization(self, model: DataModel) -> float:
        """Posterior-averaged generalization loss (an upper bound under truncation)."""
        return post.expected_generalization_loss(self.rho, model) / self.mass_lower


def posterior_terms(prior: PriorSpec, S: Dataset, lam: float) -> PosteriorTerms:
    rho = post.gibbs_posterior(prior.base, S, lam)
    emp = post.expected_empirical_loss(rho, S)
    if not prior.truncated:
        return PosteriorTerms(rho, post.kl_gaussian(rho, prior.base), emp, 1.0)
    tt = post.truncated_kl_bound(rho, prior.base, prior.truncation_radius)
    if tt.posterior_mass_lower <= 0:
        return PosteriorTerms(rho, math.inf, math.inf, 0.0)
    return PosteriorTerms(rho, tt.kl, emp / tt.posterior_mass_lower, tt.posterior_mass_lower)


def clipped_expected_empirical(rho: post.GaussianWeightMeasure, S: Dataset, L: float, seed, draws: int = 4096) -> float:
    """``E_rho mean_i min((y_i - w.x_i)^2, L)`` by posterior sampling."""
    from .rng import as_seed

    W = rho.sample(draws, as_seed(seed).generator(7))
    R = S.y[None, :] - W @ S.x.T
    return float(np.mean(np.minimum(R * R, L)))


def config_digest(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def certify(
    S: Dataset,
    model: DataModel,
    prior: PriorSpec,
    lam: float,
    delta: float,
    bound_kind: str = "thm3_exact",
    M: int = 100_000,
    seed=0,
    c: float | None = None,
    loss_bound: float | None = None,
    rho_n: float | None = None,
    rho_star: float | None = None,
    sampler: str = "auto",
    threads: int | None = None,
    digest: str | None = None,
) -> BoundCertificate:
    """Gibbs posterior on ``S`` plus the chosen complexity term, assembled into a certificate.

    Raises ``DivergenceError`` if the complexity term is infinite.
    """
    from .spectral import rho_at, rho_sequence

    if bound_kind not in BOUND_KINDS:
        raise ConfigError(f"unknown bound kind {bound_kind!r}")
    _check_prior(prior, S.d)
    terms = posterior_terms(prior, S, lam)
    n = S.n
    comps = {}
    if bound_kind == "thm3_exact":
        psi = psi_thm3_exact(prior, model, lam, n, M, seed, sampler, threads)
    elif bound_kind == "thm3_relaxed":
        psi = psi_thm3_relaxed(prior, model, lam, n, M, seed, sampler, threads)
    elif bound_kind == "thm4":
        if rho_n is None:
            rho_n = rho_at(model, n)
        comps["rho_n"] = rho_n
        psi = psi_thm4(prior, model, lam, n, rho_n, M, seed, sampler, threads)
    elif bound_kind == "cor6":
        if rho_star is None:
            rho_star = rho_sequence(model, n, threads=threads).rho_star_bracket[0]
        comps["rho_star"] = rho_star
        psi = psi_cor6_limit(prior, model, lam, rho_star, M, seed, sampler, threads)
    elif bound_kind == "thm2":
        sigma_pi = _untruncated_isotropic_sigma(prior)
        if sigma_pi is None or np.any(prior.base.mean != 0):
            raise ConfigError("the earlier bound needs an untruncated zero-mean isotropic Gaussian prior")
        if not isinstance(model, IIDIsotropic):
            raise ConfigError("the earlier bound applies to iid isotropic inputs only")
        cc = thm2_floor(sigma_pi, model) if c is None else c
        comps["c"] = cc
        psi = PsiEstimate.closed_form(psi_thm2_term(sigma_pi, model, lam, cc))
    else:  # bounded_loss
        if loss_bound is None:
            raise ConfigError("bounded_loss needs loss_bound")
        comps["loss_bound"] = loss_bound
        emp = clipped_expected_empirical(terms.rho, S, loss_bound, seed) / terms.mass_lower
        terms = PosteriorTerms(terms.rho, terms.kl, emp, terms.mass_lower)
        psi = psi_bounded(lam, n, loss_bound)
    if not psi.finite:
        raise DivergenceError(psi.note or f"{bound_kind} complexity term diverged")
    if terms.mass_lower < 1.0:
        comps["posterior_ball_mass_lower"] = terms.mass_lower
    return assemble_certificate(terms.expected_empirical, terms.kl, psi, lam, delta, bound_kind, n, S.d, digest, comps)
