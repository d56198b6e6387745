"""Gaussian weight measures: Gibbs posterior, KL divergence, posterior-averaged losses.

All SPD solves go through a Cholesky factorization; no explicit inverses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .model import DataModel, Dataset, check_spd, regression_params


@dataclass(frozen=True, eq=False)
class GaussianWeightMeasure:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float, ndmin=1)
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise ValueError("mean must be a finite vector")
        cov = check_spd(self.cov, "cov")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean of length {mean.size}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def isotropic(cls, d: int, sigma: float, mean=None) -> "GaussianWeightMeasure":
        return cls(np.zeros(d) if mean is None else mean, sigma**2 * np.eye(d))

    @property
    def d(self) -> int:
        return self.mean.size

    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov)

    def logpdf(self, W) -> np.ndarray:
        W = np.atleast_2d(W)
        L = self.chol()
        z = linalg.solve_triangular(L, (W - self.mean).T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return -0.5 * (np.sum(z * z, axis=0) + logdet + self.d * np.log(2 * np.pi))

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + rng.standard_normal((m, self.d)) @ self.chol().T

    def isotropic_sigma(self) -> float | None:
        """``sigma`` if ``cov == sigma^2 I`` exactly, else ``None``."""
        c = self.cov[0, 0]
        if np.array_equal(self.cov, c * np.eye(self.d)):
            return float(np.sqrt(c))
        return None


def _check_dims(measure: GaussianWeightMeasure, d: int):
    if measure.d != d:
        raise ValueError(f"measure dimension {measure.d} does not match d={d}")


def gibbs_posterior(prior: GaussianWeightMeasure, S: Dataset, lam: float) -> GaussianWeightMeasure:
    """Minimizer of ``lam * E_rho[emp_loss] + KL(rho || prior)`` over all measures.

    For the squared loss and a Gaussian prior it is Gaussian with precision
    ``prior.cov^-1 + (2 lam / n) X^T X``.
    """
    _check_dims(prior, S.d)
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not np.any(S.x):
        return prior  # no information in the data; avoids round-off from refactorizing
    c = 2.0 * lam / S.n
    prior_chol = linalg.cho_factor(prior.cov, lower=True)
    prior_prec = linalg.cho_solve(prior_chol, np.eye(prior.d))
    prec = 0.5 * (prior_prec + prior_prec.T) + c * (S.x.T @ S.x)
    rhs = linalg.cho_solve(prior_chol, prior.mean) + c * (S.x.T @ S.y)
    try:
        prec_chol = linalg.cho_factor(prec, lower=True)
    except linalg.LinAlgError as exc:  # pragma: no cover - precision of SPD prior plus PSD term
        raise RuntimeError("posterior precision is not positive definite") from exc
    cov = linalg.cho_solve(prec_chol, np.eye(prior.d))
    return GaussianWeightMeasure(linalg.cho_solve(prec_chol, rhs), 0.5 * (cov + cov.T))


def kl_gaussian(rho: GaussianWeightMeasure, pi: GaussianWeightMeasure) -> float:
    if rho.d != pi.d:
        raise ValueError(f"dimension mismatch: {rho.d} vs {pi.d}")
    Lp = pi.chol()
    Lr = rho.chol()
    M = linalg.solve_triangular(Lp, Lr, lower=True)
    dm = linalg.solve_triangular(Lp, pi.mean - rho.mean, lower=True)
    logdet = 2.0 * (np.sum(np.log(np.diag(Lp))) - np.sum(np.log(np.diag(Lr))))
    kl = 0.5 * (np.sum(M * M) + dm @ dm - rho.d + logdet)
    return max(float(kl), 0.0)


def expected_empirical_loss(rho: GaussianWeightMeasure, S: Dataset) -> float:
    _check_dims(rho, S.d)
    r = S.y - S.x @ rho.mean
    XL = S.x @ rho.chol()
    return float((r @ r + np.sum(XL * XL)) / S.n)


def expected_generalization_loss(rho: GaussianWeightMeasure, model: DataModel) -> float:
    w_star, Q, s = regression_params(model)
    _check_dims(rho, w_star.size)
    u = w_star - rho.mean
    return float(u @ Q @ u + np.sum(Q * rho.cov) + s**2)


def gibbs_objective(rho: GaussianWeightMeasure, S: Dataset, lam: float, prior: GaussianWeightMeasure) -> float:
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return lam * expected_empirical_loss(rho, S) + kl_gaussian(rho, prior)


# Truncation to a Euclidean ball.
#
# A truncated prior pi_B = pi 1_B / pi(B) pairs with the truncated Gibbs posterior
# rho_B = rho 1_B / rho(B), which is again the exact Gibbs posterior. The
# functions below give rigorous upper bounds on KL(rho_B || pi_B) and on
# posterior averages of non-negative functions, using only Gaussian closed forms
# and a chi-square tail bound on rho(B^c).


def ball_mass(measure: GaussianWeightMeasure, center, radius: float) -> float | None:
    """Exact ``P(|w - center| <= radius)`` when the measure is isotropic and centred on ``center``."""
    sigma = measure.isotropic_sigma()
    if sigma is None or not np.array_equal(measure.mean, np.asarray(center, dtype=float)):
        return None
    return float(stats.chi2.cdf((radius / sigma) ** 2, measure.d))


def outside_ball_bound(measure: GaussianWeightMeasure, center, radius: float) -> float:
    """Upper bound on ``P(|w - center| > radius)``."""
    exact = ball_mass(measure, center, radius)
    if exact is not None:
        return 1.0 - exact
    slack = radius - float(np.linalg.norm(measure.mean - np.asarray(center, dtype=float)))
    if slack <= 0:
        return 1.0
    top = float(np.linalg.eigvalsh(measure.cov)[-1])
    return float(stats.chi2.sf(slack**2 / top, measure.d))


def _log_ratio_second_moment(rho: GaussianWeightMeasure, pi: GaussianWeightMeasure) -> float:
    # h = log(rho/pi) = 0.5 z^T (G - I) z + b^T z + const under w = m + L z.
    L = rho.chol()
    Lp = pi.chol()
    A = linalg.solve_triangular(Lp, L, lower=True)
    G = A.T @ A
    b = A.T @ linalg.solve_triangular(Lp, rho.mean - pi.mean, lower=True)
    H = G - np.eye(rho.d)
    var = 0.5 * np.sum(H * H) + b @ b
    kl = kl_gaussian(rho, pi)
    return float(var + kl**2)


@dataclass(frozen=True)
class TruncatedTerms:
    kl: float
    posterior_mass_lower: float
    tail_bound: float


def truncated_kl_bound(rho: GaussianWeightMeasure, pi: GaussianWeightMeasure, radius: float) -> TruncatedTerms:
    """Upper bound on ``KL(rho_B || pi_B)`` for the ball of ``radius`` about ``pi.mean``."""
    center = pi.mean
    eps = outside_ball_bound(rho, center, radius)
    if eps >= 1.0:
        return TruncatedTerms(np.inf, 0.0, 1.0)
    kl = kl_gaussian(rho, pi)
    tail = np.sqrt(eps) * np.sqrt(_log_ratio_second_moment(rho, pi))
    pi_mass = ball_mass(pi, center, radius)
    log_pi_mass = np.log(pi_mass) if pi_mass is not None else 0.0
    bound = (kl + tail) / (1.0 - eps) + log_pi_mass - np.log1p(-eps)
    return TruncatedTerms(max(float(bound), 0.0), 1.0 - eps, eps)
