"""Monte Carlo estimation of log prior expectations ``ln E_{w~pi}[exp(g(w))]``.

Three samplers share one contract and return a ``PsiEstimate``:

``prior``
    Plain averaging over prior draws, in log-sum-exp form.
``tilted``
    Importance sampling from an equal mixture of ``pi`` and the Gaussian
    ``q ~ pi(w) exp((w-w*)^T A (w-w*))``, whose normalizer is known in closed
    form. When ``g`` is that quadratic plus a bounded correction (the case for
    every exact complexity term), the importance weights are bounded and the
    estimator is well behaved right up to the finiteness boundary.
``annealed``
    Sequential Monte Carlo with adaptive tempering from ``pi`` to
    ``pi exp(g)``. Used for truncated priors, where the integrand may pile up
    on the boundary of the support and plain averaging misses it.

Work is split into fixed-size chunks (or replicates) on their own random
streams, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .posterior import GaussianWeightMeasure, ball_mass
from .rng import SeedSpec, as_seed, ordered_map

CHUNK = 1 << 16
ESS_FLOOR = 10.0
DEFAULT_RADIUS_SCALE = 5.0
SMC_REPLICATES = 8


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Gaussian prior, optionally truncated to a Euclidean ball about its mean."""

    base: GaussianWeightMeasure
    truncation_radius: float | None = None

    def __post_init__(self):
        r = self.truncation_radius
        if r is not None and not (math.isfinite(r) and r > 0):
            raise ValueError(f"truncation radius must be positive, got {r}")

    @classmethod
    def isotropic(cls, d: int, sigma: float, truncation_radius=None, mean=None) -> "PriorSpec":
        """``N(mean, sigma^2 I)``; ``truncation_radius="default"`` means ``5 sigma``."""
        if truncation_radius == "default":
            truncation_radius = DEFAULT_RADIUS_SCALE * sigma
        return cls(GaussianWeightMeasure.isotropic(d, sigma, mean), truncation_radius)

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def truncated(self) -> bool:
        return self.truncation_radius is not None

    def contains(self, W) -> np.ndarray:
        W = np.atleast_2d(W)
        if not self.truncated:
            return np.ones(W.shape[0], dtype=bool)
        return np.sum((W - self.base.mean) ** 2, axis=1) <= self.truncation_radius**2

    def logpdf_unnormalized(self, W) -> np.ndarray:
        lp = self.base.logpdf(W)
        return np.where(self.contains(W), lp, -np.inf)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if not self.truncated:
            return self.base.sample(m, rng)
        out = []
        have = 0
        batch = max(m, 64)
        for _ in range(10_000):
            W = self.base.sample(batch, rng)
            W = W[self.contains(W)]
            out.append(W)
            have += W.shape[0]
            if have >= m:
                return np.concatenate(out)[:m]
        raise RuntimeError("rejection sampler for the truncated prior accepts almost nothing")


@dataclass(frozen=True)
class PsiEstimate:
    value: float
    std_error: float
    method: str  # closed_form | monte_carlo | diverged
    ess: float | None = None
    sampler: str | None = None
    note: str = ""

    @property
    def finite(self) -> bool:
        return self.method != "diverged" and math.isfinite(self.value)

    @classmethod
    def closed_form(cls, value: float, note: str = "") -> "PsiEstimate":
        return cls(float(value), 0.0, "closed_form", None, None, note)

    @classmethod
    def diverged(cls, note: str, ess: float | None = None, sampler: str | None = None) -> "PsiEstimate":
        return cls(math.inf, 0.0, "diverged", ess, sampler, note)

    def as_dict(self) -> dict:
        return {
            "value": self.value if math.isfinite(self.value) else None,
            "std_error": self.std_error,
            "method": self.method,
            "ess": self.ess,
        }


def log_mean_exp(logw) -> float:
    logw = np.asarray(logw, dtype=float)
    return float(logsumexp(logw) - math.log(logw.size))


def ess(logw) -> float:
    """``(sum w)^2 / sum w^2`` from log weights."""
    logw = np.asarray(logw, dtype=float)
    if not np.any(np.isfinite(logw)):
        return 0.0
    return float(np.exp(2 * logsumexp(logw) - logsumexp(2 * logw)))


def summarize_log_weights(logw, offset: float = 0.0, sampler: str = "prior", note: str = "") -> PsiEstimate:
    """Estimate from iid log weights: log-mean-exp with a delta-method standard error."""
    logw = np.asarray(logw, dtype=float)
    m = logw.size
    top = np.max(logw)
    if not np.isfinite(top):
        return PsiEstimate.diverged("all importance weights are zero", 0.0, sampler)
    w = np.exp(logw - top)
    mean = w.mean()
    se = float(w.std(ddof=1) / math.sqrt(m) / mean) if m > 1 else math.inf
    e = ess(logw)
    if e < ESS_FLOOR:
        return PsiEstimate.diverged(f"effective sample size {e:.3g} < {ESS_FLOOR:g}: heavy-tailed integrand", e, sampler)
    return PsiEstimate(float(top + math.log(mean) + offset), se, "monte_carlo", e, sampler, note)


def _chunks(M: int):
    return [(i, min(CHUNK, M - i * CHUNK)) for i in range((M + CHUNK - 1) // CHUNK)]


# ---------------------------------------------------------------- tilted Gaussian


@dataclass(frozen=True, eq=False)
class TiltedGaussian:
    """``q(w) = pi(w) exp((w-c)^T A (w-c)) / Z`` for a Gaussian ``pi``."""

    proposal: GaussianWeightMeasure
    log_normalizer: float


def tilt_is_valid(base: GaussianWeightMeasure, A) -> bool:
    """``E_pi exp((w-c)^T A (w-c))`` is finite iff ``I - 2 L^T A L`` is positive definite."""
    L = base.chol()
    top = np.linalg.eigvalsh(L.T @ np.asarray(A) @ L)[-1]
    return bool(2.0 * top < 1.0)


def tilted_gaussian(base: GaussianWeightMeasure, A, center) -> TiltedGaussian:
    A = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    c = np.asarray(center, dtype=float)
    if not tilt_is_valid(base, A):
        raise ValueError("quadratic tilt makes the prior expectation infinite")
    L = base.chol()
    # Work in whitened coordinates w = mu + L z, z ~ N(0, I).
    K = L.T @ A @ L
    H = np.eye(base.d) - 2.0 * K  # precision of z under q
    delta = linalg.solve_triangular(L, base.mean - c, lower=True)  # (mu - c) whitened
    # exponent: -z.z/2 + (z + delta)^T K (z + delta)
    b = 2.0 * K @ delta
    Hc = linalg.cho_factor(H, lower=True)
    z_mean = linalg.cho_solve(Hc, b)
    logdet_H = 2.0 * np.sum(np.log(np.diag(Hc[0])))
    log_z = -0.5 * logdet_H + 0.5 * b @ z_mean + delta @ K @ delta
    z_cov = linalg.cho_solve(Hc, np.eye(base.d))
    mean = base.mean + L @ z_mean
    cov = L @ z_cov @ L.T
    return TiltedGaussian(GaussianWeightMeasure(mean, 0.5 * (cov + cov.T)), float(log_z))


def _estimate_prior(prior: PriorSpec, log_f, M, seed: SeedSpec, threads) -> PsiEstimate:
    def run(chunk):
        i, m = chunk
        W = prior.sample(m, seed.generator(i))
        return log_f(W)

    logw = np.concatenate(ordered_map(run, _chunks(M), threads))
    return summarize_log_weights(logw, sampler="prior")


def _estimate_tilted(prior: PriorSpec, log_f, M, seed: SeedSpec, tilt, threads) -> PsiEstimate:
    # Defensive mixture: half of each chunk from the prior, half from the tilted
    # Gaussian, weighted against the equal-weight mixture density. The weight
    # exp(g) / (1/2 + exp(quad) pi(B) / (2 Z)) is bounded by 2 Z exp(g - quad), and
    # the prior half covers the core when the tilted proposal is very wide.
    A, center = tilt
    base = prior.base
    log_mass = 0.0
    if prior.truncated:
        mass = ball_mass(base, base.mean, prior.truncation_radius)
        if mass is None:
            raise ValueError("tilted sampling of a truncated prior needs an isotropic base")
        log_mass = math.log(mass)
    tg = tilted_gaussian(base, A, center)
    c = np.asarray(center, dtype=float)
    half = math.log(0.5)

    def run(chunk):
        i, m = chunk
        rng = seed.generator(i)
        W = np.concatenate([prior.sample(m // 2, rng), tg.proposal.sample(m - m // 2, rng)])
        U = W - c
        quad = np.einsum("ij,jk,ik->i", U, A, U)
        lw = log_f(W) - np.logaddexp(half, half + quad + log_mass - tg.log_normalizer)
        if prior.truncated:
            lw = np.where(prior.contains(W), lw, -np.inf)
        return lw

    logw = np.concatenate(ordered_map(run, _chunks(M), threads))
    return summarize_log_weights(logw, sampler="tilted")


# ---------------------------------------------------------------- annealed SMC


def _systematic_resample(logw, rng) -> np.ndarray:
    w = np.exp(logw - logsumexp(logw))
    m = w.size
    positions = (rng.random() + np.arange(m)) / m
    idx = np.searchsorted(np.cumsum(w), positions)
    return np.minimum(idx, m - 1)


def _next_temperature(lf, beta, target) -> float:
    def ess_at(b):
        return ess((b - beta) * lf)

    if ess_at(1.0) >= target:
        return 1.0
    lo, hi = beta, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ess_at(mid) >= target:
            lo = mid
        else:
            hi = mid
    return max(lo, beta + 1e-12)


def smc_log_expectation(prior: PriorSpec, log_f, m: int, rng, ess_fraction=0.5, n_moves=5, max_steps=10_000):
    """One SMC run; returns ``(log Z estimate, tempering steps, min conditional ESS fraction)``."""
    d = prior.d
    W = prior.sample(m, rng)
    lf = log_f(W)
    lp = prior.base.logpdf(W)
    beta = 0.0
    log_z = 0.0
    steps = 0
    min_frac = 1.0
    scale = 2.38 / math.sqrt(d)
    while beta < 1.0:
        nb = _next_temperature(lf, beta, ess_fraction * m)
        incr = (nb - beta) * lf
        log_z += log_mean_exp(incr)
        min_frac = min(min_frac, ess(incr) / m)
        idx = _systematic_resample(incr, rng)
        W, lf, lp = W[idx], lf[idx], lp[idx]
        beta = nb
        steps += 1
        if steps > max_steps:
            raise RuntimeError("tempering did not reach beta = 1")
        cov = np.cov(W, rowvar=False).reshape(d, d)
        jitter = 1e-12 * max(1.0, float(np.trace(cov)) / d)
        Lc = np.linalg.cholesky(cov + jitter * np.eye(d))
        for _ in range(n_moves):
            prop = W + scale * rng.standard_normal((m, d)) @ Lc.T
            inside = prior.contains(prop)
            lf_p = np.full(m, -np.inf)
            lp_p = np.full(m, -np.inf)
            if np.any(inside):
                lf_p[inside] = log_f(prop[inside])
                lp_p[inside] = prior.base.logpdf(prop[inside])
            with np.errstate(invalid="ignore"):
                log_acc = (lp_p + beta * lf_p) - (lp + beta * lf)
            accept = inside & (np.log(rng.random(m)) < log_acc)
            W = np.where(accept[:, None], prop, W)
            lf = np.where(accept, lf_p, lf)
            lp = np.where(accept, lp_p, lp)
            rate = accept.mean()
            scale *= math.exp(rate - 0.3)
            scale = min(max(scale, 1e-6), 10.0)
    return log_z, steps, min_frac


def _estimate_annealed(prior: PriorSpec, log_f, M, seed: SeedSpec, threads) -> PsiEstimate:
    R = SMC_REPLICATES
    m = max(M // R, 64)

    def run(r):
        return smc_log_expectation(prior, log_f, m, seed.generator(r))

    results = ordered_map(run, range(R), threads)
    log_zs = np.array([r[0] for r in results])
    min_frac = min(r[2] for r in results)
    top = log_zs.max()
    z = np.exp(log_zs - top)
    value = float(top + math.log(z.mean()))
    se = float(z.std(ddof=1) / math.sqrt(R) / z.mean())
    steps = max(r[1] for r in results)
    note = f"{R} SMC replicates x {m} particles, up to {steps} tempering steps"
    return PsiEstimate(value, se, "monte_carlo", float(min_frac * m * R), "annealed", note)


def estimate_log_expectation(
    prior: PriorSpec,
    log_f: Callable[[np.ndarray], np.ndarray],
    M: int,
    seed,
    tilt=None,
    sampler: str = "auto",
    threads: int | None = None,
) -> PsiEstimate:
    """Estimate ``ln E_{w~prior} exp(log_f(w))``.

    ``tilt=(A, center)`` names a quadratic ``(w-center)^T A (w-center)`` that
    captures the growth of ``log_f``; it enables the ``tilted`` sampler.
    ``sampler="auto"`` picks ``tilted`` for untruncated priors (when a tilt is
    given) and ``annealed`` for truncated ones.
    """
    if M < 1000:
        raise ValueError(f"need at least 1000 Monte Carlo samples, got {M}")
    seed = as_seed(seed)
    if sampler == "auto":
        if prior.truncated:
            sampler = "annealed"
        else:
            sampler = "tilted" if tilt is not None else "prior"
    if sampler == "prior":
        return _estimate_prior(prior, log_f, M, seed, threads)
    if sampler == "tilted":
        if tilt is None:
            raise ValueError("tilted sampler needs a tilt")
        return _estimate_tilted(prior, log_f, M, seed, tilt, threads)
    if sampler == "annealed":
        if not prior.truncated:
            raise ValueError("annealed sampler needs a truncated prior (bounded support)")
        return _estimate_annealed(prior, log_f, M, seed, threads)
    raise ValueError(f"unknown sampler {sampler!r}")


def ess_profile(prior: PriorSpec, log_f, sizes, seed) -> list[tuple[int, float]]:
    """``(M, ESS / M)`` for plain prior sampling at increasing ``M`` (divergence diagnostic)."""
    seed = as_seed(seed)
    out = []
    for M in sizes:
        logw = np.concatenate([log_f(prior.sample(m, seed.generator(i))) for i, m in _chunks(M)])
        out.append((int(M), ess(logw) / M))
    return out
