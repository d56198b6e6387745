"""Regressor covariances for ARX and correlated-input models.

The regressor of an order-``k`` ARX model,
``X_t = [y_{t-1}, ..., y_{t-k}, u_{t-1}, ..., u_{t-k}]``, evolves as the linear
state-space system ``X_{t+1} = A X_t + B [e_t, u_t]``. Its stationary covariance
``P`` solves ``P = A P A^T + B W B^T`` and the lag-``l`` cross covariance is
``E[X_{t+l} X_t^T] = A^l P``. Stacking ``n`` consecutive regressors gives the
joint covariance ``Q_{X,n}``; its minimal eigenvalue ``rho_n`` is what the
dependent-data bound consumes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import InstabilityError, ResourceError
from .model import ARX, CorrelatedGaussian, DataModel, IIDIsotropic, regression_params
from .rng import SeedSpec, as_seed, ordered_map

SIZE_CAP = 4096
LYAPUNOV_TOL = 1e-12
MAX_LYAPUNOV_STEPS = 10**6
PSD_ROUNDOFF = 1e-10


@dataclass(frozen=True, eq=False)
class StateSpaceForm:
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray


def arx_state_space(model: ARX) -> StateSpaceForm:
    k = model.k
    A = np.zeros((2 * k, 2 * k))
    A[0, :k] = model.a
    A[0, k:] = model.b
    A[1:k, : k - 1] = np.eye(k - 1)
    A[k + 1 :, k : 2 * k - 1] = np.eye(k - 1)
    B = np.zeros((2 * k, 2))
    B[0, 0] = 1.0
    B[k, 1] = 1.0
    W = np.diag([model.sigma_e**2, model.sigma_u**2])
    return StateSpaceForm(A, B, W)


def solve_stationary_covariance(A, Q, tol=LYAPUNOV_TOL, max_steps=MAX_LYAPUNOV_STEPS) -> np.ndarray:
    """Fixed point of ``P = A P A^T + Q`` by squared Smith iteration.

    Iterate ``k`` sums ``2^k`` terms of the series ``sum_j A^j Q A^jT``, so the
    step budget ``max_steps`` counts series terms, not doublings.
    """
    A = np.asarray(A, dtype=float)
    P = np.asarray(Q, dtype=float).copy()
    Ak = A.copy()
    terms = 1
    scale = max(1.0, float(np.max(np.abs(Q))))
    while True:
        increment = Ak @ P @ Ak.T
        P_next = P + increment
        terms *= 2
        if np.max(np.abs(P_next - P)) < tol * scale:
            P = P_next
            break
        if terms >= max_steps or not np.all(np.isfinite(P_next)):
            raise InstabilityError(f"stationary covariance did not converge within {max_steps} steps")
        P = P_next
        Ak = Ak @ Ak
    P = 0.5 * (P + P.T)
    residual = np.max(np.abs(P - A @ P @ A.T - Q))
    if residual >= tol * scale:
        raise InstabilityError(f"stationary covariance residual {residual:.3g} exceeds {tol}")
    return P


@functools.lru_cache(maxsize=256)
def _arx_covariance_cached(model: ARX) -> np.ndarray:
    model.check_stable()
    ss = arx_state_space(model)
    P = solve_stationary_covariance(ss.A, ss.B @ ss.W @ ss.B.T)
    P.setflags(write=False)
    return P


def arx_state_covariance(model: ARX):
    """``(Q_x, cross_covariance)`` where ``cross_covariance(l) = E[X_{t+l} X_t^T] = A^l Q_x``."""
    P = _arx_covariance_cached(model)
    A = arx_state_space(model).A

    def cross_covariance(lag: int) -> np.ndarray:
        if lag < 0:
            raise ValueError("lag must be non-negative")
        return np.linalg.matrix_power(A, lag) @ P

    return P, cross_covariance


def _check_size(n: int, d: int, cap: int):
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if n * d > cap:
        raise ResourceError(f"joint covariance of size {n * d} exceeds cap {cap}")


def joint_covariance(model: DataModel, n: int, cap: int = SIZE_CAP) -> np.ndarray:
    """Covariance of the stacked inputs ``[X_1; ...; X_n]``; block ``(i, j)`` is ``E[X_i X_j^T]``."""
    if isinstance(model, IIDIsotropic):
        _check_size(n, model.d, cap)
        return model.sigma_x**2 * np.eye(n * model.d)
    if isinstance(model, CorrelatedGaussian):
        d = model.d
        _check_size(n, d, cap)
        src = model.joint_cov
        if src is None:
            return np.kron(np.eye(n), model.Q_x)
        if callable(src):
            J = np.asarray(src(n), dtype=float)
            if J.shape != (n * d, n * d):
                raise ValueError(f"joint covariance provider returned shape {J.shape}, expected {(n * d, n * d)}")
            return J
        if src.shape[0] < n * d:
            raise ValueError(f"explicit joint covariance covers {src.shape[0] // d} samples, {n} requested")
        return np.array(src[: n * d, : n * d])
    if isinstance(model, ARX):
        d = model.d
        _check_size(n, d, cap)
        P = _arx_covariance_cached(model)
        A = arx_state_space(model).A
        J = np.empty((n * d, n * d))
        C = P.copy()
        for lag in range(n):
            for i in range(lag, n):
                j = i - lag
                J[i * d : (i + 1) * d, j * d : (j + 1) * d] = C
                J[j * d : (j + 1) * d, i * d : (i + 1) * d] = C.T
            C = A @ C
        return J
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _check_symmetric(M, tol=1e-10) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return 0.5 * (M + M.T)


def min_eigenvalue(M) -> float:
    return float(np.linalg.eigvalsh(_check_symmetric(M), UPLO="L")[0])


@dataclass(frozen=True, eq=False)
class SpectralSummary:
    rho: np.ndarray  # rho[i] is rho_{i+1}
    n_max: int
    rho_star_bracket: tuple
    Q_x: np.ndarray


def rho_at(model: DataModel, n: int, cap: int = SIZE_CAP) -> float:
    """Minimal eigenvalue ``rho_n`` of the joint covariance of ``n`` stacked inputs.

    The joint covariance is PSD by construction, so round-off negatives of size
    up to ``PSD_ROUNDOFF * max|Q_{X,n}|`` are reported as 0. For ARX order
    ``k >= 2`` consecutive regressors share lagged entries and ``rho_n = 0`` for
    every ``n >= 2``.
    """
    if isinstance(model, IIDIsotropic):
        _check_size(n, model.d, cap)
        return model.sigma_x**2
    J = joint_covariance(model, n, cap)
    lam = min_eigenvalue(J)
    if lam < 0:
        if lam < -PSD_ROUNDOFF * float(np.max(np.abs(J))):
            raise ValueError(f"joint covariance is indefinite: minimal eigenvalue {lam:.3g}")
        return 0.0
    return lam


def rho_sequence(model: DataModel, n_max: int, cap: int = SIZE_CAP, threads: int | None = None) -> SpectralSummary:
    _, Q, _ = regression_params(model)
    _check_size(n_max, Q.shape[0], cap)
    rho = np.array(ordered_map(lambda n: rho_at(model, n, cap), range(1, n_max + 1), threads))
    bad = np.nonzero(np.diff(rho) > 1e-12 * max(1.0, rho[0]))[0]
    if bad.size:
        i = int(bad[0]) + 1
        raise AssertionError(f"rho_n increased from n={i} to n={i + 1}: {rho[i - 1]!r} -> {rho[i]!r}")
    bracket = _bracket(rho[-1], rho[n_max // 2 - 1] if n_max >= 2 else rho[-1])
    return SpectralSummary(rho, n_max, bracket, np.array(Q))


def _bracket(last: float, half: float) -> tuple:
    plateau_gap = half - last
    return (max(0.0, last - plateau_gap), float(last))


def rho_star_bracket(model: DataModel, n_max: int, cap: int = SIZE_CAP) -> tuple:
    """``rho_*`` bracket from ``rho_{n_max}`` and ``rho_{n_max/2}`` only (same rule as ``rho_sequence``)."""
    last = rho_at(model, n_max, cap)
    half = rho_at(model, n_max // 2, cap) if n_max >= 2 else last
    return _bracket(last, half)


def prediction_error_covariance(w, model: DataModel, n: int) -> np.ndarray:
    """Covariance of ``Z_i = Y_i - w.X_i``, i.e. ``D_w^T Q_{X,n} D_w + sigma_eps^2 I_n``.

    Assumes label noise independent of every input, which is exact for the
    Gaussian models and a surrogate for ARX data.
    """
    w_star, _, s = regression_params(model)
    u = np.asarray(w, dtype=float) - w_star
    d = u.size
    J = joint_covariance(model, n).reshape(n, d, n, d)
    return np.einsum("a,iajb,b->ij", u, J, u) + s**2 * np.eye(n)


def inverse_sqrt(M) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_check_symmetric(M))
    if vals[0] <= 0:
        raise ValueError("matrix is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class WhitenReport:
    n: int
    draws: int
    max_cov_error_se: float
    chi2_mean: float
    chi2_mean_z: float
    chi2_var: float
    chi2_var_z: float
    passed: bool


def whitened_residuals(w, model: DataModel, n: int, draws: int, seed) -> np.ndarray:
    """``draws x n`` samples of ``S = Q_{w,n}^{-1/2} Z_{w,1:n}`` from freshly generated data."""
    from .datagen import sample_correlated_batch

    seed = as_seed(seed)
    X, y = sample_correlated_batch(_as_gaussian(model), n, draws, seed)
    Z = y - X @ np.asarray(w, dtype=float)
    return Z @ inverse_sqrt(prediction_error_covariance(w, model, n))


def _as_gaussian(model: DataModel) -> DataModel:
    return CorrelatedGaussian.from_arx(model) if isinstance(model, ARX) else model


def whiten_check(w, model: DataModel, n: int, seed, draws: int = 100_000) -> WhitenReport:
    """Empirical check that the whitened residuals are iid standard normal."""
    S = whitened_residuals(w, model, n, draws, seed)
    C = S.T @ S / draws
    se = np.sqrt((1.0 + np.eye(n)) / draws)
    cov_err = float(np.max(np.abs(C - np.eye(n)) / se))
    q = np.sum(S * S, axis=1)
    mean = float(q.mean())
    var = float(q.var(ddof=1))
    mean_z = (mean - n) / np.sqrt(2 * n / draws)
    var_z = (var - 2 * n) / np.sqrt((8.0 * n * n + 48.0 * n) / draws)
    passed = cov_err < 5 and abs(mean_z) < 5 and abs(var_z) < 5
    return WhitenReport(n, draws, cov_err, mean, float(mean_z), var, float(var_z), bool(passed))
