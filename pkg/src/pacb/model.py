"""Data-generating models, datasets, and squared-loss quantities.

Three generating processes are supported:

* ``IIDIsotropic``: inputs iid ``N(0, sigma_x^2 I)``, labels ``w*.x + eps``.
* ``CorrelatedGaussian``: each input ``N(0, Q_x)`` with an arbitrary joint
  covariance across samples; label noise iid and independent of the inputs.
* ``ARX``: scalar-input scalar-output ``y_t = sum a_i y_{t-i} + sum b_i u_{t-i} + e_t``
  recast as regression on the ``2k`` most recent outputs and inputs.

For every model the generalization loss of ``f_w(x) = w.x`` is the quadratic
``(w - w*)^T Q_x (w - w*) + sigma_eps^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

# Companion spectral radius must stay below this for an ARX model to count as stable.
STABILITY_MARGIN = 1e-9


def _vector(x, name) -> np.ndarray:
    v = np.array(x, dtype=float, ndmin=1)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    v.setflags(write=False)
    return v


def _positive(x, name) -> float:
    x = float(x)
    if not (math.isfinite(x) and x > 0):
        raise ValueError(f"{name} must be a positive finite number, got {x}")
    return x


def check_spd(M, name="matrix", sym_tol=1e-12) -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > sym_tol * scale:
        raise ValueError(f"{name} is not symmetric")
    M = 0.5 * (M + M.T)
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise ValueError(f"{name} is not positive definite")
    return M


@dataclass(frozen=True, eq=False)
class IIDIsotropic:
    w_star: np.ndarray
    sigma_x: float
    sigma_eps: float

    def __post_init__(self):
        object.__setattr__(self, "w_star", _vector(self.w_star, "w_star"))
        object.__setattr__(self, "sigma_x", _positive(self.sigma_x, "sigma_x"))
        object.__setattr__(self, "sigma_eps", _positive(self.sigma_eps, "sigma_eps"))

    @property
    def d(self) -> int:
        return self.w_star.size


@dataclass(frozen=True, eq=False)
class CorrelatedGaussian:
    """Gaussian inputs with marginal covariance ``Q_x`` and a joint covariance source.

    ``joint_cov`` is either ``None`` (independent samples), an explicit
    ``(N d) x (N d)`` matrix whose leading principal blocks are used for any
    ``n <= N``, or a callable ``n -> (n d) x (n d)`` matrix.
    """

    w_star: np.ndarray
    Q_x: np.ndarray
    sigma_eps: float
    joint_cov: Union[None, np.ndarray, Callable[[int], np.ndarray]] = field(default=None)

    def __post_init__(self):
        w = _vector(self.w_star, "w_star")
        Q = check_spd(self.Q_x, "Q_x")
        if Q.shape != (w.size, w.size):
            raise ValueError(f"Q_x shape {Q.shape} does not match d={w.size}")
        Q.setflags(write=False)
        object.__setattr__(self, "w_star", w)
        object.__setattr__(self, "Q_x", Q)
        object.__setattr__(self, "sigma_eps", _positive(self.sigma_eps, "sigma_eps"))
        if isinstance(self.joint_cov, (np.ndarray, list)):
            J = np.array(self.joint_cov, dtype=float)
            d = w.size
            if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] % d:
                raise ValueError(f"joint_cov shape {J.shape} is not a multiple of d={d}")
            if not np.allclose(J[:d, :d], Q, rtol=1e-10, atol=1e-12):
                raise ValueError("leading block of joint_cov must equal Q_x")
            J.setflags(write=False)
            object.__setattr__(self, "joint_cov", J)

    @property
    def d(self) -> int:
        return self.w_star.size

    @classmethod
    def from_arx(cls, arx: "ARX") -> "CorrelatedGaussian":
        """Gaussian surrogate of an ARX regression problem with the same input covariances."""
        from . import spectral

        Q, _ = spectral.arx_state_covariance(arx)
        return cls(arx.w_star, Q, arx.sigma_e, joint_cov=lambda n: spectral.joint_covariance(arx, n))


@dataclass(frozen=True)
class ARX:
    a: tuple
    b: tuple
    sigma_e: float
    sigma_u: float

    def __post_init__(self):
        a = tuple(float(v) for v in np.atleast_1d(np.asarray(self.a, dtype=float)))
        b = tuple(float(v) for v in np.atleast_1d(np.asarray(self.b, dtype=float)))
        if len(a) != len(b) or not a:
            raise ValueError(f"a and b must have equal positive length, got {len(a)} and {len(b)}")
        if not all(map(math.isfinite, a + b)):
            raise ValueError("ARX coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma_e", _positive(self.sigma_e, "sigma_e"))
        object.__setattr__(self, "sigma_u", _positive(self.sigma_u, "sigma_u"))

    @property
    def k(self) -> int:
        return len(self.a)

    @property
    def d(self) -> int:
        return 2 * self.k

    @property
    def w_star(self) -> np.ndarray:
        return np.array(self.a + self.b)

    @property
    def sigma_eps(self) -> float:
        return self.sigma_e

    def ar_spectral_radius(self) -> float:
        """Largest root modulus of ``z^k - a_1 z^{k-1} - ... - a_k``."""
        k = self.k
        C = np.zeros((k, k))
        C[0, :] = self.a
        C[1:, :-1] = np.eye(k - 1)
        return float(np.max(np.abs(np.linalg.eigvals(C))))

    def is_stable(self) -> bool:
        return self.ar_spectral_radius() < 1.0 - STABILITY_MARGIN

    def check_stable(self):
        from .errors import InstabilityError

        r = self.ar_spectral_radius()
        if not r < 1.0 - STABILITY_MARGIN:
            raise InstabilityError(f"ARX model is not stable: companion spectral radius {r:.12g} >= 1 - {STABILITY_MARGIN}")


DataModel = Union[IIDIsotropic, CorrelatedGaussian, ARX]


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ValueError(f"x has {x.shape[0] if x.ndim else 0} rows but y has {y.size} entries")
        if y.size < 1:
            raise ValueError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def head(self, n: int) -> "Dataset":
        return Dataset(self.x[:n], self.y[:n])


def regression_params(model: DataModel) -> tuple[np.ndarray, np.ndarray, float]:
    """``(w_star, Q_x, sigma_eps)`` of the regression problem a model induces."""
    if isinstance(model, IIDIsotropic):
        return model.w_star, model.sigma_x**2 * np.eye(model.d), model.sigma_eps
    if isinstance(model, CorrelatedGaussian):
        return model.w_star, model.Q_x, model.sigma_eps
    if isinstance(model, ARX):
        from . import spectral

        Q, _ = spectral.arx_state_covariance(model)
        return model.w_star, Q, model.sigma_e
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _weights(w, d=None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError("weight vector must be one-dimensional")
    if not np.all(np.isfinite(w)):
        raise ValueError("weight vector has non-finite entries")
    if d is not None and w.size != d:
        raise ValueError(f"weight dimension {w.size} does not match d={d}")
    return w


def squared_loss(y_hat: float, y: float) -> float:
    if not (math.isfinite(y_hat) and math.isfinite(y)):
        raise ValueError("squared_loss requires finite inputs")
    return (y - y_hat) ** 2


def empirical_loss(w, S: Dataset) -> float:
    """Mean squared residual of ``f_w`` on ``S``; numpy's pairwise summation keeps it reproducible."""
    w = _weights(w, S.d)
    r = S.y - S.x @ w
    return float(np.sum(r * r) / S.n)


def generalization_loss(w, model: DataModel) -> float:
    w_star, Q, s = regression_params(model)
    u = _weights(w, w_star.size) - w_star
    if isinstance(model, IIDIsotropic):
        return float(model.sigma_x**2 * (u @ u) + s**2)
    if np.array_equal(Q, Q[0, 0] * np.eye(Q.shape[0])):
        # scalar Q_x: same arithmetic as the isotropic case, so the two agree bit-for-bit
        return float(Q[0, 0] * (u @ u) + s**2)
    return float(u @ Q @ u + s**2)


def v_and_rho_terms(w, model: DataModel, rho_n: float) -> tuple[float, float]:
    """``(v_w, rho_{n,w})``: generalization loss and its eigenvalue-floor surrogate."""
    if not rho_n >= 0:
        raise ValueError(f"rho_n must be non-negative, got {rho_n}")
    w_star, _, s = regression_params(model)
    u = _weights(w, w_star.size) - w_star
    return generalization_loss(w, model), float(rho_n * (u @ u) + s**2)
