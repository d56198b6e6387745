"""Dataset generators for the three data models, ARX simulation, and CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import DatasetParseError
from .model import ARX, CorrelatedGaussian, Dataset, DataModel, IIDIsotropic, regression_params
from .rng import SeedSpec, as_seed

TRANSIENT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TimeSeriesPair:
    y: np.ndarray
    u: np.ndarray
    burn_in_used: int
    e: np.ndarray | None = None  # innovations e_t, kept for bookkeeping checks

    def __post_init__(self):
        if self.y.shape != self.u.shape or self.y.ndim != 1:
            raise ValueError("y and u must be vectors of equal length")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.u))):
            raise ValueError("time series contains non-finite values")

    @property
    def T(self) -> int:
        return self.y.size


def sample_iid(model: IIDIsotropic, n: int, seed) -> Dataset:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    rng = as_seed(seed).generator()
    x = model.sigma_x * rng.standard_normal((n, model.d))
    y = x @ model.w_star + model.sigma_eps * rng.standard_normal(n)
    return Dataset(x, y)


def _joint_factor(model: DataModel, n: int) -> np.ndarray:
    from .spectral import joint_covariance

    J = joint_covariance(model, n)
    try:
        return np.linalg.cholesky(J)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"joint covariance for n={n} is not positive definite") from exc


def sample_correlated_batch(model: DataModel, n: int, draws: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """``draws`` independent datasets at once: arrays of shape ``(draws, n, d)`` and ``(draws, n)``."""
    w_star, _, s = regression_params(model)
    d = w_star.size
    L = _joint_factor(model, n)
    rng = as_seed(seed).generator()
    X = (rng.standard_normal((draws, n * d)) @ L.T).reshape(draws, n, d)
    y = X @ w_star + s * rng.standard_normal((draws, n))
    return X, y


def sample_correlated(model: CorrelatedGaussian, n: int, seed) -> Dataset:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    X, y = sample_correlated_batch(model, n, 1, seed)
    return Dataset(X[0], y[0])


def burn_in_length(model: ARX, tol: float = TRANSIENT_TOL, max_steps: int = 10**7) -> int:
    """Steps after which the zero-initial-state transient is below ``tol`` (spectral norm of ``A^t``).

    The nilpotent input-shift block of the state matrix is invisible to the
    spectral radius, so the norm of the matrix power is tracked directly.
    """
    from .spectral import arx_state_space

    model.check_stable()
    A = arx_state_space(model).A
    r = model.ar_spectral_radius()
    guess = 0 if r == 0 else int(math.ceil(math.log(tol) / math.log(r)))
    t = max(guess, 1)
    while np.linalg.norm(np.linalg.matrix_power(A, t), 2) >= tol:
        t = int(t * 1.25) + 1
        if t > max_steps:
            raise ValueError("burn-in exceeds the step budget")
    return t


def simulate_arx(model: ARX, T: int, seed) -> TimeSeriesPair:
    """Stationary-approximating ARX trajectory of length ``T`` (zero initial state, burn-in discarded)."""
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    burn = burn_in_length(model)
    total = T + burn
    rng = as_seed(seed).generator()
    u = model.sigma_u * rng.standard_normal(total)
    e = model.sigma_e * rng.standard_normal(total)
    # y_t - sum a_i y_{t-i} = sum b_i u_{t-i} + e_t
    den = np.concatenate(([1.0], -np.asarray(model.a)))
    drive = lfilter(np.concatenate(([0.0], model.b)), [1.0], u) + e
    y = lfilter([1.0], den, drive)
    return TimeSeriesPair(y[burn:], u[burn:], burn, e[burn:])


def recast_arx(ts: TimeSeriesPair, k: int) -> Dataset:
    """Regression rows ``Y_i = y_{i+k}``, ``X_i = [y_{i+k-1}..y_i, u_{i+k-1}..u_i]``."""
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    T = ts.T
    if T <= 2 * k:
        raise ValueError(f"need T > 2k, got T={T}, k={k}")
    n = T - k
    cols = [ts.y[k - 1 - j : k - 1 - j + n] for j in range(k)]
    cols += [ts.u[k - 1 - j : k - 1 - j + n] for j in range(k)]
    return Dataset(np.column_stack(cols), ts.y[k:])


def arx_dataset(model: ARX, n: int, seed) -> Dataset:
    """``n`` regression rows from one stationary ARX trajectory."""
    return recast_arx(simulate_arx(model, n + model.k, seed), model.k)


def sample_dataset(model: DataModel, n: int, seed) -> Dataset:
    if isinstance(model, IIDIsotropic):
        return sample_iid(model, n, seed)
    if isinstance(model, CorrelatedGaussian):
        return sample_correlated(model, n, seed)
    if isinstance(model, ARX):
        return arx_dataset(model, n, seed)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def write_dataset_csv(S: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(S.d)] + ["y"])
        for xi, yi in zip(S.x, S.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def load_dataset_csv(path) -> Dataset:
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetParseError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    expected = [f"x{j + 1}" for j in range(d)] + ["y"]
    if d < 1 or header != expected:
        raise DatasetParseError(f"header must be {','.join(expected) if d >= 1 else 'x1,...,xd,y'}, got {','.join(header)}", 1)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != d + 1:
            raise DatasetParseError(f"expected {d + 1} columns, got {len(row)}", lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise DatasetParseError(f"malformed number: {exc}", lineno) from None
        if not all(map(math.isfinite, vals)):
            raise DatasetParseError("non-finite value", lineno)
        data.append(vals)
    if not data:
        raise DatasetParseError("no data rows", len(rows))
    arr = np.array(data)
    return Dataset(arr[:, :d], arr[:, d])
