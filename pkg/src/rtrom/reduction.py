"""POD bases, mass-image nonlinear-term bases and greedy oversampled DEIM."""
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class SamplingError(ValueError):
    """Sampling indices do not determine the nonlinear-term coefficients."""


@dataclass(frozen=True)
class PodBasis:
    """Leading left singular vectors kept by the energy criterion."""

    vectors: np.ndarray
    singular_values: np.ndarray
    delta_sigma: float

    @property
    def n_rom(self):
        return self.vectors.shape[1]

    def truncation_error(self):
        """Frobenius norm of the discarded part of the snapshot matrix."""
        return float(np.sqrt(np.sum(self.singular_values[self.n_rom:] ** 2)))


def energy_rank(singular_values, delta_sigma):
    """Smallest n with sum(s[:n]) / sum(s) >= 1 - delta_sigma."""
    if not 0.0 <= delta_sigma < 1.0:
        raise ValueError(f"delta_sigma must lie in [0, 1), got {delta_sigma}")
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0:
        return 0
    csum = np.cumsum(s)
    total = csum[-1]
    if total <= 0.0:
        return 0
    return int(np.searchsorted(csum / total, 1.0 - delta_sigma, side="left")) + 1


def fix_signs(U):
    """Flip columns so the largest-magnitude entry of each is positive."""
    if U.size == 0:
        return U
    rows = np.argmax(np.abs(U), axis=0)
    sgn = np.sign(U[rows, np.arange(U.shape[1])])
    sgn[sgn == 0] = 1.0
    return U * sgn


def pod(snapshots, delta_sigma=1e-4):
    """Thin-SVD basis of the columns of ``snapshots`` under the energy criterion."""
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ValueError("snapshot matrix must be 2-D with at least one column")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    n = energy_rank(s, delta_sigma)
    return PodBasis(fix_signs(U[:, :n]), s, float(delta_sigma))


def sns_basis(M, Phi):
    """Nonlinear-term basis ``M @ Phi``; ``M`` may be sparse or a callable."""
    if callable(M):
        return np.column_stack([M(Phi[:, i]) for i in range(Phi.shape[1])]) \
            if Phi.shape[1] else np.zeros_like(Phi)
    return np.asarray(M @ Phi)


def oversampled_size(n_rows, n_cols, factor):
    """Number of sampled rows ``min(n_rows, factor * n_cols)``."""
    if factor < 1:
        raise ValueError("oversampling factor must be at least 1")
    return int(min(n_rows, math.ceil(factor * n_cols)))


def select_sampling_indices(B, m, candidates=None):
    """Greedy oversampled DEIM row selection.

    Step ``s`` works on column ``c = s mod n_cols``: columns ``0..c-1`` are
    fitted by least squares on the rows chosen so far and the unchosen
    candidate row with the largest residual magnitude of column ``c`` is
    appended.  Ties go to the smallest row index.
    """
    B = np.asarray(B, dtype=float)
    n_rows, n_cols = B.shape
    pool = np.zeros(n_rows, dtype=bool)
    if candidates is None:
        pool[:] = True
    else:
        pool[np.asarray(candidates, dtype=np.int64)] = True
    n_pool = int(pool.sum())
    if n_cols == 0:
        return np.zeros(0, dtype=np.int64)
    if m < n_cols:
        raise ValueError(f"need at least {n_cols} samples, got {m}")
    if m > n_pool:
        raise ValueError(f"cannot pick {m} rows from {n_pool} candidates")
    chosen = []
    for step in range(m):
        c = step % n_cols
        r = B[:, c].copy()
        if c > 0:
            idx = np.array(chosen)
            coef = np.linalg.lstsq(B[idx, :c], B[idx, c], rcond=None)[0]
            r -= B[:, :c] @ coef
        score = np.abs(r)
        score[~pool] = -1.0
        row = int(np.argmax(score))
        chosen.append(row)
        pool[row] = False
    return np.array(chosen, dtype=np.int64)


def sampled_pinv(B, indices, name="basis"):
    """Pseudo-inverse of the sampled rows; fails on column-rank deficiency."""
    PB = B[indices]
    if B.shape[1] == 0:
        return np.zeros((0, len(indices)))
    s = np.linalg.svd(PB, compute_uv=False)
    tol = max(PB.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if s.size < B.shape[1] or s[-1] <= tol:
        raise SamplingError(f"{name}: sampled rows do not have full column rank")
    return np.linalg.pinv(PB)


def gappy_reconstruction(B, indices, f, pinv=None):
    """``B (P^T B)^+ P^T f``."""
    if pinv is None:
        pinv = sampled_pinv(B, indices)
    return B @ (pinv @ np.asarray(f)[indices])


class POD(TransformerMixin, BaseEstimator):
    """Proper orthogonal decomposition as a transformer.

    Rows of ``X`` are snapshots.  ``components_`` holds the basis as rows.
    """

    def __init__(self, delta_sigma=1e-4):
        self.delta_sigma = delta_sigma

    def fit(self, X, y=None):
        X = check_array(X)
        basis = pod(X.T, self.delta_sigma)
        self.basis_ = basis
        self.components_ = basis.vectors.T
        self.singular_values_ = basis.singular_values
        self.n_components_ = basis.n_rom
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        return check_array(X) @ self.components_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        return np.asarray(X) @ self.components_


class DEIMSampler(BaseEstimator):
    """Oversampled DEIM for a nonlinear-term basis ``B`` (n_rows x n_cols)."""

    def __init__(self, oversampling=1.0, n_samples=None):
        self.oversampling = oversampling
        self.n_samples = n_samples

    def fit(self, B, y=None, candidates=None):
        B = np.asarray(B, dtype=float)
        n_pool = B.shape[0] if candidates is None else len(candidates)
        m = self.n_samples
        if m is None:
            m = oversampled_size(n_pool, B.shape[1], self.oversampling)
        self.basis_ = B
        self.indices_ = select_sampling_indices(B, m, candidates)
        self.pinv_ = sampled_pinv(B, self.indices_)
        return self

    def coefficients(self, f_sampled):
        check_is_fitted(self, "pinv_")
        return self.pinv_ @ f_sampled

    def reconstruct(self, f):
        """Gappy reconstruction of a full vector from its sampled entries."""
        check_is_fitted(self, "pinv_")
        return self.basis_ @ self.coefficients(np.asarray(f)[self.indices_])

    def error_constant(self):
        """``||(P^T B)^+||_2 ||B||_2``."""
        check_is_fitted(self, "pinv_")
        return float(np.linalg.norm(self.pinv_, 2) * np.linalg.norm(self.basis_, 2))
