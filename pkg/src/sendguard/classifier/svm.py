"""Linear SVM trained with SMO, with per-feature standardization stored in the model."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..errors import DegenerateData, SchemaMismatch
from . import kernels

log = logging.getLogger(__name__)

GRAM_LIMIT = 8000
USER, NOT_USER = "user", "not_user"


@dataclass(frozen=True)
class Scaler:
    """z-score for continuous columns; ``passthrough`` columns (booleans) are left as-is.
    Zero-variance continuous columns map to 0."""

    mean: np.ndarray
    scale: np.ndarray
    passthrough: np.ndarray

    @classmethod
    def fit(cls, X, passthrough=None) -> "Scaler":
        n, d = X.shape
        if sparse.issparse(X):
            mean = np.asarray(X.mean(axis=0)).ravel()
        else:
            X = np.asarray(X, dtype=np.float64)
            mean = X.mean(axis=0)
        var = _column_variance(X)
        scale = np.sqrt(var)
        scale[scale < 1e-12] = 0.0
        if passthrough is None:
            passthrough = np.zeros(d, dtype=bool)
        passthrough = np.asarray(passthrough, dtype=bool)
        mean = np.where(passthrough, 0.0, mean)
        scale = np.where(passthrough, 1.0, scale)
        return cls(mean, scale, passthrough)

    @property
    def inv_scale(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.scale > 0, 1.0 / np.where(self.scale > 0, self.scale, 1.0), 0.0)

    def transform(self, X) -> np.ndarray:
        if sparse.issparse(X):
            X = X.toarray()
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) * self.inv_scale


@dataclass
class TrainingSet:
    """Positives (the user's vectors) and size-matched negatives, with a scaler fit on both."""

    positives: np.ndarray | sparse.spmatrix
    negatives: np.ndarray | sparse.spmatrix
    schema_hash: str = ""
    passthrough: np.ndarray | None = None
    scaler: Scaler | None = None

    def __post_init__(self):
        if self.scaler is None:
            self.scaler = Scaler.fit(self.X, self.passthrough)

    @property
    def X(self):
        if sparse.issparse(self.positives) or sparse.issparse(self.negatives):
            return sparse.vstack([sparse.csr_matrix(self.positives), sparse.csr_matrix(self.negatives)]).tocsr()
        return np.vstack([np.asarray(self.positives, float), np.asarray(self.negatives, float)])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([np.ones(self.positives.shape[0]), -np.ones(self.negatives.shape[0])])


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray          # in standardized space
    bias: float
    support_alphas: tuple[tuple[int, float], ...]
    C: float
    tol: float
    max_passes: int
    scaler: Scaler
    schema_hash: str = ""
    iterations: int = 0
    converged: bool = True
    _raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def raw_weights(self) -> np.ndarray:
        """Weights acting on unscaled vectors: margin = raw_weights . v + raw_bias."""
        if "w" not in self._raw:
            self._raw["w"] = self.weights * self.scaler.inv_scale
            self._raw["b"] = float(self.bias - self._raw["w"] @ self.scaler.mean)
        return self._raw["w"]

    @property
    def raw_bias(self) -> float:
        self.raw_weights
        return self._raw["b"]

    def decision(self, X) -> np.ndarray:
        """Margins for a batch of raw vectors (dense or sparse rows)."""
        if sparse.issparse(X):
            return np.asarray(X @ self.raw_weights).ravel() + self.raw_bias
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.scaler.transform(X) @ self.weights + self.bias

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.weights, self.scaler.mean, self.scaler.scale):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(np.float64(self.bias).tobytes())
        h.update(repr(self.support_alphas).encode())
        return h.hexdigest()


def _column_variance(X) -> np.ndarray:
    if sparse.issparse(X):
        mean = np.asarray(X.mean(axis=0)).ravel()
        sq = np.asarray(X.multiply(X).mean(axis=0)).ravel()
        return np.maximum(sq - mean * mean, 0.0)
    return np.asarray(X, dtype=np.float64).var(axis=0)


def dual_objective(alpha, y, Z) -> float:
    """sum(a) - 0.5 |sum_i a_i y_i z_i|^2 for the linear kernel."""
    w = (np.asarray(alpha) * np.asarray(y)) @ np.asarray(Z)
    return float(np.sum(alpha) - 0.5 * w @ w)


def train_smo(ts: TrainingSet, C: float = 1.0, tol: float = 1e-3, max_passes: int = 500,
              seed: int = 0, use_numba: bool | None = None, gram_limit: int = GRAM_LIMIT) -> SvmModel:
    """Fit a linear soft-margin SVM on the standardized training set.

    The seed fixes a permutation of the training rows, which decides ties in the
    working-set selection. ``max_passes`` caps the solver at ``max_passes * n``
    pair updates.
    """
    n_pos, n_neg = ts.positives.shape[0], ts.negatives.shape[0]
    if n_pos < 1 or n_neg < 1:
        raise DegenerateData(f"need both classes, got {n_pos} positives / {n_neg} negatives")
    if C <= 0 or tol <= 0 or max_passes <= 0:
        raise ValueError("C, tol and max_passes must be positive")
    X = ts.X
    y = ts.y
    n, d = X.shape
    active = np.flatnonzero(_column_variance(X) > 1e-24)
    if active.size == 0:
        raise DegenerateData("all training vectors are identical")
    sub = X[:, active]
    sub = sub.toarray() if sparse.issparse(sub) else np.asarray(sub, dtype=np.float64)
    # constant columns drop out: standardized ones are 0, constant passthrough ones get weight y'a = 0
    Z = (sub - ts.scaler.mean[active]) * ts.scaler.inv_scale[active]

    order = np.random.default_rng(seed).permutation(n)
    Zp, yp = np.ascontiguousarray(Z[order]), y[order]
    if n <= gram_limit:
        K = Zp @ Zp.T
    else:
        K = np.zeros((0, 0))
    max_iter = int(max_passes) * n
    alpha_p, G, iters = kernels.solve(K, Zp, yp, C, tol, max_iter, use_numba=use_numba)
    converged = iters < max_iter
    if not converged:
        log.warning("SMO hit the iteration cap (%d) before reaching tol=%g", max_iter, tol)
    b = kernels.bias(alpha_p, G, yp, C)

    alpha = np.empty(n)
    alpha[order] = alpha_p
    w_active = (alpha * y) @ Z
    weights = np.zeros(d)
    weights[active] = w_active
    support = tuple((int(i), float(alpha[i])) for i in np.flatnonzero(alpha > 0))
    return SvmModel(weights, float(b), support, float(C), float(tol), int(max_passes),
                    ts.scaler, ts.schema_hash, int(iters), bool(converged))


def predict(model: SvmModel, v, schema_hash: str | None = None) -> tuple[str, float]:
    """(label, margin); a margin of exactly 0 is ``not_user``."""
    values = getattr(v, "values", v)
    h = getattr(v, "schema_hash", schema_hash)
    if h is not None and model.schema_hash and h != model.schema_hash:
        raise SchemaMismatch("vector and model were built against different schemas")
    margin = float(model.decision(np.asarray(values, dtype=np.float64)[None, :])[0])
    return (USER if margin > 0 else NOT_USER), margin
