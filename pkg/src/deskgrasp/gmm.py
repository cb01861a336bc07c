"""Gaussian-mixture action refinement.

A mixture is fit over demonstrated action vectors with expectation-maximization
(log-domain responsibilities, Cholesky factorizations throughout — covariance
matrices are never explicitly inverted).  At inference the policy's raw action
is snapped to the mean of the component nearest in Mahalanobis distance,
optionally restricted to a subset of action dimensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, NumericError

GMM_JSON_VERSION = 1


def _chol(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance is not positive definite: {exc}") from exc


def mahalanobis(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """sqrt((x-mean)^T cov^-1 (x-mean)) via triangular solves."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if x.shape != mean.shape or cov.shape != (x.size, x.size):
        raise InputError(
            f"shape mismatch: x {x.shape}, mean {mean.shape}, cov {cov.shape}")
    L = _chol(cov)
    z = np.linalg.solve(L, x - mean)
    return float(np.sqrt(z @ z))


def _log_pdf(x: np.ndarray, mean: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Multivariate normal log-density for rows of x given a Cholesky factor."""
    d = mean.size
    z = np.linalg.solve(L, (x - mean).T)          # (d, n)
    quad = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))


@dataclass
class GmmModel:
    weights: np.ndarray          # (K,)
    means: np.ndarray            # (K, d)
    covariances: np.ndarray      # (K, d, d)
    omega: list[int] | None = None   # action-dimension subset, None = all
    degenerate: bool = False
    converged: bool = False
    n_iter: int = 0
    log_likelihood: float = float("-inf")
    ll_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self):
        K, d = self.means.shape
        if self.weights.shape != (K,) or self.covariances.shape != (K, d, d):
            raise ConfigurationError("inconsistent mixture shapes")
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ConfigurationError("weights must lie on the probability simplex")
        if self.omega is not None:
            if len(self.omega) == 0 or any(not 0 <= o < d for o in self.omega):
                raise ConfigurationError(f"omega indices must be in [0, {d})")
        return self

    def _active_dims(self, omega=None) -> np.ndarray:
        o = omega if omega is not None else self.omega
        return np.arange(self.dim) if o is None else np.asarray(sorted(o), dtype=int)

    def component_distances(self, action: np.ndarray, omega=None) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.dim,):
            raise InputError(f"expected action of shape ({self.dim},), got {action.shape}")
        dims = self._active_dims(omega)
        out = np.empty(self.k)
        for i in range(self.k):
            sub = self.covariances[i][np.ix_(dims, dims)]
            out[i] = mahalanobis(action[dims], self.means[i, dims], sub)
        return out

    def nearest_component(self, action: np.ndarray, omega=None) -> tuple[int, float]:
        d = self.component_distances(action, omega)
        k = int(np.argmin(d))            # ties resolve to the lowest index
        return k, float(d[k])

    def refine_action(self, action: np.ndarray, omega=None, blend: float = 1.0) -> np.ndarray:
        """Snap (or blend) the action toward the nearest component mean."""
        if not 0.0 <= blend <= 1.0:
            raise InputError(f"blend must be in [0, 1], got {blend}")
        action = np.asarray(action, dtype=np.float64)
        k, _ = self.nearest_component(action, omega)
        dims = self._active_dims(omega)
        out = action.copy()
        out[dims] = blend * self.means[k, dims] + (1.0 - blend) * action[dims]
        return out

    def to_json(self) -> dict:
        return {
            "version": GMM_JSON_VERSION,
            "k": self.k,
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "omega": None if self.omega is None else list(self.omega),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GmmModel":
        if obj.get("version") != GMM_JSON_VERSION:
            raise InputError(f"unsupported mixture version {obj.get('version')!r}")
        try:
            weights = np.asarray(obj["weights"], dtype=np.float64)
            means = np.asarray(obj["means"], dtype=np.float64)
            covs = np.asarray(obj["covariances"], dtype=np.float64)
            omega = obj["omega"]
        except KeyError as exc:
            raise InputError(f"mixture record missing key {exc}") from exc
        if means.ndim != 2 or means.shape != (obj["k"], obj["dim"]):
            raise InputError("mixture means have inconsistent shape")
        model = cls(weights=weights, means=means, covariances=covs,
                    omega=None if omega is None else [int(o) for o in omega])
        return model.validate()

    def save(self, path: str):
        from .fileio import atomic_write_json
        atomic_write_json(path, self.to_json())

    @classmethod
    def load(cls, path: str) -> "GmmModel":
        with open(path) as f:
            return cls.from_json(json.load(f))


def _kmeanspp_means(samples: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = samples.shape[0]
    centers = [samples[rng.integers(n)]]
    d2 = np.sum((samples - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)      # all points coincide with a center
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(samples[idx])
        d2 = np.minimum(d2, np.sum((samples - centers[-1]) ** 2, axis=1))
    return np.stack(centers)


def fit_gmm(samples: np.ndarray, K: int = 6, tol: float = 1e-8,
            max_iter: int = 500, seed: int = 0, omega=None) -> GmmModel:
    """Expectation-maximization with k-means++ seeding.

    The per-component covariances carry a ridge proportional to the overall
    data scale (computed once from the pooled sample covariance), so the
    likelihood stays finite even when a component collapses onto few points.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise InputError(f"expected samples of shape (n, d), got {samples.shape}")
    n, d = samples.shape
    if K < 1:
        raise ConfigurationError(f"component count must be >= 1, got {K}")
    if n < K:
        raise InputError(f"need at least {K} samples to fit {K} components, got {n}")
    if not np.all(np.isfinite(samples)):
        raise InputError("samples contain non-finite values")

    rng = np.random.default_rng(seed)
    pooled = np.cov(samples.T, bias=True).reshape(d, d)
    ridge = 1e-6 * float(np.trace(pooled)) / d
    if ridge <= 0.0:
        ridge = 1e-12       # zero-variance data still needs a PD covariance
    ridge_eye = ridge * np.eye(d)

    means = _kmeanspp_means(samples, K, rng)
    covs = np.repeat((pooled + ridge_eye)[None], K, axis=0)
    weights = np.full(K, 1.0 / K)

    ll_history: list[float] = []
    converged = False
    scatter_traces = np.full(K, np.trace(pooled))
    it = 0
    for it in range(1, max_iter + 1):
        # E-step in the log domain.
        log_resp = np.empty((n, K))
        for k in range(K):
            L = _chol(covs[k])
            log_resp[:, k] = np.log(weights[k]) + _log_pdf(samples, means[k], L)
        log_norm = np.logaddexp.reduce(log_resp, axis=1)
        ll = float(log_norm.sum())
        resp = np.exp(log_resp - log_norm[:, None])

        # M-step.
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        weights = nk / n
        weights = weights / weights.sum()
        means = (resp.T @ samples) / nk[:, None]
        for k in range(K):
            diff = samples - means[k]
            scatter = (resp[:, k, None] * diff).T @ diff / nk[k]
            scatter_traces[k] = float(np.trace(scatter))
            covs[k] = scatter + ridge_eye

        ll_history.append(ll)
        if len(ll_history) >= 2 and abs(ll_history[-1] - ll_history[-2]) <= tol * max(1.0, abs(ll_history[-2])):
            converged = True
            break

    scale = max(1.0, float(np.trace(pooled)))
    degenerate = bool(np.any(scatter_traces <= 1e-12 * scale))
    model = GmmModel(weights=weights, means=means, covariances=covs,
                     omega=None if omega is None else [int(o) for o in omega],
                     degenerate=degenerate, converged=converged, n_iter=it,
                     log_likelihood=ll_history[-1] if ll_history else float("-inf"),
                     ll_history=ll_history)
    return model.validate()
