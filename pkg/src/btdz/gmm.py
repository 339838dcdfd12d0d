"""Full-covariance Gaussian mixtures fitted by EM."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import InvalidArgumentError, NumericalError

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-6
DROP_WEIGHT = 1e-8


@dataclass(frozen=True, eq=False)
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihoods: Tuple[float, ...] = field(default=(), repr=False)
    converged: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        if w.ndim != 1 or mu.shape[0] != w.size or cov.shape != (w.size, mu.shape[1], mu.shape[1]):
            raise InvalidArgumentError("inconsistent GMM parameter shapes")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("GMM weights must form a probability vector")
        if not np.allclose(cov, np.transpose(cov, (0, 2, 1)), atol=1e-12):
            raise InvalidArgumentError("GMM covariances must be symmetric")
        for arr, name in ((w, "weights"), (mu, "means"), (cov, "covariances")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "log_likelihoods", tuple(float(x) for x in self.log_likelihoods))

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_pdf(self, X: np.ndarray) -> np.ndarray:
        """(N, K) matrix of log N(x | mean_k, cov_k)."""
        return _component_log_pdf(np.atleast_2d(X), self.means, self.covariances)

    def score_samples(self, X: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_pdf(X) + np.log(self.weights), axis=1)

    def mean_log_likelihood(self, X: np.ndarray) -> float:
        return float(np.mean(self.score_samples(X)))

    def sample(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Ambient draws and their component labels."""
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        chol = np.linalg.cholesky(self.covariances)
        out = self.means[labels] + np.einsum("nij,nj->ni", chol[labels], z)
        return out, labels

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "log_likelihoods": list(self.log_likelihoods),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Gmm":
        try:
            return cls(np.asarray(doc["weights"]), np.asarray(doc["means"]),
                       np.asarray(doc["covariances"]), tuple(doc.get("log_likelihoods", ())),
                       bool(doc.get("converged", False)))
        except KeyError as exc:
            raise InvalidArgumentError(f"GMM document is missing {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Gmm":
        return cls.from_dict(json.loads(text))


def _component_log_pdf(X, means, covs):
    N, d = X.shape
    out = np.empty((N, means.shape[0]))
    for k in range(means.shape[0]):
        try:
            L = np.linalg.cholesky(covs[k])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"covariance {k} is not positive definite") from exc
        # whiten with an explicit L^-1: one GEMM beats a many-RHS triangular solve
        L_inv = solve_triangular(L, np.eye(d), lower=True, check_finite=False)
        y = X @ L_inv.T - L_inv @ means[k]
        maha = np.einsum("ij,ij->i", y, y)
        out[:, k] = -0.5 * (d * np.log(2 * np.pi) + maha) - np.sum(np.log(np.diag(L)))
    return out


def floor_eigenvalues(cov: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Clamp the spectrum of a symmetric matrix from below.

    For a Gaussian with the eigenvalue constraint lambda >= floor this is the
    constrained maximiser of the likelihood given the scatter matrix, so the
    M-step stays an exact maximisation.
    """
    sym = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(sym)
    out = (evecs * np.maximum(evals, floor)) @ evecs.T
    return 0.5 * (out + out.T)


def kmeans_plus_plus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of K seeds chosen by D^2 sampling."""
    N = X.shape[0]
    chosen = [int(rng.integers(N))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # every remaining point coincides with a seed
            idx = int(rng.integers(N))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, N - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.asarray(chosen)


def _m_step(X, resp, floor):
    Nk = resp.sum(axis=0)
    weights = Nk / Nk.sum()
    means = (resp.T @ X) / np.maximum(Nk, 1e-300)[:, None]
    d = X.shape[1]
    covs = np.empty((resp.shape[1], d, d))
    for k in range(resp.shape[1]):
        diff = X - means[k]
        scatter = (diff * resp[:, k:k + 1]).T @ diff / max(Nk[k], 1e-300)
        covs[k] = floor_eigenvalues(scatter, floor)
    return weights, means, covs


def fit_gmm(
    points,
    K: int = 20,
    max_iters: int = 200,
    tol: float = 1e-6,
    seed: int = 0,
    floor: float = EIG_FLOOR,
) -> Gmm:
    """Maximum-likelihood mixture fit by EM with k-means++ seeding.

    ``points`` is an (N, d) array or anything with a ``vectors`` attribute.
    Iteration stops when the mean log-likelihood improves by less than
    ``tol`` or after ``max_iters`` E-steps. Components whose weight drops
    under 1e-8 are removed.
    """
    X = np.asarray(getattr(points, "vectors", points), dtype=float)
    if X.ndim != 2:
        raise InvalidArgumentError(f"points must be an (N, d) array, got shape {X.shape}")
    N = X.shape[0]
    if K < 1 or K > N:
        raise InvalidArgumentError(f"need 1 <= K <= number of points ({N}), got K={K}")
    rng = np.random.default_rng(seed)

    seeds = X[kmeans_plus_plus(X, K, rng)]
    d2 = np.sum(X ** 2, axis=1)[:, None] - 2 * X @ seeds.T + np.sum(seeds ** 2, axis=1)[None, :]
    resp = np.zeros((N, K))
    resp[np.arange(N), np.argmin(d2, axis=1)] = 1.0
    weights, means, covs = _m_step(X, resp, floor)
    empty = resp.sum(axis=0) == 0
    if empty.any():
        global_cov = floor_eigenvalues(np.cov(X.T, bias=True).reshape(X.shape[1], X.shape[1]), floor)
        means[empty] = seeds[empty]
        covs[empty] = global_cov
        weights = np.full(K, 1.0 / K)

    history: List[float] = []
    converged = False
    for _ in range(max_iters):
        logp = _component_log_pdf(X, means, covs) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(np.mean(norm))
        if history and ll - history[-1] < tol:
            history.append(ll)
            converged = True
            break
        history.append(ll)
        resp = np.exp(logp - norm[:, None])
        weights, means, covs = _m_step(X, resp, floor)
        keep = weights >= DROP_WEIGHT
        if not keep.all():
            log.warning("dropping %d collapsed GMM component(s)", int((~keep).sum()))
            weights, means, covs = weights[keep], means[keep], covs[keep]
            weights = weights / weights.sum()

    return Gmm(weights, means, covs, tuple(history), converged)
