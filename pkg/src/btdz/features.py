"""State feature families.

The learned encoders of the deep pipeline reduce, in the tabular case, to
matrix factorisations whose global optimum is a truncated SVD. We compute
those optima directly:

* ``onehot``  -- identity features, the maximal-information baseline.
* ``lra_p``   -- right singular factor of the (empirical) transition matrix.
* ``lra_sr``  -- right singular factor of the behaviour successor measure
  ``(I - gamma P_beta)^-1``; also used as the tabular stand-in for
  forward-backward features.
* ``random``  -- seeded random orthonormal columns, a semantics-free control.

Requests for more columns than the target's numerical rank are padded with
seeded random directions from the orthogonal complement.
"""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateFeaturesError, InvalidArgumentError
from .mdp import FeatureMap, TabularMdp, check_stochastic_policy, stochastic_transition_matrix

WHITEN_RIDGE = 1e-8
FAMILIES = ("onehot", "lra_p", "lra_sr", "random")


def _check_dim(n_states: int, d: int) -> None:
    if d < 1:
        raise InvalidArgumentError(f"feature dimension must be >= 1, got {d}")
    if d > n_states:
        raise InvalidArgumentError(f"feature dimension {d} exceeds the number of states {n_states}")


def fix_signs(columns: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip each column so its first entry with |x| > tol is positive."""
    out = np.array(columns, dtype=float, copy=True)
    for j in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, j]) > tol)
        if nz.size and out[nz[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def low_rank_factors(matrix: np.ndarray, d: int, seed: int = 0, rank_tol: float = 1e-10):
    """Best rank-d factorisation ``matrix ~= left @ right.T``.

    ``right`` holds the top right singular vectors scaled by sqrt(sigma), with
    the sign convention of :func:`fix_signs`; ``left`` carries the matching
    scaled left vectors. Columns beyond the numerical rank are replaced by
    orthonormal complement directions (with zero weight in ``left``).

    Returns ``(left, right, singular_values, rank)`` where ``singular_values``
    is the full spectrum.
    """
    M = np.asarray(matrix, dtype=float)
    n = M.shape[1]
    _check_dim(n, d)
    U, s, Vt = np.linalg.svd(M)
    tol = rank_tol * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    k = min(d, rank)
    V = Vt[:k].T
    U = U[:, :k]
    # flip left and right together so the product is unchanged
    first = np.argmax(np.abs(V) > 1e-12, axis=0)
    flips = np.where(V[first, np.arange(k)] < 0, -1.0, 1.0)
    V = V * flips
    U = U * flips
    root = np.sqrt(s[:k])
    right = V * root
    left = U * root
    if d > k:
        pad = complement_directions(V, d - k, seed)
        right = np.hstack([right, pad])
        left = np.hstack([left, np.zeros((left.shape[0], d - k))])
    return left, right, s, rank


def complement_directions(basis: np.ndarray, count: int, seed: int) -> np.ndarray:
    """``count`` seeded orthonormal vectors orthogonal to the columns of ``basis``."""
    n = basis.shape[0]
    if basis.shape[1] + count > n:
        raise InvalidArgumentError(
            f"cannot add {count} orthogonal directions to a rank-{basis.shape[1]} basis in R^{n}"
        )
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, count))
    if basis.shape[1]:
        Qb, _ = np.linalg.qr(basis)
        G -= Qb @ (Qb.T @ G)
        G -= Qb @ (Qb.T @ G)
    Q, R = np.linalg.qr(G)
    return fix_signs(Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R))))


def onehot_features(mdp: TabularMdp) -> FeatureMap:
    return FeatureMap(np.eye(mdp.n_states), family="onehot")


def lra_p_features(P_hat: np.ndarray, d: int, seed: int = 0) -> FeatureMap:
    P_hat = np.asarray(P_hat, dtype=float)
    if P_hat.ndim != 2 or P_hat.shape[0] != P_hat.shape[1]:
        raise InvalidArgumentError(f"P_hat must be square, got shape {P_hat.shape}")
    _, right, _, _ = low_rank_factors(P_hat, d, seed)
    return FeatureMap(right, family="lra_p")


def successor_measure(mdp: TabularMdp, behavior) -> np.ndarray:
    """M = (I - gamma P_beta)^-1 for a stochastic behaviour policy."""
    P_beta = stochastic_transition_matrix(mdp, behavior)
    return np.linalg.inv(np.eye(mdp.n_states) - mdp.discount * P_beta)


def lra_sr_features(mdp: TabularMdp, behavior, d: int, seed: int = 0,
                    rho: Optional[np.ndarray] = None, whiten: bool = True) -> FeatureMap:
    check_stochastic_policy(mdp, behavior)
    _check_dim(mdp.n_states, d)
    _, right, _, _ = low_rank_factors(successor_measure(mdp, behavior), d, seed)
    fmap = FeatureMap(right, family="lra_sr")
    if whiten:
        if rho is None:
            rho = np.full(mdp.n_states, 1.0 / mdp.n_states)
        fmap = whiten_features(fmap, rho)
    return fmap


def random_orthonormal_features(n_states: int, d: int, seed: int) -> FeatureMap:
    _check_dim(n_states, d)
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n_states, d)))
    Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
    return FeatureMap(Q, family="random")


def feature_gram(features: FeatureMap, rho: np.ndarray) -> np.ndarray:
    """E_rho[phi phi^T]."""
    rho = np.asarray(rho, dtype=float)
    phi = features.phi
    return (phi * rho[:, None]).T @ phi


def whiten_features(features: FeatureMap, rho, ridge: float = WHITEN_RIDGE,
                    rank_tol: float = 1e-10) -> FeatureMap:
    """Right-multiply by (E_rho[phi phi^T] + ridge I)^(-1/2)."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (features.n_states,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError("rho must be a probability vector over the feature states")
    C = feature_gram(features, rho)
    C = 0.5 * (C + C.T)
    evals, evecs = np.linalg.eigh(C)
    top = evals[-1] if evals.size else 0.0
    rank = int(np.sum(evals > rank_tol * max(top, 0.0))) if top > 0 else 0
    if rank < features.dim:
        raise DegenerateFeaturesError(
            f"features have effective rank {rank} < dimension {features.dim} under rho", rank=rank
        )
    W = (evecs / np.sqrt(evals + ridge)) @ evecs.T
    return FeatureMap(features.phi @ W, family=features.family)


def normalize_rows(features: FeatureMap) -> FeatureMap:
    """Scale every nonzero row to unit Euclidean norm."""
    norms = np.linalg.norm(features.phi, axis=1, keepdims=True)
    return FeatureMap(features.phi / np.where(norms > 0, norms, 1.0), family=features.family)


def uniform_behavior(mdp: TabularMdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def build_features(
    family: str,
    mdp: TabularMdp,
    d: int,
    seed: int = 0,
    P_hat: Optional[np.ndarray] = None,
    behavior: Optional[np.ndarray] = None,
    rho: Optional[np.ndarray] = None,
    whiten: bool = True,
) -> FeatureMap:
    """Build one feature family at dimension ``d`` (whitened under ``rho`` by default).

    ``lra_p`` factorises ``P_hat`` when given, else the uniform-behaviour
    transition matrix of ``mdp``; ``lra_sr`` uses ``behavior`` (uniform by
    default).
    """
    n = mdp.n_states
    _check_dim(n, d)
    if rho is None:
        rho = np.full(n, 1.0 / n)
    if family == "onehot":
        if d != n:
            raise InvalidArgumentError(f"onehot features have d = n_states = {n}, got d={d}")
        fmap = onehot_features(mdp)
    elif family == "lra_p":
        if P_hat is None:
            P_hat = stochastic_transition_matrix(mdp, uniform_behavior(mdp))
        fmap = lra_p_features(P_hat, d, seed)
    elif family == "lra_sr":
        beh = uniform_behavior(mdp) if behavior is None else behavior
        fmap = lra_sr_features(mdp, beh, d, seed, whiten=False)
    elif family == "random":
        fmap = random_orthonormal_features(n, d, seed)
    else:
        raise InvalidArgumentError(f"unknown feature family {family!r}; choose from {FAMILIES}")
    return whiten_features(fmap, rho) if whiten else fmap
