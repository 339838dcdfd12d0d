"""Exact tabular MDP machinery.

Everything here is a direct linear solve on dense matrices; the state
counts we care about are small (tens to a few hundred states).

Conventions
-----------
* ``transitions[a, s, s']`` is P(s' | s, a).
* Rewards are functions of the state only and are received at the current
  state, so ``Q(s, a) = r(s) + gamma * sum_s' P(s'|s,a) V(s')``.
* Argmax ties resolve to the lowest action index.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidArgumentError, NumericalError

DEFAULT_DISCOUNT = 0.99
_PROB_TOL = 1e-12


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transitions: np.ndarray
    initial_dist: np.ndarray
    discount: float = DEFAULT_DISCOUNT
    name: str = ""

    def __post_init__(self):
        P = _frozen(self.transitions)
        mu = _frozen(self.initial_dist)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise InvalidArgumentError(f"transitions must have shape (A, S, S), got {P.shape}")
        if mu.shape != (P.shape[1],):
            raise InvalidArgumentError(f"initial_dist must have length {P.shape[1]}, got {mu.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > _PROB_TOL):
            raise InvalidArgumentError("every transitions[a][s] row must be a probability vector")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > _PROB_TOL:
            raise InvalidArgumentError("initial_dist must be a probability vector")
        if not 0.0 <= float(self.discount) < 1.0:
            raise InvalidArgumentError(f"discount must lie in [0, 1), got {self.discount}")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    def with_discount(self, discount: float) -> "TabularMdp":
        return TabularMdp(self.transitions, self.initial_dist, discount, self.name)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray([self.n_actions, self.n_states], dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.transitions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.initial_dist, dtype="<f8").tobytes())
        h.update(np.float64(self.discount).astype("<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transitions": self.transitions.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, doc: dict, name: str = "") -> "TabularMdp":
        try:
            P = np.asarray(doc["transitions"], dtype=float)
            mu = np.asarray(doc["initial_dist"], dtype=float)
            gamma = float(doc["discount"])
            n_s, n_a = int(doc["n_states"]), int(doc["n_actions"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"malformed MDP document: {exc}") from exc
        if P.shape != (n_a, n_s, n_s):
            raise InvalidArgumentError(
                f"transitions shape {P.shape} disagrees with n_actions={n_a}, n_states={n_s}"
            )
        return cls(P, mu, gamma, name=name or doc.get("name", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """State embeddings ``phi`` with one row per state."""

    phi: np.ndarray
    family: str = "custom"

    def __post_init__(self):
        phi = _frozen(self.phi)
        if phi.ndim != 2:
            raise InvalidArgumentError(f"phi must be a matrix, got shape {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise InvalidArgumentError("phi contains non-finite entries")
        object.__setattr__(self, "phi", phi)

    @property
    def n_states(self) -> int:
        return self.phi.shape[0]

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def max_row_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.phi, axis=1))) if self.n_states else 0.0

    def occupancy_bound(self, discount: float) -> float:
        """C_Psi = max_s ||phi(s)|| / (1 - gamma)."""
        return self.max_row_norm() / (1.0 - discount)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.phi.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.phi, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {"family": self.family, "n_states": self.n_states, "dim": self.dim, "phi": self.phi.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureMap":
        try:
            phi = np.asarray(doc["phi"], dtype=float).reshape(int(doc["n_states"]), int(doc["dim"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"malformed feature document: {exc}") from exc
        return cls(phi, doc.get("family", "custom"))

    def to_json(self) -> str:
        # repr-exact floats, so a round trip keeps the fingerprint
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FeatureMap":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class SuccessorFeatureTable:
    """psi_sa[s, a] = E[sum_t gamma^t phi(s_t) | s_0=s, a_0=a, policy]."""

    psi_sa: np.ndarray
    policy: np.ndarray = field(repr=False)

    def q_values(self, z: np.ndarray) -> np.ndarray:
        return self.psi_sa @ np.asarray(z, dtype=float)


def check_policy(mdp: TabularMdp, policy) -> np.ndarray:
    pol = np.asarray(policy)
    if pol.shape != (mdp.n_states,):
        raise InvalidArgumentError(f"policy must have length {mdp.n_states}, got shape {pol.shape}")
    if not np.issubdtype(pol.dtype, np.integer):
        if not np.all(pol == np.round(pol)):
            raise InvalidArgumentError("deterministic policy entries must be integers")
        pol = pol.astype(np.int64)
    if np.any(pol < 0) or np.any(pol >= mdp.n_actions):
        raise InvalidArgumentError("policy action out of range")
    return pol.astype(np.int64, copy=False)


def check_stochastic_policy(mdp: TabularMdp, probs) -> np.ndarray:
    pi = np.asarray(probs, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidArgumentError(
            f"stochastic policy must have shape {(mdp.n_states, mdp.n_actions)}, got {pi.shape}"
        )
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > _PROB_TOL):
        raise InvalidArgumentError("stochastic policy rows must be probability vectors")
    return pi


def _check_reward(mdp: TabularMdp, reward) -> np.ndarray:
    r = np.asarray(reward, dtype=float)
    if r.shape != (mdp.n_states,):
        raise InvalidArgumentError(f"reward must have length {mdp.n_states}, got shape {r.shape}")
    return r


def _check_features(mdp: TabularMdp, features: FeatureMap) -> np.ndarray:
    if features.n_states != mdp.n_states:
        raise InvalidArgumentError(
            f"features cover {features.n_states} states but the MDP has {mdp.n_states}"
        )
    return features.phi


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError("linear solve produced non-finite values")
    return x


def policy_transition_matrix(mdp: TabularMdp, policy) -> np.ndarray:
    pol = check_policy(mdp, policy)
    return mdp.transitions[pol, np.arange(mdp.n_states), :]


def stochastic_transition_matrix(mdp: TabularMdp, probs) -> np.ndarray:
    """P_beta[s, s'] = sum_a beta(a|s) P(s'|s,a)."""
    pi = check_stochastic_policy(mdp, probs)
    return np.einsum("sa,ast->st", pi, mdp.transitions)


def discounted_occupancy(mdp: TabularMdp, policy) -> np.ndarray:
    """Solve d = mu + gamma P_pi^T d; entries sum to 1 / (1 - gamma)."""
    P_pi = policy_transition_matrix(mdp, policy)
    A = np.eye(mdp.n_states) - mdp.discount * P_pi.T
    occ = _solve(A, mdp.initial_dist)
    # Exact solution is nonnegative; clip round-off only.
    return np.where(occ < 0, np.maximum(occ, 0.0), occ)


def feature_occupancy(mdp: TabularMdp, policy, features: FeatureMap) -> np.ndarray:
    phi = _check_features(mdp, features)
    return phi.T @ discounted_occupancy(mdp, policy)


def expected_return(psi, z) -> float:
    psi = np.asarray(psi, dtype=float)
    z = np.asarray(z, dtype=float)
    if psi.shape != z.shape or psi.ndim != 1:
        raise InvalidArgumentError(f"dimension mismatch: psi {psi.shape} vs z {z.shape}")
    return float(psi @ z)


def evaluate_policy_return(mdp: TabularMdp, policy, reward) -> float:
    r = _check_reward(mdp, reward)
    return float(r @ discounted_occupancy(mdp, policy))


def policy_values(mdp: TabularMdp, policy, reward) -> np.ndarray:
    """State values V^pi for a state reward, by direct solve."""
    r = _check_reward(mdp, reward)
    P_pi = policy_transition_matrix(mdp, policy)
    return _solve(np.eye(mdp.n_states) - mdp.discount * P_pi, r)


def q_from_values(mdp: TabularMdp, reward, values) -> np.ndarray:
    r = _check_reward(mdp, reward)
    # (A, S) -> (S, A)
    return (r[None, :] + mdp.discount * (mdp.transitions @ values)).T


def greedy_policy(q: np.ndarray, tie_tol: float = 0.0) -> np.ndarray:
    """Lowest-index action among those within ``tie_tol`` of the row max."""
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tol, axis=1).astype(np.int64)


def bellman_optimality_residual(mdp: TabularMdp, reward, values) -> float:
    q = q_from_values(mdp, reward, values)
    return float(np.max(np.abs(values - q.max(axis=1)))) if mdp.n_states else 0.0


def value_iteration(
    mdp: TabularMdp,
    reward,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    polish: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal deterministic policy and its values.

    Runs value iteration until the Bellman optimality residual drops under
    ``tol``; with ``polish`` (default) the greedy policy is then refined by
    exact policy iteration so the returned policy is optimal rather than
    tol-optimal, and the returned values are its exact values.
    """
    r = _check_reward(mdp, reward)
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    gamma = mdp.discount
    scale = max(1.0, float(np.max(np.abs(r)))) / max(1.0 - gamma, 1e-12)
    tie_tol = 1e-12 * scale

    # exact policy iteration finishes the job, so a coarse warm start suffices
    vi_tol = max(tol, 1e-6 * scale) if polish else tol
    V = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        V_new = q_from_values(mdp, r, V).max(axis=1)
        delta = float(np.max(np.abs(V_new - V))) if mdp.n_states else 0.0
        V = V_new
        # residual of V_new is at most gamma * delta
        if gamma * delta <= vi_tol:
            break
    else:
        raise NumericalError(f"value iteration did not converge in {max_iters} iterations")

    policy = greedy_policy(q_from_values(mdp, r, V), tie_tol)
    if not polish:
        return policy, V

    states = np.arange(mdp.n_states)
    for _ in range(1000):
        V_pi = policy_values(mdp, policy, r)
        q = q_from_values(mdp, r, V_pi)
        # switch only on strict improvement so near-ties cannot cycle
        improve = q.max(axis=1) > q[states, policy] + tie_tol
        if not improve.any():
            # V_pi is optimal; re-apply the lowest-index tie rule
            canonical = greedy_policy(q, tie_tol)
            if np.array_equal(canonical, policy):
                return policy, V_pi
            return canonical, policy_values(mdp, canonical, r)
        policy = np.where(improve, greedy_policy(q, tie_tol), policy)
    raise NumericalError("policy iteration failed to stabilise")


def successor_features_for_policy(mdp: TabularMdp, policy, features: FeatureMap) -> SuccessorFeatureTable:
    """Exact successor features psi(s, a) for a fixed deterministic policy.

    State-level features Psi_pi = (I - gamma P_pi)^-1 Phi are obtained from
    d simultaneous linear systems; the action-conditioned table follows
    from one Bellman backup.
    """
    pol = check_policy(mdp, policy)
    phi = _check_features(mdp, features)
    P_pi = mdp.transitions[pol, np.arange(mdp.n_states), :]
    psi_state = _solve(np.eye(mdp.n_states) - mdp.discount * P_pi, phi)
    # (A, S, d) -> (S, A, d)
    psi_sa = phi[:, None, :] + mdp.discount * np.transpose(mdp.transitions @ psi_state, (1, 0, 2))
    psi_sa.setflags(write=False)
    return SuccessorFeatureTable(psi_sa=psi_sa, policy=_frozen(pol, np.int64))


def sf_bellman_residual(mdp: TabularMdp, table: SuccessorFeatureTable, features: FeatureMap) -> float:
    """Max |psi(s,a) - phi(s) - gamma sum_s' P(s'|s,a) psi(s', pi(s'))|."""
    phi = _check_features(mdp, features)
    on_policy = table.psi_sa[np.arange(mdp.n_states), table.policy, :]
    backup = phi[:, None, :] + mdp.discount * np.transpose(mdp.transitions @ on_policy, (1, 0, 2))
    return float(np.max(np.abs(table.psi_sa - backup))) if table.psi_sa.size else 0.0


def random_deterministic_policies(mdp: TabularMdp, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` policies with an independent uniform action per state."""
    return rng.integers(0, mdp.n_actions, size=(n, mdp.n_states), dtype=np.int64)


def all_deterministic_policies(mdp: TabularMdp, limit: Optional[int] = 1 << 16) -> np.ndarray:
    total = mdp.n_actions ** mdp.n_states
    if limit is not None and total > limit:
        raise InvalidArgumentError(f"{total} deterministic policies exceed the enumeration limit {limit}")
    grids = np.indices((mdp.n_actions,) * mdp.n_states).reshape(mdp.n_states, -1).T
    return grids.astype(np.int64)
