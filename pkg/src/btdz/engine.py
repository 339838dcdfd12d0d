"""Policy libraries, zero-shot task inference and exact evaluation.

The z-conditioned successor-feature network is replaced by a finite
library: every training task z gets its exactly optimal policy for the
reward ``Phi z`` together with that policy's successor features. At test
time the reward is regressed onto the features and the library is queried
by generalized policy improvement (GPI).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidArgumentError, InvariantError, NumericalError
from .mdp import (
    FeatureMap,
    SuccessorFeatureTable,
    TabularMdp,
    evaluate_policy_return,
    q_from_values,
    sf_bellman_residual,
    successor_features_for_policy,
    value_iteration,
)

DEFAULT_RIDGE = 1e-6
SF_RESIDUAL_TOL = 1e-9
_LIB_MAGIC = b"BTDZLIB1"


@dataclass(frozen=True, eq=False)
class LibraryEntry:
    z: np.ndarray
    policy: np.ndarray
    sf: SuccessorFeatureTable


@dataclass(frozen=True, eq=False)
class PolicyLibrary:
    entries: Tuple[LibraryEntry, ...]
    features_fingerprint: str
    mdp_fingerprint: str

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self.entries[0].z.size

    def stacked_sf(self) -> np.ndarray:
        """(n_entries, S, A, d) tensor of successor features."""
        return np.stack([e.sf.psi_sa for e in self.entries])

    def to_bytes(self) -> bytes:
        """Binary layout (little endian).

        magic ``BTDZLIB1``; uint64 n_entries, n_states, n_actions, d;
        64-byte ASCII MDP fingerprint; 64-byte ASCII feature fingerprint;
        then per entry: d float64 (z), n_states int64 (policy),
        n_states * n_actions * d float64 (successor features, row-major).
        """
        if not self.entries:
            raise InvalidArgumentError("cannot serialise an empty library")
        n_s, n_a, d = self.entries[0].sf.psi_sa.shape
        parts = [_LIB_MAGIC, struct.pack("<QQQQ", len(self.entries), n_s, n_a, d),
                 self.mdp_fingerprint.encode("ascii").ljust(64, b"\0"),
                 self.features_fingerprint.encode("ascii").ljust(64, b"\0")]
        for e in self.entries:
            parts.append(np.ascontiguousarray(e.z, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(e.policy, dtype="<i8").tobytes())
            parts.append(np.ascontiguousarray(e.sf.psi_sa, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PolicyLibrary":
        if blob[:8] != _LIB_MAGIC:
            raise InvalidArgumentError("not a btdz library file")
        n, n_s, n_a, d = struct.unpack("<QQQQ", blob[8:40])
        mdp_fp = blob[40:104].rstrip(b"\0").decode("ascii")
        feat_fp = blob[104:168].rstrip(b"\0").decode("ascii")
        per = 8 * (d + n_s + n_s * n_a * d)
        body = blob[168:]
        if len(body) != n * per:
            raise InvalidArgumentError("library file size disagrees with its header")
        entries = []
        for i in range(n):
            chunk = body[i * per:(i + 1) * per]
            z = np.frombuffer(chunk[:8 * d], dtype="<f8").copy()
            pol = np.frombuffer(chunk[8 * d:8 * (d + n_s)], dtype="<i8").astype(np.int64)
            psi = np.frombuffer(chunk[8 * (d + n_s):], dtype="<f8").reshape(n_s, n_a, d).copy()
            psi.setflags(write=False)
            entries.append(LibraryEntry(z, pol, SuccessorFeatureTable(psi, pol)))
        return cls(tuple(entries), feat_fp, mdp_fp)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PolicyLibrary":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class RewardProbe:
    """Reward-labelled states revealed at test time."""

    states: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64)
        r = np.asarray(self.rewards, dtype=float)
        if s.ndim != 1 or s.shape != r.shape or s.size == 0:
            raise InvalidArgumentError("probe needs matching, nonempty state and reward lists")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "rewards", r)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[int, float]]) -> "RewardProbe":
        pairs = list(pairs)
        return cls(np.array([p[0] for p in pairs], dtype=np.int64), np.array([p[1] for p in pairs]))


@dataclass(frozen=True)
class EvalResult:
    ret: float
    oracle: float
    ratio: float
    z_raw: np.ndarray
    z_unit: Optional[np.ndarray]
    policy: np.ndarray
    gpi_margin: float


def _check_dims(mdp: TabularMdp, features: FeatureMap) -> None:
    if features.n_states != mdp.n_states:
        raise InvalidArgumentError(
            f"features cover {features.n_states} states but the MDP has {mdp.n_states}"
        )


def train_policy_library(mdp: TabularMdp, features: FeatureMap, tasks, tol: float = 1e-8,
                         verify: bool = True) -> PolicyLibrary:
    """One exactly optimal policy plus successor features per task vector."""
    _check_dims(mdp, features)
    Z = np.atleast_2d(np.asarray(getattr(tasks, "vectors", tasks), dtype=float))
    if Z.shape[0] == 0:
        raise InvalidArgumentError("need at least one training task")
    if Z.shape[1] != features.dim:
        raise InvalidArgumentError(f"task dimension {Z.shape[1]} differs from feature dimension {features.dim}")
    entries = []
    cache = {}
    for z in Z:
        key = z.tobytes()
        if key in cache:
            entries.append(cache[key])
            continue
        reward = features.phi @ z
        policy, values = value_iteration(mdp, reward, tol)
        sf = successor_features_for_policy(mdp, policy, features)
        if verify:
            _verify_entry(mdp, features, reward, policy, values, sf, z, tol)
        entry = LibraryEntry(z.copy(), policy, sf)
        cache[key] = entry
        entries.append(entry)
    return PolicyLibrary(tuple(entries), features.fingerprint(), mdp.fingerprint())


def _verify_entry(mdp, features, reward, policy, values, sf, z, tol):
    residual = sf_bellman_residual(mdp, sf, features)
    scale = max(1.0, float(np.max(np.abs(sf.psi_sa))))
    if residual > SF_RESIDUAL_TOL * scale:
        raise InvariantError(f"successor-feature Bellman residual {residual:.3e} too large")
    q = q_from_values(mdp, reward, values)
    on_policy = sf.psi_sa[np.arange(mdp.n_states), policy] @ z
    chosen = q[np.arange(mdp.n_states), policy]
    if np.max(np.abs(on_policy - chosen)) > 1e-6 * max(1.0, float(np.max(np.abs(chosen)))):
        raise InvariantError("successor features disagree with the optimal Q-values")
    if float(np.max(np.abs(values - q.max(axis=1)))) > max(tol, 1e-9 * np.max(np.abs(values), initial=1.0)):
        raise InvariantError("library policy is not optimal for its task")


def infer_task_vector(probe: RewardProbe, features: FeatureMap,
                      ridge: float = DEFAULT_RIDGE) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Ridge least squares of the probe rewards on the features.

    Solves (mean phi phi^T + ridge I) z = mean phi r. Returns the raw
    solution and its normalisation (``None`` for the zero vector).
    """
    if ridge < 0:
        raise InvalidArgumentError("ridge must be >= 0")
    if probe.states.max() >= features.n_states or probe.states.min() < 0:
        raise InvalidArgumentError("probe state outside the feature map")
    X = features.phi[probe.states]
    n = X.shape[0]
    gram = X.T @ X / n + ridge * np.eye(features.dim)
    rhs = X.T @ probe.rewards / n
    try:
        z = np.linalg.solve(gram, rhs)
        if ridge == 0 and np.linalg.matrix_rank(gram) < features.dim:
            raise np.linalg.LinAlgError("rank deficient")
    except np.linalg.LinAlgError as exc:
        raise NumericalError("probe Gram matrix is singular; use a positive ridge") from exc
    norm = float(np.linalg.norm(z))
    return z, (z / norm if norm > 0 else None)


def gpi_q_values(library: PolicyLibrary, z) -> np.ndarray:
    """(n_entries, S, A) action values of every library policy for reward Phi z."""
    z = np.asarray(z, dtype=float)
    if z.shape != (library.dim,):
        raise InvalidArgumentError(f"z has shape {z.shape}, library dimension is {library.dim}")
    return library.stacked_sf() @ z


def gpi_policy(library: PolicyLibrary, z) -> np.ndarray:
    """argmax_a max_i psi_i(s, a)^T z; ties go to the lowest action index."""
    if not len(library):
        raise InvalidArgumentError("library is empty")
    q = gpi_q_values(library, z).max(axis=0)
    return np.argmax(q >= q.max(axis=1, keepdims=True), axis=1).astype(np.int64)


def oracle_return(mdp: TabularMdp, reward, tol: float = 1e-10) -> float:
    policy, _ = value_iteration(mdp, reward, tol)
    return evaluate_policy_return(mdp, policy, reward)


def make_probe(reward, n_states: int, probe_size: int, seed, replace: bool = True) -> RewardProbe:
    reward = np.asarray(reward, dtype=float)
    if probe_size < 1:
        raise InvalidArgumentError("probe_size must be >= 1")
    rng = np.random.default_rng(seed)
    if replace:
        states = rng.integers(0, n_states, size=probe_size)
    else:
        if probe_size > n_states:
            raise InvalidArgumentError("probe without replacement cannot exceed n_states")
        states = np.sort(rng.permutation(n_states)[:probe_size])
    return RewardProbe(states, reward[states])


def gpi_dominance_margin(mdp: TabularMdp, library: PolicyLibrary, features: FeatureMap,
                         z, policy) -> float:
    """Return of the GPI policy minus the best member return, for reward Phi z."""
    reward = features.phi @ z
    gpi_ret = evaluate_policy_return(mdp, policy, reward)
    best = max(evaluate_policy_return(mdp, e.policy, reward) for e in library.entries)
    return gpi_ret - best


def zero_shot_eval(mdp: TabularMdp, library: PolicyLibrary, features: FeatureMap, true_reward,
                   probe_size: Optional[int] = None, ridge: float = DEFAULT_RIDGE, seed=0,
                   replace: bool = True, oracle: Optional[float] = None,
                   check: bool = True) -> EvalResult:
    """Probe, infer z, act by GPI, and score the policy on the true reward.

    With ``check`` the GPI dominance invariant is enforced: the GPI policy
    must do at least as well on ``Phi z_test`` as every library member.
    """
    _check_dims(mdp, features)
    if library.mdp_fingerprint != mdp.fingerprint():
        raise InvalidArgumentError("library was trained on a different MDP")
    if library.features_fingerprint != features.fingerprint():
        raise InvalidArgumentError("library was trained with different features")
    true_reward = np.asarray(true_reward, dtype=float)
    if probe_size is None:
        probe_size = min(mdp.n_states, 512)
    probe = make_probe(true_reward, mdp.n_states, probe_size, seed, replace)
    z_raw, z_unit = infer_task_vector(probe, features, ridge)
    policy = gpi_policy(library, z_raw)
    ret = evaluate_policy_return(mdp, policy, true_reward)
    best = oracle_return(mdp, true_reward) if oracle is None else oracle
    margin = gpi_dominance_margin(mdp, library, features, z_raw, policy)
    if check:
        scale = max(1.0, float(np.max(np.abs(features.phi @ z_raw)))) / (1.0 - mdp.discount)
        if margin < -1e-9 * scale:
            raise InvariantError(f"GPI policy underperforms a library member by {-margin:.3e}")
        if best < ret - 1e-9 * max(1.0, abs(best)):
            raise InvariantError(f"oracle return {best} below zero-shot return {ret}")
    ratio = ret / best if best != 0 else float("nan")
    return EvalResult(ret, best, ratio, z_raw, z_unit, policy, margin)
