"""Offline datasets: generation, persistence and subtrajectory sampling."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidArgumentError
from .mdp import TabularMdp, value_iteration

log = logging.getLogger(__name__)

DATASET_FORMAT = "btdz-dataset/1"


@dataclass(frozen=True, eq=False)
class BehaviorSpec:
    """Per-trajectory behaviour mixture.

    Each trajectory is uniform-random with probability ``p_uniform``;
    otherwise it is an epsilon-greedy goal-seeker heading for a uniformly
    drawn goal state.
    """

    p_uniform: float = 0.5
    epsilon: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.p_uniform <= 1.0:
            raise InvalidArgumentError(f"p_uniform must be in [0, 1], got {self.p_uniform}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidArgumentError(f"epsilon must be in [0, 1], got {self.epsilon}")

    def to_dict(self) -> dict:
        return {"kind": "mixture", "p_uniform": self.p_uniform, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, doc) -> "BehaviorSpec":
        if isinstance(doc, BehaviorSpec):
            return doc
        if not isinstance(doc, dict):
            raise InvalidArgumentError(f"behavior spec must be a mapping, got {type(doc).__name__}")
        kind = doc.get("kind", "mixture")
        try:
            if kind == "uniform":
                return cls(p_uniform=1.0, epsilon=float(doc.get("epsilon", 0.2)))
            if kind == "goal_seeker":
                return cls(p_uniform=0.0, epsilon=float(doc.get("epsilon", 0.2)))
            if kind == "mixture":
                return cls(p_uniform=float(doc.get("p_uniform", 0.5)), epsilon=float(doc.get("epsilon", 0.2)))
        except (TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"invalid behavior spec {doc!r}: {exc}") from exc
        raise InvalidArgumentError(f"unknown behavior kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        actions = np.asarray(self.actions, dtype=np.int64)
        if states.ndim != 1 or actions.ndim != 1 or states.size != actions.size + 1 or actions.size < 1:
            raise InvalidArgumentError("trajectory needs L >= 1 actions and L + 1 states")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return self.actions.size


@dataclass(frozen=True, eq=False)
class Dataset:
    trajectories: Tuple[Trajectory, ...]
    n_states: int
    n_actions: int
    mdp_fingerprint: str
    behavior_spec: dict
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.trajectories:
            raise InvalidArgumentError("dataset must contain at least one trajectory")
        for tr in self.trajectories:
            if tr.states.min() < 0 or tr.states.max() >= self.n_states:
                raise InvalidArgumentError("trajectory state index out of range")
            if tr.actions.min() < 0 or tr.actions.max() >= self.n_actions:
                raise InvalidArgumentError("trajectory action index out of range")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(t) for t in self.trajectories], dtype=np.int64)

    def check_mdp(self, mdp: TabularMdp) -> None:
        if mdp.fingerprint() != self.mdp_fingerprint:
            raise InvalidArgumentError("dataset was generated from a different MDP")

    def header(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_traj": len(self.trajectories),
            "mdp_fingerprint": self.mdp_fingerprint,
            "behavior_spec": self.behavior_spec,
            "seed": self.seed,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True, separators=(",", ":"))]
        for tr in self.trajectories:
            lines.append(json.dumps({"states": tr.states.tolist(), "actions": tr.actions.tolist()},
                                    separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "Dataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise InvalidArgumentError("empty dataset file")
        head = json.loads(lines[0])
        if head.get("format") != DATASET_FORMAT:
            raise InvalidArgumentError(f"unrecognised dataset header {head.get('format')!r}")
        trajs = []
        for ln in lines[1:]:
            doc = json.loads(ln)
            trajs.append(Trajectory(doc["states"], doc["actions"]))
        return cls(tuple(trajs), int(head["n_states"]), int(head["n_actions"]),
                   head["mdp_fingerprint"], head["behavior_spec"], int(head["seed"]))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Dataset":
        return cls.from_jsonl(Path(path).read_text())


_GOAL_CACHE: Dict[str, np.ndarray] = {}


def goal_seeking_policies(mdp: TabularMdp) -> np.ndarray:
    """Row g is the optimal policy for the reward indicator of state g."""
    key = mdp.fingerprint()
    if key in _GOAL_CACHE:
        return _GOAL_CACHE[key]
    table = np.zeros((mdp.n_states, mdp.n_states), dtype=np.int64)
    for g in range(mdp.n_states):
        reward = np.zeros(mdp.n_states)
        reward[g] = 1.0
        table[g], _ = value_iteration(mdp, reward, tol=1e-8)
    table.setflags(write=False)
    _GOAL_CACHE[key] = table
    return table


def generate_dataset(
    mdp: TabularMdp,
    n_traj: int = 2000,
    traj_len: int = 100,
    behavior_spec=None,
    seed: int = 0,
) -> Dataset:
    """Roll out ``n_traj`` trajectories of ``traj_len`` steps.

    Trajectory ``i`` draws every random number it needs from its own stream
    seeded by ``(seed, i)``, so the result does not depend on how the work
    is split.
    """
    if n_traj < 1 or traj_len < 1:
        raise InvalidArgumentError("n_traj and traj_len must be >= 1")
    spec = BehaviorSpec.from_dict(behavior_spec if behavior_spec is not None else {})
    n_s, n_a = mdp.n_states, mdp.n_actions

    head = np.empty((n_traj, 3))
    body = np.empty((n_traj, traj_len, 3))
    for i in range(n_traj):
        rng = np.random.default_rng([seed, i])
        head[i] = rng.random(3)
        body[i] = rng.random((traj_len, 3))

    uniform_mode = head[:, 0] < spec.p_uniform
    goals = np.minimum((head[:, 1] * n_s).astype(np.int64), n_s - 1)
    mu_cdf = np.cumsum(mdp.initial_dist)
    states = np.empty((n_traj, traj_len + 1), dtype=np.int64)
    actions = np.empty((n_traj, traj_len), dtype=np.int64)
    states[:, 0] = np.minimum(np.searchsorted(mu_cdf, head[:, 2], side="right"), n_s - 1)

    goal_table = goal_seeking_policies(mdp) if not uniform_mode.all() else None
    cdf = np.cumsum(mdp.transitions, axis=2)
    for t in range(traj_len):
        s = states[:, t]
        random_action = np.minimum((body[:, t, 1] * n_a).astype(np.int64), n_a - 1)
        explore = uniform_mode | (body[:, t, 0] < spec.epsilon)
        if goal_table is None:
            a = random_action
        else:
            a = np.where(explore, random_action, goal_table[goals, s])
        rows = cdf[a, s]
        nxt = np.sum(rows <= body[:, t, 2][:, None], axis=1)
        actions[:, t] = a
        states[:, t + 1] = np.minimum(nxt, n_s - 1)

    trajs = tuple(Trajectory(states[i], actions[i]) for i in range(n_traj))
    return Dataset(trajs, n_s, n_a, mdp.fingerprint(), spec.to_dict(), int(seed))


def empirical_transition_matrix(dataset: Dataset, n_states: int) -> Tuple[np.ndarray, List[int]]:
    """Row-normalised (s_t -> s_t+1) counts.

    Returns the matrix and the list of states with no outgoing observation;
    those rows are set to uniform.
    """
    counts = np.zeros((n_states, n_states))
    for tr in dataset.trajectories:
        np.add.at(counts, (tr.states[:-1], tr.states[1:]), 1.0)
    totals = counts.sum(axis=1)
    empty = np.flatnonzero(totals == 0)
    P_hat = np.empty_like(counts)
    seen = totals > 0
    P_hat[seen] = counts[seen] / totals[seen, None]
    P_hat[~seen] = 1.0 / n_states
    if empty.size:
        log.warning("%d states never left in the dataset; using uniform rows for %s",
                    empty.size, empty.tolist())
    return P_hat, empty.tolist()


@dataclass(frozen=True, eq=False)
class Subtrajectory:
    parent: int
    start: int
    length: int
    states: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class SubtrajectorySet:
    """Index triples of subtrajectories of one dataset.

    ``length`` counts transitions, so a subtrajectory covers ``length + 1``
    states; ``length == 0`` is a single state.
    """

    dataset: Dataset = field(repr=False)
    parents: np.ndarray
    starts: np.ndarray
    lengths: np.ndarray

    def __len__(self) -> int:
        return self.parents.size

    def __getitem__(self, i: int) -> Subtrajectory:
        p, a, ell = int(self.parents[i]), int(self.starts[i]), int(self.lengths[i])
        states = self.dataset.trajectories[p].states[a: a + ell + 1]
        return Subtrajectory(p, a, ell, states)

    def __iter__(self) -> Iterator[Subtrajectory]:
        for i in range(len(self)):
            yield self[i]

    def discounted_visits(self, gamma: float) -> np.ndarray:
        """W[i, s] = sum_t gamma^t [s_t = s] over subtrajectory i (final state included)."""
        n_sub = len(self)
        W = np.zeros((n_sub, self.dataset.n_states))
        max_len = int(self.lengths.max()) if n_sub else 0
        by_parent = _stack_states(self.dataset)
        for t in range(max_len + 1):
            live = self.lengths >= t
            idx = np.flatnonzero(live)
            s = by_parent[self.parents[idx], self.starts[idx] + t]
            np.add.at(W, (idx, s), gamma ** t)
        return W


def _stack_states(dataset: Dataset) -> np.ndarray:
    width = int(dataset.lengths.max()) + 1
    out = np.full((len(dataset), width), -1, dtype=np.int64)
    for i, tr in enumerate(dataset.trajectories):
        out[i, : tr.states.size] = tr.states
    return out


def sample_subtrajectories(
    dataset: Dataset,
    n_sub: int,
    len_min: int,
    len_max: int,
    seed: int,
) -> SubtrajectorySet:
    """Parent uniform, length uniform on [len_min, len_max], start uniform.

    For datasets with unequal trajectory lengths, parents shorter than
    ``len_min`` are skipped and the length range is capped by the parent.
    """
    if n_sub < 1:
        raise InvalidArgumentError("n_sub must be >= 1")
    if len_min < 0 or len_min > len_max:
        raise InvalidArgumentError(f"need 0 <= len_min <= len_max, got [{len_min}, {len_max}]")
    lengths = dataset.lengths
    if len_max > lengths.max():
        raise InvalidArgumentError(
            f"len_max={len_max} exceeds every trajectory length (max {int(lengths.max())})"
        )
    eligible = np.flatnonzero(lengths >= len_min)
    rng = np.random.default_rng(seed)
    u = rng.random((n_sub, 3))
    parents = eligible[np.minimum((u[:, 0] * eligible.size).astype(np.int64), eligible.size - 1)]
    hi = np.minimum(len_max, lengths[parents])
    span = hi - len_min + 1
    sub_len = len_min + np.minimum((u[:, 1] * span).astype(np.int64), span - 1)
    n_starts = lengths[parents] - sub_len + 1
    starts = np.minimum((u[:, 2] * n_starts).astype(np.int64), n_starts - 1)
    return SubtrajectorySet(dataset, parents, starts, sub_len)


def full_trajectories(dataset: Dataset, indices: Optional[Sequence[int]] = None) -> SubtrajectorySet:
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=np.int64)
    return SubtrajectorySet(dataset, idx, np.zeros_like(idx), dataset.lengths[idx])


def state_visit_distribution(dataset: Dataset) -> np.ndarray:
    counts = np.zeros(dataset.n_states)
    for tr in dataset.trajectories:
        np.add.at(counts, tr.states, 1.0)
    return counts / counts.sum()


def behavior_summary(dataset: Dataset) -> Dict[str, float]:
    lengths = dataset.lengths
    return {"n_traj": float(len(dataset)), "mean_len": float(lengths.mean()), "transitions": float(lengths.sum())}
