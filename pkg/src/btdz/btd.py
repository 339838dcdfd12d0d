"""Task vectors from data and the competing task samplers.

A task vector z is a unit vector defining the reward r(s) = phi(s)^T z.
Besides the uniform hypersphere prior this module builds the empirical set
of dataset-derived directions (``build_pdata``), the behavioural task
distribution fitted to it (a GMM, see :mod:`btdz.gmm`), the alpha-mixture
of the two, and the two heuristic samplers that skip density fitting.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .dataset import Dataset, Subtrajectory, SubtrajectorySet, full_trajectories, sample_subtrajectories
from .errors import DegenerateFeaturesError, InvalidArgumentError, NumericalError
from .gmm import Gmm
from .mdp import FeatureMap

log = logging.getLogger(__name__)

PROVENANCES = ("subtrajectory", "full_trajectory", "uniform", "gmm", "mixed")
REJECT_NORM = 1e-10
UNIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TaskVectorSet:
    """Rows of ``vectors`` are unit task vectors.

    ``sources`` marks, for mixed sets, which rows came from the uniform
    prior (True) and which from the BTD (False). ``rejected`` counts
    degenerate slices dropped during extraction.
    """

    vectors: np.ndarray
    provenance: str
    sources: Optional[np.ndarray] = field(default=None, repr=False)
    rejected: int = 0

    def __post_init__(self):
        V = np.array(self.vectors, dtype=float, copy=True)
        if V.ndim != 2:
            raise InvalidArgumentError(f"task vectors must form an (n, d) array, got shape {V.shape}")
        if self.provenance not in PROVENANCES:
            raise InvalidArgumentError(f"unknown provenance {self.provenance!r}")
        if V.size and np.max(np.abs(np.linalg.norm(V, axis=1) - 1.0)) > UNIT_TOL:
            raise InvalidArgumentError("task vectors must have unit norm")
        V.setflags(write=False)
        object.__setattr__(self, "vectors", V)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def to_bytes(self) -> bytes:
        """Header: rows, cols (uint64 LE), 16-byte ASCII provenance; then float64 row-major."""
        tag = self.provenance.encode("ascii").ljust(16, b"\0")
        head = struct.pack("<QQ", *self.vectors.shape) + tag
        return head + np.ascontiguousarray(self.vectors, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TaskVectorSet":
        if len(blob) < 32:
            raise InvalidArgumentError("truncated task-vector file")
        rows, cols = struct.unpack("<QQ", blob[:16])
        prov = blob[16:32].rstrip(b"\0").decode("ascii")
        body = blob[32:]
        if len(body) != rows * cols * 8:
            raise InvalidArgumentError("task-vector file size disagrees with its header")
        return cls(np.frombuffer(body, dtype="<f8").reshape(rows, cols), prov)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TaskVectorSet":
        return cls.from_bytes(Path(path).read_bytes())


def _unit_rows(raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(raw, axis=1)
    ok = norms >= REJECT_NORM
    return raw[ok] / norms[ok, None], ok


def extract_task_vector(sub: Union[Subtrajectory, np.ndarray], features: FeatureMap,
                        gamma: float) -> Optional[np.ndarray]:
    """Normalised discounted feature sum of one state sequence.

    Returns ``None`` (a rejection, not an error) when the sum has norm
    below 1e-10.
    """
    states = np.asarray(getattr(sub, "states", sub), dtype=np.int64)
    if not 0.0 <= gamma < 1.0:
        raise InvalidArgumentError("gamma must lie in [0, 1)")
    if states.size and (states.min() < 0 or states.max() >= features.n_states):
        raise InvalidArgumentError("subtrajectory state outside the feature map")
    psi = (gamma ** np.arange(states.size)) @ features.phi[states]
    norm = float(np.linalg.norm(psi))
    if norm < REJECT_NORM:
        return None
    return psi / norm


def occupancies(subs: SubtrajectorySet, features: FeatureMap, gamma: float) -> np.ndarray:
    """Unnormalised discounted feature sums, one row per subtrajectory."""
    if features.n_states != subs.dataset.n_states:
        raise InvalidArgumentError("feature map and dataset disagree on the number of states")
    return subs.discounted_visits(gamma) @ features.phi


def task_vectors_from(subs: SubtrajectorySet, features: FeatureMap, gamma: float,
                      provenance: str = "subtrajectory") -> TaskVectorSet:
    Z, ok = _unit_rows(occupancies(subs, features, gamma))
    rejected = int((~ok).sum())
    if rejected:
        log.info("rejected %d of %d degenerate subtrajectories", rejected, ok.size)
    if not len(Z):
        raise DegenerateFeaturesError("every subtrajectory has a zero feature occupancy")
    return TaskVectorSet(Z, provenance, rejected=rejected)


def build_pdata(dataset: Dataset, features: FeatureMap, gamma: float, n_sub: int = 20000,
                len_min: int = 5, len_max: int = 100, seed: int = 0) -> TaskVectorSet:
    subs = sample_subtrajectories(dataset, n_sub, len_min, len_max, seed)
    return task_vectors_from(subs, features, gamma, "subtrajectory")


def sample_uniform_sphere(d: int, n: int, seed) -> TaskVectorSet:
    if d < 1 or n < 0:
        raise InvalidArgumentError("need d >= 1 and n >= 0")
    rng = np.random.default_rng(seed)
    return TaskVectorSet(_project(rng, lambda m: rng.standard_normal((m, d)), n, d), "uniform")


def _project(rng, draw, n, d, max_attempts=100):
    """Normalise ``n`` draws, redrawing (near-)zero vectors."""
    out = np.empty((n, d))
    todo = np.arange(n)
    for _ in range(max_attempts):
        if not todo.size:
            return out
        raw = draw(todo.size)
        norms = np.linalg.norm(raw, axis=1)
        ok = norms >= REJECT_NORM
        out[todo[ok]] = raw[ok] / norms[ok, None]
        todo = todo[~ok]
    if todo.size:
        raise NumericalError(f"{todo.size} draws stayed at zero norm after {max_attempts} attempts")
    return out


def sample_btd(gmm: Gmm, n: int, seed) -> TaskVectorSet:
    """Draw from the mixture and project each draw onto the unit sphere."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return TaskVectorSet(_project(rng, lambda m: gmm.sample(m, rng)[0], n, gmm.dim), "gmm")


def sample_mixed(alpha: float, gmm: Gmm, d: int, n: int, seed) -> TaskVectorSet:
    """Row i is uniform with probability ``alpha``, otherwise from the BTD.

    Both candidate streams are generated with the same seed as the pure
    samplers, so alpha = 0 reproduces ``sample_btd(gmm, n, seed)`` and
    alpha = 1 reproduces ``sample_uniform_sphere(d, n, seed)`` exactly.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    if gmm.dim != d:
        raise InvalidArgumentError(f"GMM dimension {gmm.dim} differs from d={d}")
    labels = np.random.default_rng([_seed_int(seed), 0x4D4958]).random(n) < alpha
    btd = sample_btd(gmm, n, seed).vectors if not labels.all() else np.zeros((n, d))
    uni = sample_uniform_sphere(d, n, seed).vectors if labels.any() else np.zeros((n, d))
    out = np.where(labels[:, None], uni, btd)
    return TaskVectorSet(out, "mixed", sources=labels)


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def heuristic_tasks(dataset: Dataset, features: FeatureMap, gamma: float, mode: str, n: int,
                    seed: int = 0, n_sub: int = 20000, len_min: int = 5, len_max: int = 100,
                    pdata: Optional[TaskVectorSet] = None) -> TaskVectorSet:
    """Density-free samplers.

    ``subtrajectory`` draws ``n`` members of p_data with replacement;
    ``full_trajectory`` uses whole dataset trajectories (drawn uniformly with
    replacement) as the slices.
    """
    rng = np.random.default_rng([_seed_int(seed), 0x484555])
    if mode == "subtrajectory":
        if pdata is None:
            pdata = build_pdata(dataset, features, gamma, n_sub, len_min, len_max, seed)
        idx = rng.integers(0, len(pdata), size=n)
        return TaskVectorSet(pdata.vectors[idx], "subtrajectory")
    if mode == "full_trajectory":
        Z, _ = _unit_rows(occupancies(full_trajectories(dataset), features, gamma))
        if not len(Z):
            raise DegenerateFeaturesError("every trajectory has a zero feature occupancy")
        idx = rng.integers(0, len(Z), size=n)
        return TaskVectorSet(Z[idx], "full_trajectory")
    raise InvalidArgumentError(f"unknown heuristic mode {mode!r}")
