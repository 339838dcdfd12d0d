"""Covariance spectra of the behavioural space and the signal-dilution check.

For a policy population with feature occupancies psi^pi and covariance
Sigma, a task z sees return variance Var_pi[(psi^pi)^T z] = z^T Sigma z.
Averaged over z uniform on the sphere this is Tr(Sigma) / d.

Two population estimators are kept separate throughout:

* ``policies``  -- exact occupancies of uniformly random deterministic
  policies;
* ``subtraj``   -- discounted feature sums of random dataset subtrajectories
  (unnormalised, unlike the task vectors built from the same slices).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .btd import TaskVectorSet, sample_uniform_sphere
from .dataset import Dataset, sample_subtrajectories
from .errors import InvalidArgumentError
from .features import build_features, normalize_rows
from .mdp import FeatureMap, TabularMdp, check_policy, discounted_occupancy, random_deterministic_policies


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    dim: int
    trace: float
    normalized_trace: float
    eigenvalues: np.ndarray
    covariance: Optional[np.ndarray] = field(default=None, repr=False)
    estimator: str = ""

    def top(self, k: int = 10) -> List[float]:
        vals = list(self.eigenvalues[:k])
        return vals + [0.0] * (k - len(vals))


def covariance_spectrum(samples: np.ndarray, estimator: str = "") -> SpectrumReport:
    """Population covariance (1/N normalisation) of the rows and its spectrum."""
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InvalidArgumentError("need an (N, d) sample matrix with N >= 1")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / X.shape[0]
    cov = 0.5 * (cov + cov.T)
    evals = np.sort(np.linalg.eigvalsh(cov))[::-1]
    trace = float(np.trace(cov))
    d = X.shape[1]
    return SpectrumReport(d, trace, trace / d, evals, cov, estimator)


def state_occupancies(mdp: TabularMdp, policies: np.ndarray) -> np.ndarray:
    """(n_policies, S) discounted state occupancies."""
    return np.stack([discounted_occupancy(mdp, p) for p in np.atleast_2d(policies)])


def sample_policies(mdp: TabularMdp, n_policies: int, seed) -> np.ndarray:
    return random_deterministic_policies(mdp, n_policies, np.random.default_rng(seed))


def policy_feature_occupancies(mdp: TabularMdp, features: FeatureMap, policies: np.ndarray) -> np.ndarray:
    return state_occupancies(mdp, policies) @ features.phi


def behavioral_covariance_policies(mdp: TabularMdp, features: FeatureMap, n_policies: int = 512,
                                   seed=0, policies: Optional[np.ndarray] = None) -> SpectrumReport:
    """Spectrum of the occupancy covariance over a policy population.

    ``policies`` overrides sampling (e.g. a full enumeration); otherwise
    ``n_policies`` policies draw an independent uniform action per state.
    """
    if policies is None:
        if n_policies < 2:
            raise InvalidArgumentError("need at least two policies")
        policies = sample_policies(mdp, n_policies, seed)
    else:
        policies = np.stack([check_policy(mdp, p) for p in np.atleast_2d(policies)])
    return covariance_spectrum(policy_feature_occupancies(mdp, features, policies), "policies")


def behavioral_covariance_subtraj(dataset: Dataset, features: FeatureMap, gamma: float,
                                  n_sub: int = 100_000, seed=0, len_min: int = 5,
                                  len_max: int = 100) -> SpectrumReport:
    len_max = min(len_max, int(dataset.lengths.max()))
    len_min = min(len_min, len_max)
    subs = sample_subtrajectories(dataset, n_sub, len_min, len_max, seed)
    psi = subs.discounted_visits(gamma) @ features.phi
    return covariance_spectrum(psi, "subtraj")


def expected_uniform_task_variance(report: SpectrumReport) -> float:
    return report.trace / report.dim


def per_task_variance(occupancy_samples: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Var over the population of (psi^pi)^T z, one value per row of Z."""
    returns = np.asarray(occupancy_samples) @ np.atleast_2d(Z).T
    return returns.var(axis=0)


def quadratic_forms(cov: np.ndarray, Z: np.ndarray) -> np.ndarray:
    Z = np.atleast_2d(Z)
    return np.einsum("ni,ij,nj->n", Z, cov, Z)


Sampler = Callable[[int, int], Union[TaskVectorSet, np.ndarray]]


def uniform_sampler(d: int) -> Sampler:
    return lambda n, seed: sample_uniform_sphere(d, n, seed)


def monte_carlo_task_variance(mdp: TabularMdp, features: FeatureMap, sampler: Sampler, n_z: int = 2000,
                              n_policies: int = 512, seed=0,
                              policies: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """Average over sampled z of the inter-policy return variance.

    Returns the estimate and the standard error of the z-average.
    """
    if n_z < 2:
        raise InvalidArgumentError("need n_z >= 2")
    if policies is None:
        if n_policies < 2:
            raise InvalidArgumentError("need at least two policies")
        policies = sample_policies(mdp, n_policies, [int(seed), 1])
    psi = policy_feature_occupancies(mdp, features, policies)
    draw = sampler(n_z, [int(seed), 2])
    Z = np.asarray(getattr(draw, "vectors", draw))
    v = per_task_variance(psi, Z)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def prop1_identity_check(mdp: TabularMdp, features: FeatureMap, n_z: int = 2000, n_policies: int = 512,
                         seed=0, n_quadratic: int = 1000) -> dict:
    """Monte Carlo E_z[Var_pi J] against Tr(Sigma)/d, and Var_pi against z^T Sigma z per z.

    Both sides use one shared policy sample, so the first comparison is
    limited only by the z sampling error.
    """
    d = features.dim
    policies = sample_policies(mdp, n_policies, [int(seed), 1])
    report = behavioral_covariance_policies(mdp, features, policies=policies)
    predicted = expected_uniform_task_variance(report)
    est, se = monte_carlo_task_variance(mdp, features, uniform_sampler(d), n_z, seed=seed, policies=policies)
    if se > 0:
        z_score = abs(est - predicted) / se
    else:
        z_score = 0.0 if abs(est - predicted) <= 1e-12 * max(1.0, abs(predicted)) else float("inf")
    psi = policy_feature_occupancies(mdp, features, policies)
    Z = sample_uniform_sphere(d, n_quadratic, [int(seed), 3]).vectors
    quad_err = float(np.max(np.abs(per_task_variance(psi, Z) - quadratic_forms(report.covariance, Z))))
    return {
        "d": d, "n_z": n_z, "n_policies": n_policies, "n_quadratic": n_quadratic,
        "trace_over_d": predicted, "monte_carlo": est, "standard_error": se, "z_score": z_score,
        "identity_pass": bool(z_score <= 3.0),
        "quadratic_max_abs_error": quad_err, "quadratic_pass": bool(quad_err <= 1e-9),
    }


def dilution_features(mdp: TabularMdp, family: str, d: int, seed, unit_rows: bool = True,
                      **feature_kwargs) -> FeatureMap:
    """Whitened features of one family, optionally projected to unit-norm rows.

    Unit rows keep every embedding bounded by 1 whatever d is, which is the
    regime the dilution argument is about; whitening alone fixes
    E||phi||^2 = d and therefore grows the occupancy scale with d.
    """
    fmap = build_features(family, mdp, d, seed, **feature_kwargs)
    return normalize_rows(fmap) if unit_rows else fmap


def dilution_curve(mdp: TabularMdp, feature_family: str, dims: Sequence[int], seed=0,
                   estimator: str = "policies", dataset: Optional[Dataset] = None,
                   n_policies: int = 512, n_sub: int = 100_000, len_min: int = 5, len_max: int = 100,
                   unit_rows: bool = True, **feature_kwargs) -> List[SpectrumReport]:
    """Normalised occupancy-covariance trace for each feature dimension.

    The population (sampled policies or subtrajectories) is drawn once and
    shared across dimensions, so only the features change along the curve.
    """
    dims = list(dims)
    if dims != sorted(dims):
        raise InvalidArgumentError("dims must be sorted ascending")
    if estimator == "policies":
        weights = state_occupancies(mdp, sample_policies(mdp, n_policies, seed))
    elif estimator == "subtraj":
        if dataset is None:
            raise InvalidArgumentError("the subtrajectory estimator needs a dataset")
        len_max = min(len_max, int(dataset.lengths.max()))
        subs = sample_subtrajectories(dataset, n_sub, min(len_min, len_max), len_max, seed)
        weights = subs.discounted_visits(mdp.discount)
    else:
        raise InvalidArgumentError(f"unknown estimator {estimator!r}")
    reports = []
    for d in dims:
        fmap = dilution_features(mdp, feature_family, d, seed, unit_rows, **feature_kwargs)
        reports.append(covariance_spectrum(weights @ fmap.phi, estimator))
    return reports


def spectrum_csv(reports: Sequence[SpectrumReport], top_k: int = 10) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "trace", "normalized_trace"] + [f"eig{i + 1}" for i in range(top_k)])
    for rep in reports:
        w.writerow([rep.dim, repr(rep.trace), repr(rep.normalized_trace)] + [repr(float(x)) for x in rep.top(top_k)])
    return buf.getvalue()
