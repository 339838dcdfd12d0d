"""Experiment pipeline: dataset -> features -> p_data -> GMM -> tasks -> library -> report.

Every stage is a pure function of (config, seed). ``Workbench`` memoises the
stages shared between sweep cells, so a sweep over samplers fits the GMM
once per seed and dimension.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .btd import TaskVectorSet, build_pdata, heuristic_tasks, sample_btd, sample_mixed, sample_uniform_sphere
from .config import ExperimentConfig
from .dataset import BehaviorSpec, Dataset, empirical_transition_matrix, generate_dataset
from .engine import PolicyLibrary, oracle_return, train_policy_library, zero_shot_eval
from .errors import ConfigError, InvariantError
from .features import build_features
from .gmm import Gmm, fit_gmm
from .mdp import FeatureMap

REPORT_COLUMNS = ("env", "feature_family", "d", "sampler", "alpha", "K", "seed", "task_name",
                  "return", "oracle", "ratio")
AGG_COLUMNS = ("axis", "value", "task_name", "n_seeds", "mean_ratio", "se_ratio", "mean_return",
               "se_return", "mean_oracle")
AXES = ("dim", "alpha", "gmm_k", "sampler")

# sub-stream tags so no two stages share a random stream
_PDATA, _TASKS, _PROBE = 1, 2, 3


@dataclass(frozen=True)
class ReportRow:
    env: str
    feature_family: str
    d: int
    sampler: str
    alpha: Optional[float]
    K: Optional[int]
    seed: int
    task_name: str
    ret: float
    oracle: float
    ratio: float
    wall_ms: float = 0.0
    gpi_margin: float = 0.0

    def csv_fields(self) -> List[str]:
        opt = lambda v: "" if v is None else repr(v)
        return [self.env, self.feature_family, str(self.d), self.sampler, opt(self.alpha), opt(self.K),
                str(self.seed), self.task_name, repr(self.ret), repr(self.oracle), repr(self.ratio)]


def header_line(cfg: ExperimentConfig, command: str) -> str:
    return f"# btdz {__version__} command={command} config={cfg.hash()}"


def uses_gmm(cfg: ExperimentConfig) -> bool:
    return cfg.sampler in ("btd", "mixed")


def sampler_tag(cfg: ExperimentConfig) -> str:
    if cfg.sampler == "mixed":
        return f"mixed{cfg.alpha:g}-K{cfg.btd.K}"
    if cfg.sampler == "btd":
        return f"btd-K{cfg.btd.K}"
    return cfg.sampler


def _key(*parts) -> str:
    return json.dumps(parts, sort_keys=True, default=str)


class Workbench:
    """Memoised pipeline stages for one environment."""

    def __init__(self, cfg: ExperimentConfig):
        self.base = cfg
        self.mdp, self.tasks = cfg.build_env()
        self._cache: Dict[str, object] = {}
        self._oracles: Optional[Dict[str, float]] = None

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def oracles(self) -> Dict[str, float]:
        if self._oracles is None:
            self._oracles = {k: oracle_return(self.mdp, r) for k, r in self.tasks.items()}
        return self._oracles

    def dataset(self, cfg: ExperimentConfig, seed: int) -> Dataset:
        spec = cfg.dataset
        return self._memo(_key("dataset", seed, spec.n_traj, spec.traj_len, spec.behavior), lambda: generate_dataset(
            self.mdp, spec.n_traj, spec.traj_len, BehaviorSpec.from_dict(spec.behavior), seed))

    def features(self, cfg: ExperimentConfig, seed: int, dataset: Optional[Dataset] = None) -> FeatureMap:
        def build():
            P_hat = None
            if cfg.feature_family == "lra_p":
                ds = dataset if dataset is not None else self.dataset(cfg, seed)
                P_hat, _ = empirical_transition_matrix(ds, self.mdp.n_states)
            return build_features(cfg.feature_family, self.mdp, cfg.d, seed, P_hat=P_hat)

        deps = (cfg.dataset.n_traj, cfg.dataset.traj_len, cfg.dataset.behavior) if cfg.feature_family == "lra_p" else ()
        if dataset is not None:
            return build()
        return self._memo(_key("features", seed, cfg.feature_family, cfg.d, deps), build)

    def pdata(self, cfg: ExperimentConfig, seed: int, dataset: Optional[Dataset] = None,
              features: Optional[FeatureMap] = None) -> TaskVectorSet:
        b = cfg.btd
        ds = dataset if dataset is not None else self.dataset(cfg, seed)
        fm = features if features is not None else self.features(cfg, seed)
        return self._memo(_key("pdata", seed, fm.fingerprint(), ds.header(), b.n_sub, b.len_min, b.len_max),
                          lambda: build_pdata(ds, fm, self.mdp.discount, b.n_sub, b.len_min, b.len_max,
                                              [seed, _PDATA]))

    def gmm(self, cfg: ExperimentConfig, seed: int, pdata: Optional[TaskVectorSet] = None) -> Gmm:
        b = cfg.btd
        pts = pdata if pdata is not None else self.pdata(cfg, seed)
        return self._memo(_key("gmm", seed, hashlib.sha256(pts.vectors.tobytes()).hexdigest(), b.K, b.max_iters, b.tol),
                          lambda: fit_gmm(pts, b.K, b.max_iters, b.tol, seed))

    def task_set(self, cfg: ExperimentConfig, seed: int, gmm: Optional[Gmm] = None,
                 dataset: Optional[Dataset] = None, features: Optional[FeatureMap] = None,
                 pdata: Optional[TaskVectorSet] = None) -> TaskVectorSet:
        """Training tasks for one cell; loaded artifacts override the memoised stages."""
        n, d, s = cfg.library_size, cfg.d, [seed, _TASKS]
        if cfg.sampler == "uniform":
            return sample_uniform_sphere(d, n, s)
        if cfg.sampler in ("btd", "mixed"):
            g = gmm if gmm is not None else self.gmm(cfg, seed)
            return sample_btd(g, n, s) if cfg.sampler == "btd" else sample_mixed(cfg.alpha, g, d, n, s)
        b = cfg.btd
        ds = dataset if dataset is not None else self.dataset(cfg, seed)
        fm = features if features is not None else self.features(cfg, seed)
        if cfg.sampler == "subtrajectory" and pdata is None:
            pdata = self.pdata(cfg, seed, ds, fm)
        return heuristic_tasks(ds, fm, self.mdp.discount, cfg.sampler, n, s, b.n_sub, b.len_min, b.len_max,
                               pdata=pdata)

    def library(self, cfg: ExperimentConfig, seed: int) -> PolicyLibrary:
        return train_policy_library(self.mdp, self.features(cfg, seed), self.task_set(cfg, seed))

    def evaluate(self, cfg: ExperimentConfig, seed: int, library: PolicyLibrary,
                 features: Optional[FeatureMap] = None) -> List[ReportRow]:
        fm = features if features is not None else self.features(cfg, seed)
        rows = []
        oracles = self.oracles()
        for i, (name, reward) in enumerate(self.tasks.items()):
            t0 = time.perf_counter()
            res = zero_shot_eval(self.mdp, library, fm, reward, cfg.probe_size, cfg.ridge,
                                 seed=[seed, _PROBE, i], oracle=oracles[name])
            ms = 1000.0 * (time.perf_counter() - t0)
            rows.append(ReportRow(
                cfg.env_label(), cfg.feature_family, cfg.d, cfg.sampler,
                float(cfg.alpha) if cfg.sampler == "mixed" else None,
                cfg.btd.K if uses_gmm(cfg) else None,
                seed, name, float(res.ret), float(res.oracle), float(res.ratio), ms, float(res.gpi_margin)))
        return rows

    def run_cell(self, cfg: ExperimentConfig, seed: int) -> List[ReportRow]:
        t0 = time.perf_counter()
        rows = self.evaluate(cfg, seed, self.library(cfg, seed))
        total = 1000.0 * (time.perf_counter() - t0)
        # charge the training time evenly to the cell's rows
        share = total / max(len(rows), 1)
        return [ReportRow(**{**r.__dict__, "wall_ms": share}) for r in rows]


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "dim":
        return cfg.replace(d=int(value))
    if axis == "alpha":
        return cfg.replace(sampler="mixed", alpha=float(value))
    if axis == "gmm_k":
        if not uses_gmm(cfg):
            raise ConfigError("the gmm_k axis needs sampler btd or mixed")
        return cfg.replace(**{"btd.K": int(value)})
    if axis == "sampler":
        return cfg.replace(sampler=str(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {AXES}")


def parse_axis_values(axis: str, values: Sequence[str]) -> list:
    try:
        if axis in ("dim", "gmm_k"):
            return [int(v) for v in values]
        if axis == "alpha":
            return [float(v) for v in values]
    except ValueError as exc:
        raise ConfigError(f"bad value for axis {axis}: {exc}") from exc
    if axis == "sampler":
        return [str(v) for v in values]
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {AXES}")


_WORKERS: Dict[str, Workbench] = {}


def _worker_cell(args) -> List[ReportRow]:
    doc, seed = args
    cfg = ExperimentConfig.from_dict(doc)
    bench = _WORKERS.get(cfg.hash())
    if bench is None:
        _WORKERS.clear()
        bench = _WORKERS[cfg.hash()] = Workbench(cfg)
    return bench.run_cell(cfg, seed)


def run_cells(cells: Sequence[Tuple[ExperimentConfig, int]], jobs: int = 1,
              bench: Optional[Workbench] = None) -> List[List[ReportRow]]:
    """Run (config, seed) cells; results come back in input order whatever ``jobs`` is."""
    if jobs <= 1 or len(cells) <= 1:
        if cells and bench is None:
            bench = Workbench(cells[0][0])
        return [bench.run_cell(cfg, seed) for cfg, seed in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_worker_cell, [(cfg.to_dict(), seed) for cfg, seed in cells]))


def check_rows(rows: Iterable[ReportRow]) -> None:
    """Oracle dominance and the ratio bound, on every row."""
    for r in rows:
        if r.oracle < r.ret - 1e-9 * max(1.0, abs(r.oracle)):
            raise InvariantError(f"oracle {r.oracle} below return {r.ret} ({r.env}/{r.task_name}, seed {r.seed})")
        if r.oracle > 0 and r.ratio > 1.0 + 1e-6:
            raise InvariantError(f"ratio {r.ratio} above 1 ({r.env}/{r.task_name}, seed {r.seed})")


def rows_to_csv(rows: Sequence[ReportRow], header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def rows_from_csv(text: str) -> List[ReportRow]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        out.append(ReportRow(
            rec["env"], rec["feature_family"], int(rec["d"]), rec["sampler"],
            float(rec["alpha"]) if rec["alpha"] else None, int(rec["K"]) if rec["K"] else None,
            int(rec["seed"]), rec["task_name"], float(rec["return"]), float(rec["oracle"]), float(rec["ratio"])))
    return out


def timings_csv(rows: Sequence[ReportRow], labels: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "seed", "task_name", "wall_ms"])
    for i, r in enumerate(rows):
        w.writerow([labels[i] if labels else "", r.seed, r.task_name, f"{r.wall_ms:.3f}"])
    return buf.getvalue()


def body(text: str) -> str:
    """CSV text without its comment header lines."""
    return "".join(ln for ln in text.splitlines(keepends=True) if not ln.startswith("#"))


@dataclass(frozen=True)
class Summary:
    value: object
    task_name: str
    n_seeds: int
    mean_ratio: float
    se_ratio: float
    mean_return: float
    se_return: float
    mean_oracle: float


def _mean_se(x: np.ndarray) -> Tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def summarize(groups: Sequence[Tuple[object, Sequence[ReportRow]]]) -> List[Summary]:
    """Mean and standard error over seeds, per task and over all tasks (``*``).

    The ``*`` row averages tasks with equal weight within each seed first.
    """
    out = []
    for value, rows in groups:
        check_rows(rows)
        seeds = sorted({r.seed for r in rows})
        tasks = list(dict.fromkeys(r.task_name for r in rows))
        for task in tasks + ["*"]:
            ratios, rets, oracles = [], [], []
            for s in seeds:
                sel = [r for r in rows if r.seed == s and (task == "*" or r.task_name == task)]
                ratios.append(np.mean([r.ratio for r in sel]))
                rets.append(np.mean([r.ret for r in sel]))
                oracles.append(np.mean([r.oracle for r in sel]))
            mr, sr = _mean_se(ratios)
            mret, sret = _mean_se(rets)
            out.append(Summary(value, task, len(seeds), mr, sr, mret, sret, float(np.mean(oracles))))
    return out


def summary_csv(axis: str, summaries: Sequence[Summary], header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGG_COLUMNS)
    for s in summaries:
        w.writerow([axis, s.value, s.task_name, s.n_seeds, repr(s.mean_ratio), repr(s.se_ratio),
                    repr(s.mean_return), repr(s.se_return), repr(s.mean_oracle)])
    return buf.getvalue()


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence, jobs: int = 1,
          bench: Optional[Workbench] = None) -> Tuple[List[ReportRow], List[Summary]]:
    """All (value, seed) cells of one axis, in a deterministic order."""
    cell_cfgs = [apply_axis(cfg, axis, v) for v in values]
    cells = [(c, s) for c in cell_cfgs for s in cfg.seeds]
    results = run_cells(cells, jobs, bench)
    rows = [r for res in results for r in res]
    per_value = [(v, [r for (c, s), res in zip(cells, results) if c is cv for r in res])
                 for v, cv in zip(values, cell_cfgs)]
    return rows, summarize(per_value)
