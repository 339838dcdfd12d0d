"""``btdz`` command line: gen-dataset | fit-btd | train | eval | sweep | validate-prop1.

Artifacts live under ``--out``. Binary and JSON artifacts get a
``.meta.json`` sidecar carrying the code version and the hash of the
configuration that produced them; CSV files carry the same stamp as a
leading ``#`` line. An existing artifact with a matching stamp is skipped
with a notice unless ``--force`` is given.

Exit codes: 0 success, 2 configuration or input error, 3 numerical error,
4 failed validation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from . import __version__
from .analysis import prop1_identity_check
from .btd import TaskVectorSet
from .config import ExperimentConfig
from .dataset import Dataset
from .engine import PolicyLibrary, train_policy_library
from .errors import BtdzError, ConfigError, DegenerateFeaturesError, InvalidArgumentError, NumericalError
from .features import build_features
from .gmm import Gmm
from .mdp import FeatureMap
from .pipeline import (Workbench, check_rows, header_line, parse_axis_values, rows_to_csv, summary_csv, sweep,
                       sampler_tag, timings_csv, uses_gmm)
from .svg import line_chart

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATE = 0, 2, 3, 4


class ValidationFailed(Exception):
    pass


class Store:
    """Artifact directory with stamps and skip-or-overwrite logic."""

    def __init__(self, root: Path, force: bool, log: Callable[[str], None]):
        self.root = root
        self.force = force
        self.log = log
        root.mkdir(parents=True, exist_ok=True)

    def path(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    @staticmethod
    def _meta(p: Path) -> Path:
        return p.with_name(p.name + ".meta.json")

    def fresh(self, p: Path, stamp: str) -> bool:
        """True when ``p`` must be (re)computed."""
        if self.force or not p.exists():
            return True
        old = self.stamp_of(p)
        if old != stamp:
            raise ConfigError(f"{p} was produced by configuration {old}, not {stamp}; rerun with --force")
        self.log(f"skip: {p} is up to date (use --force to recompute)")
        return False

    def stamp_of(self, p: Path) -> Optional[str]:
        if p.suffix == ".csv":
            first = p.read_text().split("\n", 1)[0]
            return first.rsplit("config=", 1)[-1] if "config=" in first else None
        meta = self._meta(p)
        return json.loads(meta.read_text()).get("config") if meta.exists() else None

    def write(self, p: Path, data, stamp: str, command: str) -> None:
        tmp = p.with_name(p.name + ".tmp")
        if isinstance(data, bytes):
            tmp.write_bytes(data)
        else:
            tmp.write_text(data)
        tmp.replace(p)
        if p.suffix != ".csv":
            self._meta(p).write_text(json.dumps(
                {"btdz_version": __version__, "command": command, "config": stamp}, sort_keys=True) + "\n")
        self.log(f"wrote {p}")

    def require(self, p: Path, what: str) -> Path:
        if not p.exists():
            raise ConfigError(f"missing {what}: {p} (run the producing command first)")
        return p


def _names(cfg: ExperimentConfig, seed: int) -> dict:
    stem = f"{cfg.feature_family}-d{cfg.d}-seed{seed}"
    return {
        "dataset": ("datasets", f"seed{seed}.jsonl"),
        "features": ("features", f"{stem}.json"),
        "pdata": ("pdata", f"{stem}.bin"),
        "gmm": ("gmm", f"{cfg.feature_family}-d{cfg.d}-K{cfg.btd.K}-seed{seed}.json"),
        "library": ("libraries", f"{cfg.feature_family}-d{cfg.d}-{sampler_tag(cfg)}-seed{seed}.bin"),
    }


_STAGE_FIELDS = {
    "dataset": ("env", "gamma", "dataset"),
    "features": ("env", "gamma", "dataset", "feature_family", "d"),
    "pdata": ("env", "gamma", "dataset", "feature_family", "d", "btd.n_sub", "btd.len_min", "btd.len_max"),
    "gmm": ("env", "gamma", "dataset", "feature_family", "d", "btd"),
    "library": ("env", "gamma", "dataset", "feature_family", "d", "btd", "sampler", "alpha", "library_size"),
}


def _stamp(cfg: ExperimentConfig, seed: int, stage: str) -> str:
    """Hash of exactly the settings an artifact depends on."""
    doc = cfg.to_dict()
    picked = {"seed": seed}
    for key in _STAGE_FIELDS[stage]:
        head, _, tail = key.partition(".")
        picked[key] = doc[head][tail] if tail else doc[head]
    canon = json.dumps(picked, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def cmd_gen_dataset(cfg: ExperimentConfig, store: Store, bench: Workbench, jobs: int = 1) -> List[Path]:
    out = []
    for seed in cfg.seeds:
        p = store.path(*_names(cfg, seed)["dataset"])
        stamp = _stamp(cfg, seed, "dataset")
        if store.fresh(p, stamp):
            store.write(p, bench.dataset(cfg, seed).to_jsonl(), stamp, "gen-dataset")
        out.append(p)
    return out


def _load_dataset(cfg, store, bench, seed) -> Dataset:
    ds = Dataset.load(store.require(store.path(*_names(cfg, seed)["dataset"]), "dataset"))
    try:
        ds.check_mdp(bench.mdp)
    except InvalidArgumentError as exc:
        raise ConfigError(f"dataset for seed {seed}: {exc}") from exc
    return ds


def cmd_fit_btd(cfg: ExperimentConfig, store: Store, bench: Workbench, jobs: int = 1) -> List[Path]:
    """Features, p_data and the GMM for every seed."""
    out = []
    for seed in cfg.seeds:
        names = _names(cfg, seed)
        ds = _load_dataset(cfg, store, bench, seed)
        pf, stamp = store.path(*names["features"]), _stamp(cfg, seed, "features")
        if store.fresh(pf, stamp):
            store.write(pf, bench.features(cfg, seed, dataset=ds).to_json(), stamp, "fit-btd")
        fm = FeatureMap.from_json(pf.read_text())
        pp, stamp = store.path(*names["pdata"]), _stamp(cfg, seed, "pdata")
        if store.fresh(pp, stamp):
            store.write(pp, bench.pdata(cfg, seed, dataset=ds, features=fm).to_bytes(), stamp, "fit-btd")
        pdata = TaskVectorSet.load(pp)
        pg, stamp = store.path(*names["gmm"]), _stamp(cfg, seed, "gmm")
        if store.fresh(pg, stamp):
            store.write(pg, bench.gmm(cfg, seed, pdata=pdata).to_json(), stamp, "fit-btd")
        out += [pf, pp, pg]
    return out


def cmd_train(cfg: ExperimentConfig, store: Store, bench: Workbench, jobs: int = 1) -> List[Path]:
    out = []
    for seed in cfg.seeds:
        names, stamp = _names(cfg, seed), _stamp(cfg, seed, "library")
        p = store.path(*names["library"])
        if store.fresh(p, stamp):
            fm = FeatureMap.from_json(store.require(store.path(*names["features"]), "features").read_text())
            extra = {}
            if uses_gmm(cfg):
                extra["gmm"] = Gmm.from_json(store.require(store.path(*names["gmm"]), "GMM").read_text())
            elif cfg.sampler != "uniform":
                extra["dataset"] = _load_dataset(cfg, store, bench, seed)
                if cfg.sampler == "subtrajectory":
                    extra["pdata"] = TaskVectorSet.load(store.require(store.path(*names["pdata"]), "p_data"))
            lib = train_policy_library(bench.mdp, fm, bench.task_set(cfg, seed, features=fm, **extra))
            store.write(p, lib.to_bytes(), stamp, "train")
        out.append(p)
    return out


def cmd_eval(cfg: ExperimentConfig, store: Store, bench: Workbench, jobs: int = 1) -> List[Path]:
    p = store.path("report.csv")
    if not store.fresh(p, cfg.hash()):
        return [p]
    rows = []
    for seed in cfg.seeds:
        names = _names(cfg, seed)
        lib = PolicyLibrary.load(store.require(store.path(*names["library"]), "library"))
        fm = FeatureMap.from_json(store.require(store.path(*names["features"]), "features").read_text())
        try:
            rows += bench.evaluate(cfg, seed, lib, features=fm)
        except InvalidArgumentError as exc:
            raise ConfigError(f"library for seed {seed}: {exc}") from exc
    check_rows(rows)
    store.write(p, rows_to_csv(rows, header_line(cfg, "eval")), cfg.hash(), "eval")
    tp = store.path("report-timings.csv")
    store.write(tp, header_line(cfg, "eval") + "\n" + timings_csv(rows), cfg.hash(), "eval")
    return [p, tp]


def cmd_sweep(cfg: ExperimentConfig, store: Store, bench: Workbench, axis: str, values: Sequence[str],
              jobs: int = 1, svg: bool = True) -> List[Path]:
    vals = parse_axis_values(axis, values)
    stamp = cfg.hash() + "-" + axis + "=" + ",".join(map(str, vals))
    p = store.path(f"sweep-{axis}.csv")
    if not store.fresh(p, stamp):
        return [p]
    rows, summaries = sweep(cfg, axis, vals, jobs=jobs, bench=bench)
    head = f"# btdz {__version__} command=sweep config={stamp}"
    store.write(p, rows_to_csv(rows, head), stamp, "sweep")
    pa = store.path(f"sweep-{axis}-agg.csv")
    store.write(pa, summary_csv(axis, summaries, head), stamp, "sweep")
    per_cell = len(bench.tasks)
    labels = [str(vals[i // (per_cell * len(cfg.seeds))]) for i in range(len(rows))]
    pt = store.path(f"sweep-{axis}-timings.csv")
    store.write(pt, head + "\n" + timings_csv(rows, labels), stamp, "sweep")
    out = [p, pa, pt]
    if svg:
        series = {}
        categorical = axis == "sampler"
        for i, s in enumerate(summaries):
            x = vals.index(s.value) if categorical else float(s.value)
            series.setdefault(s.task_name if s.task_name != "*" else "mean", []).append((x, s.mean_ratio, s.se_ratio))
        chart = line_chart(series, title=f"{cfg.env_label()}: oracle ratio vs {axis}", xlabel=axis,
                           ylabel="return / oracle", categorical_x=[str(v) for v in vals] if categorical else ())
        ps = store.path(f"sweep-{axis}.svg")
        store.write(ps, chart, stamp, "sweep")
        out.append(ps)
    return out


def prop1_check(cfg: ExperimentConfig, bench: Workbench, seed: int) -> dict:
    spec = cfg.prop1
    fm = build_features(spec.family, bench.mdp, spec.d, seed)
    res = prop1_identity_check(bench.mdp, fm, spec.n_z, spec.n_policies, seed, spec.n_quadratic)
    return {"env": cfg.env_label(), "seed": seed, "family": spec.family, **res}


def cmd_validate_prop1(cfg: ExperimentConfig, store: Store, bench: Workbench, jobs: int = 1) -> List[Path]:
    p = store.path("prop1.json")
    if store.fresh(p, cfg.hash()):
        checks = [prop1_check(cfg, bench, s) for s in cfg.seeds]
        doc = {"pass": all(c["identity_pass"] and c["quadratic_pass"] for c in checks), "checks": checks}
        store.write(p, json.dumps(doc, indent=2, sort_keys=True) + "\n", cfg.hash(), "validate-prop1")
    doc = json.loads(p.read_text())
    for c in doc["checks"]:
        store.log(f"prop1 seed {c['seed']}: MC {c['monte_carlo']:.6g} +- {c['standard_error']:.3g}, "
                  f"Tr/d {c['trace_over_d']:.6g}, |z| {c['z_score']:.2f}, "
                  f"quadratic error {c['quadratic_max_abs_error']:.2e}")
    store.log("prop1: PASS" if doc["pass"] else "prop1: FAIL")
    if not doc["pass"]:
        raise ValidationFailed("Prop-1 identity check failed")
    return [p]


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "fit-btd": cmd_fit_btd,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "validate-prop1": cmd_validate_prop1,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="btdz", description="Behavioral task distributions for zero-shot RL, "
                                                          "tabular experiments.")
    ap.add_argument("--version", action="version", version=f"btdz {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
        p.add_argument("--force", action="store_true", help="recompute existing artifacts")
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=["dim", "alpha", "gmm_k", "sampler"])
            p.add_argument("--values", required=True, nargs="+")
            p.add_argument("--no-svg", action="store_true")
    return ap


def _error_record(kind: str, exc: BaseException, code: int, out: Optional[str]) -> None:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, DegenerateFeaturesError):
        rec["rank"] = exc.rank
    line = json.dumps(rec, sort_keys=True)
    print(line, file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(line + "\n")
        except OSError:
            pass


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    log = lambda msg: print(msg, file=sys.stderr)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = ExperimentConfig.load(args.config)
        store = Store(Path(args.out), args.force, log)
        err = store.root / "error.json"
        if err.exists():
            err.unlink()
        bench = Workbench(cfg)
        fn = COMMANDS[args.command]
        if args.command == "sweep":
            fn(cfg, store, bench, args.axis, args.values, jobs=args.jobs, svg=not args.no_svg)
        else:
            fn(cfg, store, bench, jobs=args.jobs)
        return EXIT_OK
    except ValidationFailed as exc:
        _error_record("validation", exc, EXIT_VALIDATE, args.out)
        return EXIT_VALIDATE
    except (ConfigError, InvalidArgumentError, OSError, json.JSONDecodeError) as exc:
        _error_record("config", exc, EXIT_CONFIG, args.out)
        return EXIT_CONFIG
    except (NumericalError, DegenerateFeaturesError, BtdzError, ArithmeticError) as exc:
        _error_record("numerical", exc, EXIT_NUMERIC, args.out)
        return EXIT_NUMERIC
    except Exception as exc:  # pragma: no cover - unexpected bug
        traceback.print_exc()
        _error_record("internal", exc, 1, args.out)
        return 1


if __name__ == "__main__":
    sys.exit(main())
