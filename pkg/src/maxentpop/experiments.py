"""Experiment recipes at desk scale.

A *cell* is one solver run on one instance: ``(instance descriptor, method,
solver config, seed)``. Every cell yields a :class:`ResultRecord` that echoes
all of those, so :func:`replay` can rerun it from the record alone.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import io
from .errors import EnumerationInfeasibleError, InvalidInputError
from .exact import DEFAULT_MAX_ENUM, EnumeratedModel, solve_exact
from .generators import (
    PlantedFamilySpec,
    a0_spec,
    a1a_spec,
    a1c_ternary_spec,
    a2_spec,
    planted_family_generate,
    synistat_spec,
    synistat_split,
    synistat_targets,
    wu_generate,
)
from .metrics import diversity, heldout_mre, kl_to_truth, lorenz_curve
from .model import ConstraintSet
from .pcd import PcdConfig, fit_pcd
from .raking import RakeConfig, draw_initial_sample, rake

log = logging.getLogger(__name__)

EXPERIMENTS = (
    "a0",
    "a1a",
    "a1b",
    "a1c",
    "a2",
    "istat-full",
    "istat-heldout",
    "istat-diversity",
    "istat-poolsize",
)
METHODS = ("exact", "pcd", "raking")
OUT_ENV = "MAXENTPOP_OUT"
DEFAULT_OUT = "runs"
# KL against the exact MaxEnt fit is computed automatically only below this size.
KL_AUTO_LIMIT = 10**6
RECORD_COLUMNS = ("experiment", "instance", "method", "seed", "wall_seconds", "stop_reason", "config", "metrics")


@dataclass
class ResultRecord:
    experiment: str
    instance: dict
    method: str
    config: dict
    metrics: dict
    wall_seconds: float
    stop_reason: str
    seed: int

    def to_row(self) -> dict:
        return {
            "experiment": self.experiment,
            "instance": json.dumps(self.instance, sort_keys=True),
            "method": self.method,
            "seed": self.seed,
            "wall_seconds": repr(float(self.wall_seconds)),
            "stop_reason": self.stop_reason,
            "config": json.dumps(self.config, sort_keys=True),
            "metrics": json.dumps(self.metrics, sort_keys=True),
        }

    @classmethod
    def from_row(cls, row: dict) -> ResultRecord:
        return cls(
            experiment=row["experiment"],
            instance=json.loads(row["instance"]),
            method=row["method"],
            config=json.loads(row["config"]),
            metrics=json.loads(row["metrics"]),
            wall_seconds=float(row["wall_seconds"]),
            stop_reason=row["stop_reason"],
            seed=int(row["seed"]),
        )


def write_records(path, records, preamble: dict | None = None) -> Path:
    return io.write_rows(path, RECORD_COLUMNS, [r.to_row() for r in records], preamble)


def read_records(path) -> list[ResultRecord]:
    return [ResultRecord.from_row(r) for r in io.read_rows(path)]


@dataclass
class ExperimentConfig:
    experiment: str
    pool_sizes: list[int] | None = None
    sweeps: list[int] | None = None
    Ks: list[int] | None = None
    n_data: int | None = None
    learning_rate: float | None = None
    max_iters: int | None = None
    seed: int = 0
    out: str | None = None
    max_enum: float = DEFAULT_MAX_ENUM
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidInputError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        for name in ("pool_sizes", "sweeps", "Ks"):
            values = getattr(self, name)
            if values is not None and (not values or any(int(v) < 1 for v in values)):
                raise InvalidInputError(f"{name} must be a non-empty list of positive integers")
        if self.Ks is not None and any(k < 3 for k in self.Ks):
            raise InvalidInputError("K must be >= 3 for ternary instances")
        if self.n_data is not None and self.n_data < 1:
            raise InvalidInputError("n_data must be >= 1")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise InvalidInputError("learning rate must be > 0")
        if self.threads < 1:
            raise InvalidInputError("threads must be >= 1")


# ---------------------------------------------------------------- instances


@dataclass
class Instance:
    desc: dict
    cs: ConstraintSet
    truth_lam: np.ndarray | None = None  # planted lambda*, when known
    heldout: ConstraintSet | None = None
    extra: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return json.dumps(self.desc, sort_keys=True)


def _planted_a1b(seed: int) -> PlantedFamilySpec:
    return PlantedFamilySpec((3,) * 6, 20, arity=2, seed=seed)


@lru_cache(maxsize=32)
def _build(key: str) -> Instance:
    desc = json.loads(key)
    name = desc.get("name")
    seed = int(desc.get("seed", 0))
    n_data = desc.get("n_data")
    kw = {} if n_data is None else {"n_data": int(n_data)}
    if "file" in desc:
        return Instance(desc, io.read_constraint_set(desc["file"]))
    if name == "a0":
        return Instance(desc, wu_generate(a0_spec(seed, **kw))[0])
    if name in ("a1a", "a1c-binary"):
        return Instance(desc, wu_generate(a1a_spec(seed, **kw))[0])
    if name == "a1c-ternary":
        return Instance(desc, wu_generate(a1c_ternary_spec(seed, **kw))[0])
    if name == "a2":
        return Instance(desc, wu_generate(a2_spec(int(desc["K"]), seed, **kw))[0])
    if name == "a1b":
        cs, lam_star = planted_family_generate(_planted_a1b(seed))
        return Instance(desc, cs, truth_lam=lam_star)
    if name == "synistat":
        full = synistat_targets(synistat_spec())
        split = desc.get("split", "full")
        if split == "full":
            return Instance(desc, full)
        if split == "train":
            train, held = synistat_split(full)
            return Instance(desc, train, heldout=held)
        raise InvalidInputError(f"unknown synistat split {split!r}")
    raise InvalidInputError(f"unknown instance {desc!r}")


def build_instance(desc: dict) -> Instance:
    return _build(json.dumps(desc, sort_keys=True))


@lru_cache(maxsize=32)
def _truth(key: str, max_enum: float) -> EnumeratedModel | None:
    """Reference distribution for KL: planted lambda*, or the exact MaxEnt fit."""
    inst = _build(key)
    if inst.cs.schema.space_size > min(max_enum, KL_AUTO_LIMIT):
        return None
    lam = inst.truth_lam
    if lam is None:
        lam = solve_exact(inst.cs, max_enum=max_enum).lam
    return EnumeratedModel(inst.cs, lam, max_enum)


# -------------------------------------------------------------------- cells


def _pcd_config(config: dict) -> PcdConfig:
    keys = ("pool_size", "sweeps", "learning_rate", "max_iters", "window", "tau", "seed", "threads")
    return PcdConfig(**{k: config[k] for k in keys if k in config})


def default_config(method: str, cs: ConstraintSet, seed: int = 0, **overrides) -> dict:
    """Full solver config for a cell; ``None`` overrides are ignored."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if method == "exact":
        cfg = {"tol": 1e-6, "max_iters": 1000, "max_enum": DEFAULT_MAX_ENUM}
    elif method == "pcd":
        rec = PcdConfig.recommended(cs, seed=seed)
        cfg = {
            "pool_size": rec.pool_size,
            "sweeps": rec.sweeps,
            "learning_rate": rec.learning_rate,
            "max_iters": rec.max_iters,
            "window": rec.window,
            "tau": rec.tau,
            "seed": seed,
            "threads": rec.threads,
        }
    elif method == "raking":
        cfg = {"pool_size": 25_000, "max_cycles": 200, "tol": 1e-6, "seed": seed}
    else:
        raise InvalidInputError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    unknown = set(overrides) - set(cfg) - {"max_enum"}
    if unknown:
        raise InvalidInputError(f"options {sorted(unknown)} do not apply to method {method!r}")
    cfg.update({k: v for k, v in overrides.items() if k in cfg})
    return cfg


def _population_metrics(inst: Instance, states, weights=None) -> dict:
    rep = diversity(states, weights)
    out = {
        "n_eff": rep.n_eff,
        "n_eff_ratio": rep.n_eff_ratio,
        "entropy": rep.entropy,
        "unique_profiles": rep.unique_profiles,
        "unique_support": rep.unique_support,
        "unique_eps_support": rep.unique_eps_support,
        "gini": rep.gini,
    }
    if inst.heldout is not None:
        out["heldout_mre"] = heldout_mre(states, inst.heldout, weights)
    return out


def run_cell(
    experiment: str, desc: dict, method: str, config: dict, seed: int, max_enum: float = DEFAULT_MAX_ENUM
) -> tuple[ResultRecord, dict]:
    """Run one solver on one instance. Returns the record and artifacts
    (trace rows, lambda, population) for the caller to persist."""
    inst = build_instance(desc)
    cs = inst.cs
    start = time.perf_counter()
    metrics: dict = {"m": cs.m, "log10_space": cs.schema.log10_space_size}
    artifacts: dict = {}
    if method == "exact":
        sol = solve_exact(cs, tol=config["tol"], max_iters=config["max_iters"], max_enum=config.get("max_enum", max_enum))
        metrics.update(mre=sol.mre, iterations=sol.iterations, grad_inf_norm=sol.grad_inf_norm, objective=sol.objective)
        if inst.truth_lam is not None:
            metrics["rel_lambda_err"] = _rel_err(sol.lam, inst.truth_lam)
        stop = "diverged" if sol.diverged else ("converged" if sol.converged else "max_iters")
        artifacts.update(lam=sol.lam, trace=(sol.TRACE_COLUMNS, sol.trace))
    elif method == "pcd":
        res = fit_pcd(cs, config=_pcd_config(config))
        metrics.update(mre=res.final_mre, iterations=res.iterations)
        metrics.update(_population_metrics(inst, res.pool.states))
        truth = _truth(inst.label, max_enum)
        metrics["kl"] = None if truth is None else kl_to_truth(truth, res.lam, cs)
        ref = inst.truth_lam if inst.truth_lam is not None else (truth.lam if truth is not None else None)
        metrics["rel_lambda_err"] = None if ref is None else _rel_err(res.lam, ref)
        stop = res.stop_reason
        artifacts.update(lam=res.lam, trace=(res.trace.COLUMNS, res.trace.rows()), states=res.pool.states)
    elif method == "raking":
        sample = draw_initial_sample(cs.schema, int(config["pool_size"]), int(config["seed"]))
        out, rep = rake(sample, cs, config=RakeConfig(max_cycles=config["max_cycles"], tol=config["tol"]))
        metrics.update(
            mre=rep.final_mre,
            iterations=rep.cycles,
            max_rel_error=rep.max_rel_error,
            infeasible_on_sample=rep.infeasible_on_sample,
            monotone_violations=rep.monotone_violations,
        )
        metrics.update(_population_metrics(inst, out.states, out.weights))
        stop = "diverged" if rep.diverged else ("converged" if rep.converged else "max_cycles")
        trace_rows = [{"cycle": i + 1, "mre": v} for i, v in enumerate(rep.mre_history)]
        artifacts.update(trace=(("cycle", "mre"), trace_rows), states=out.states, weights=out.weights)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    seconds = time.perf_counter() - start
    rec = ResultRecord(experiment, dict(desc), method, dict(config), _clean(metrics), seconds, stop, int(seed))
    return rec, artifacts


def replay(record: ResultRecord, max_enum: float = DEFAULT_MAX_ENUM) -> ResultRecord:
    rec, _ = run_cell(record.experiment, record.instance, record.method, record.config, record.seed, max_enum)
    return rec


def _rel_err(lam, ref) -> float:
    ref = np.asarray(ref)
    return float(np.linalg.norm(np.asarray(lam) - ref) / np.linalg.norm(ref))


def _clean(value):
    """Plain JSON types (numpy scalars to Python)."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


# ---------------------------------------------------------------- run dirs


def output_root(out: str | None = None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def make_run_dir(root, name: str, seed: int) -> Path:
    """Fresh directory ``<name>_<UTC timestamp>_s<seed>``; never reuses one."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = f"{name}_{stamp}_s{seed}"
    for i in range(1000):
        path = root / (base if i == 0 else f"{base}-{i}")
        try:
            path.mkdir()
            return path
        except FileExistsError:
            continue
    raise RuntimeError(f"could not create a fresh run directory under {root}")


# ------------------------------------------------------------------- grids


@dataclass
class Cell:
    desc: dict
    method: str
    overrides: dict
    row: dict  # fixed columns of the summary table


def _grid(cfg: ExperimentConfig) -> tuple[list[Cell], list[str]]:
    """Cells of an experiment and the summary-table columns."""
    seed = cfg.seed
    nd = {"n_data": cfg.n_data} if cfg.n_data else {}
    lr, iters = cfg.learning_rate, cfg.max_iters
    common = {"max_iters": iters, "threads": cfg.threads}
    cells: list[Cell] = []
    e = cfg.experiment

    def pcd(desc, n, s, eta, row):
        cells.append(Cell(desc, "pcd", {"pool_size": n, "sweeps": s, "learning_rate": lr or eta, **common}, row))

    if e == "a0":
        desc = {"name": "a0", "seed": 1 + seed, **nd}
        cells.append(Cell(desc, "exact", {}, {"method": "exact", "N": ""}))
        for n in cfg.pool_sizes or [500, 2000, 10000]:
            for s in cfg.sweeps or [3]:
                pcd(desc, n, s, 0.05, {"method": "gibbs", "N": n, "s": s})
        cols = ["method", "N", "s", "mre", "rel_lambda_err", "kl", "wall_seconds"]
    elif e in ("a1a", "a1b"):
        desc = {"name": e, "seed": seed, **nd} if e == "a1a" else {"name": "a1b", "seed": seed}
        default_n = [1000, 5000, 20000] if e == "a1a" else [1000, 10000, 50000]
        cells.append(Cell(desc, "exact", {}, {"method": "exact", "N": "", "s": ""}))
        for n in cfg.pool_sizes or default_n:
            for s in cfg.sweeps or [5]:
                pcd(desc, n, s, 0.05 if e == "a1a" else 0.01, {"method": "gibbs", "N": n, "s": s})
        cols = ["method", "N", "s", "mre", "rel_lambda_err", "kl", "wall_seconds"]
    elif e == "a1c":
        for block in ("a1c-binary", "a1c-ternary"):
            desc = {"name": block, "seed": seed, **nd}
            cells.append(Cell(desc, "exact", {}, {"block": block, "method": "exact", "N": "", "s": ""}))
            for n in cfg.pool_sizes or [1000, 5000]:
                for s in cfg.sweeps or [1, 5]:
                    pcd(desc, n, s, 0.05, {"block": block, "method": "gibbs", "N": n, "s": s})
        cols = ["block", "method", "N", "s", "mre", "wall_seconds"]
    elif e == "a2":
        n = (cfg.pool_sizes or [20000])[0]
        s = (cfg.sweeps or [5])[0]
        for K in cfg.Ks or [12, 20]:
            desc = {"name": "a2", "K": K, "seed": seed, **nd}
            cells.append(Cell(desc, "exact", {"max_enum": cfg.max_enum}, {"K": K, "method": "exact"}))
            pcd(desc, n, s, 0.01, {"K": K, "method": "gibbs"})
            cells.append(Cell(desc, "raking", {"pool_size": n}, {"K": K, "method": "raking"}))
        cols = ["K", "method", "log10_space", "mre", "wall_seconds", "n_eff", "n_eff_ratio", "entropy"]
    elif e in ("istat-full", "istat-heldout", "istat-diversity"):
        split = "train" if e == "istat-heldout" else "full"
        desc = {"name": "synistat", "split": split}
        n = (cfg.pool_sizes or [20000])[0]
        s = (cfg.sweeps or [5])[0]
        pcd(desc, n, s, 0.01, {"method": "gibbs", "N": n})
        cells.append(Cell(desc, "raking", {"pool_size": n}, {"method": "raking", "N": n}))
        cols = {
            "istat-full": ["method", "N", "mre", "iterations", "wall_seconds"],
            "istat-heldout": ["method", "mre", "heldout_T1", "heldout_T2", "heldout_T3"],
            "istat-diversity": ["method", "n_eff", "n_eff_ratio", "entropy", "unique_profiles", "unique_eps_support", "gini"],
        }[e]
    else:  # istat-poolsize
        desc = {"name": "synistat", "split": "full"}
        sizes = cfg.pool_sizes or [5000, 10000, 25000]
        for n in sizes:
            pcd(desc, n, (cfg.sweeps or [5])[0], 0.01, {"method": "gibbs", "N": n})
        cells.append(Cell(desc, "raking", {"pool_size": max(sizes)}, {"method": "raking", "N": max(sizes)}))
        cols = ["method", "N", "mre", "iterations", "wall_seconds"]
    return cells, cols


def grid_size(cfg: ExperimentConfig) -> int:
    return len(_grid(cfg)[0])


def _summary_row(cell: Cell, rec: ResultRecord | None, cols: list[str], error: str = "") -> dict:
    row = {c: "" for c in cols}
    row.update({k: v for k, v in cell.row.items() if k in row})
    if rec is not None:
        for c in cols:
            if c in cell.row:
                continue
            if c == "wall_seconds":
                row[c] = rec.wall_seconds
            elif c.startswith("heldout_"):
                row[c] = rec.metrics.get("heldout_mre", {}).get(c.split("_", 1)[1], "")
            elif rec.metrics.get(c) is not None:
                row[c] = rec.metrics[c]
    row["status"] = error or (rec.stop_reason if rec else "")
    return row


def run_experiment(cfg: ExperimentConfig, progress=None) -> Path:
    """Execute the grid; each cell's failure is recorded and the grid continues."""
    run_dir = make_run_dir(output_root(cfg.out), cfg.experiment, cfg.seed)
    (run_dir / "traces").mkdir()
    cells, cols = _grid(cfg)
    preamble = {"experiment_config": _clean(cfg.__dict__)}
    records, table = [], []
    for i, cell in enumerate(cells):
        tag = f"{i:02d}_{cell.method}"
        try:
            inst = build_instance(cell.desc)
            config = default_config(cell.method, inst.cs, cfg.seed, **cell.overrides)
            if cell.method == "exact":
                config["max_enum"] = cfg.max_enum
            rec, art = run_cell(cfg.experiment, cell.desc, cell.method, config, cfg.seed, cfg.max_enum)
        except EnumerationInfeasibleError as exc:
            log.info("cell %s skipped: %s", tag, exc)
            table.append(_summary_row(cell, None, cols, "not enumerable"))
            continue
        except Exception as exc:  # partial failure: record and continue
            log.exception("cell %s failed", tag)
            table.append(_summary_row(cell, None, cols, f"error: {exc}"))
            continue
        records.append(rec)
        table.append(_summary_row(cell, rec, cols))
        columns, rows = art["trace"]
        io.write_rows(run_dir / "traces" / f"{tag}.csv", columns, rows, {"instance": rec.instance, "config": rec.config})
        if cfg.experiment == "istat-diversity" and "states" in art:
            w = art.get("weights")
            x, y = lorenz_curve(np.full(len(art["states"]), 1.0 / len(art["states"])) if w is None else w)
            io.write_rows(
                run_dir / f"lorenz_{cell.method}.csv",
                ("population_share", "weight_share"),
                ({"population_share": float(a), "weight_share": float(b)} for a, b in zip(x, y)),
            )
        if progress:
            progress(rec)
    write_records(run_dir / "results.csv", records, preamble)
    io.write_rows(run_dir / "table.csv", cols + ["status"], table, preamble)
    return run_dir

