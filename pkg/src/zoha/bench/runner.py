"""Experiment orchestration and deterministic CSV reporting."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ..attack import AttackSpec, run_attack
from ..fixtures import FIXTURES, resolve_classifier, synthetic_inputs
from ..functions import CATALOG, QuadraticSpec, catalog_objective, make_quadratic
from ..oracle import ObjectiveMetadata, SubprocessOracle
from ..optimizer import SolverConfig, run
from .config import ConfigError, ExperimentConfig

COLUMNS = (
    "run_id",
    "variant",
    "seed",
    "iter",
    "f_value",
    "queries",
    "dc_rounds",
    "hessian_refreshed",
    "success",
    "terminated_by",
)
THREADS_ENV = "ZOHA_THREADS"
X0_STREAM = 0x5EED


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        return n
    return min(4, os.cpu_count() or 1)


def fmt(v) -> str:
    """17 significant digits, so values survive a text round trip."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


@dataclass
class RunOutcome:
    run_id: str
    variant: str
    seed: int
    success: bool
    queries: int
    terminated_by: str
    rows: list  # CSV rows, already formatted


@dataclass
class VariantSummary:
    variant: str
    runs: int
    success_rate: float
    median_queries: Optional[float]  # successful runs only
    average_queries: Optional[float]


def summarize(outcomes: Iterable[RunOutcome], variants: Sequence[str]) -> List[VariantSummary]:
    out = []
    outcomes = list(outcomes)
    for name in variants:
        mine = [o for o in outcomes if o.variant == name]
        q = [o.queries for o in mine if o.success]
        out.append(
            VariantSummary(
                variant=name,
                runs=len(mine),
                success_rate=len(q) / len(mine) if mine else 0.0,
                median_queries=float(np.median(q)) if q else None,
                average_queries=float(np.mean(q)) if q else None,
            )
        )
    return out


def format_summary(rows: Sequence[VariantSummary], label: str = "queries") -> str:
    head = f"{'variant':<16} {'runs':>5} {'success':>8} {'median ' + label:>22} {'average ' + label:>22}"
    lines = [head, "-" * len(head)]
    for r in rows:
        med = "-" if r.median_queries is None else f"{r.median_queries:.1f}"
        avg = "-" if r.average_queries is None else f"{r.average_queries:.1f}"
        lines.append(f"{r.variant:<16} {r.runs:>5} {r.success_rate:>8.3f} {med:>22} {avg:>22}")
    return "\n".join(lines)


def _trace_rows(run_id, variant, seed, trace, success, terminated):
    return [
        [
            run_id,
            variant,
            str(seed),
            str(rec.iter),
            fmt(rec.f_value),
            str(rec.queries_cumulative),
            str(rec.dc_rounds),
            fmt(rec.hessian_refreshed),
            fmt(success),
            terminated,
        ]
        for rec in trace
    ]


# -- scenarios ---------------------------------------------------------------

class _Synthetic:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.oracle = None
        if cfg.objective in CATALOG:
            self.obj = catalog_objective(cfg.objective)
        elif cfg.objective == "quadratic":
            if not cfg.eigenvalues:
                raise ConfigError("objective = quadratic needs eigenvalues")
            spec = QuadraticSpec(sorted(cfg.eigenvalues, reverse=True), cfg.rotation_seed)
            self.obj = make_quadratic(spec)
        elif cfg.objective == "subprocess":
            if not cfg.command or not cfg.dimension:
                raise ConfigError("objective = subprocess needs command and dimension")
            self.oracle = SubprocessOracle(cfg.command, cfg.dimension)
            self.obj = self.oracle.objective()
            self.obj.metadata = ObjectiveMetadata(optimum_value=cfg.optimum_value)
        else:
            raise ConfigError(
                f"unknown objective {cfg.objective!r}; use a catalog name {sorted(CATALOG)}, 'quadratic' or 'subprocess'"
            )
        if cfg.x0 is not None and len(cfg.x0) != self.obj.dimension:
            raise ConfigError(f"x0 has {len(cfg.x0)} entries, objective dimension is {self.obj.dimension}")

    def x0(self, seed):
        if self.cfg.x0 is not None:
            return np.array(self.cfg.x0, dtype=float)
        center = self.obj.metadata.optimum_point
        if center is None:
            center = np.zeros(self.obj.dimension)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(X0_STREAM,)))
        return center + self.cfg.x0_scale * rng.standard_normal(self.obj.dimension)

    def jobs(self):
        for v in self.cfg.variants:
            for seed in self.cfg.seeds:
                yield (v, seed)

    def execute(self, job) -> RunOutcome:
        v, seed = job
        cfg = replace(v.solver, seed=seed, target=self.cfg.target)
        res = run(self.obj, self.x0(seed), cfg)
        ok = res.terminated_by == "accuracy"
        run_id = f"{v.name}/s{seed}"
        rows = _trace_rows(run_id, v.name, seed, res.trace, ok, res.terminated_by)
        return RunOutcome(run_id, v.name, seed, ok, res.queries, res.terminated_by, rows)

    def close(self):
        if self.oracle is not None:
            self.oracle.close()


def attack_label(cfg: ExperimentConfig, true_label: int, n_classes: int) -> int:
    if cfg.mode == "untargeted":
        return int(true_label)
    if cfg.target_label is not None:
        return cfg.target_label
    return (int(true_label) + 1) % n_classes


class _Attack:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = resolve_classifier(cfg.classifier)
        if str(cfg.classifier) in FIXTURES:
            self.inputs, self.labels = synthetic_inputs(cfg.classifier, cfg.n_inputs, cfg.input_seed)
        else:
            # custom classifier: uniform inputs, labelled by the model itself
            rng = np.random.default_rng(np.random.SeedSequence(cfg.input_seed, spawn_key=(X0_STREAM,)))
            self.inputs = rng.uniform(0.0, 1.0, (cfg.n_inputs, self.model.input_dim))
            self.labels = np.array([self.model.predict(x) for x in self.inputs])

    def jobs(self):
        for v in self.cfg.variants:
            for seed in self.cfg.seeds:
                for i in range(len(self.inputs)):
                    yield (v, seed, i)

    def execute(self, job) -> RunOutcome:
        v, seed, i = job
        c = self.cfg
        spec = AttackSpec(
            c.mode,
            attack_label(c, self.labels[i], self.model.n_classes),
            c.epsilon,
            omega=c.omega,
            query_cap=c.query_cap,
        )
        solver = replace(v.solver, seed=seed * 1_000_003 + i)
        res = run_attack(self.model, self.inputs[i], spec, solver)
        run_id = f"{v.name}/s{seed}/i{i:04d}"
        rows = _trace_rows(run_id, v.name, seed, res.trace, res.success, res.terminated_by)
        return RunOutcome(run_id, v.name, seed, res.success, res.queries_used, res.terminated_by, rows)

    def close(self):
        pass


@dataclass
class ExperimentResult:
    outcomes: List[RunOutcome]
    summary: List[VariantSummary]
    csv_text: str
    label: str = "queries"

    def summary_text(self) -> str:
        return format_summary(self.summary, self.label)


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None, write: bool = True) -> ExperimentResult:
    """Run every (variant, seed[, input]) job and build the canonical CSV.

    Jobs may finish in any order; rows are emitted sorted by variant,
    seed, run and iteration so the file depends only on the config.
    """
    scenario = _Synthetic(cfg) if cfg.scenario == "synthetic" else _Attack(cfg)
    threads = threads or default_threads()
    if cfg.scenario == "synthetic" and scenario.oracle is not None:
        threads = 1  # one pipe, one process
    try:
        jobs = list(scenario.jobs())
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                outcomes = list(pool.map(scenario.execute, jobs))
        else:
            outcomes = [scenario.execute(j) for j in jobs]
    finally:
        scenario.close()

    outcomes.sort(key=lambda o: (o.variant, o.seed, o.run_id))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for o in outcomes:
        w.writerows(o.rows)
    text = buf.getvalue()
    if write and cfg.output:
        try:
            with open(cfg.output, "w", newline="") as fh:
                fh.write(text)
        except OSError as e:
            raise OSError(f"cannot write {cfg.output}: {e.strerror}") from None
    label = "queries"
    if cfg.scenario == "synthetic" and cfg.target is not None:
        label = f"queries to {cfg.target:g}"
    return ExperimentResult(outcomes, summarize(outcomes, [v.name for v in cfg.variants]), text, label)


def summary_from_csv(text: str) -> dict:
    """variant -> (runs, successes, sorted success query counts), from CSV alone."""
    last = {}
    for row in csv.DictReader(io.StringIO(text)):
        last[row["run_id"]] = row
    out = {}
    for row in last.values():
        runs, succ, q = out.get(row["variant"], (0, 0, []))
        ok = row["success"] == "1"
        out[row["variant"]] = (runs + 1, succ + ok, sorted(q + [int(row["queries"])] if ok else q))
    return out


# -- step-size tuning ----------------------------------------------------------

class _Diverged(Exception):
    pass


def queries_to_target(obj, x0, cfg: SolverConfig, blowup: float = 100.0) -> float:
    """Queries until ``cfg.target`` is met; inf if the run fails or f exceeds blowup * f(x0)."""
    f0 = []

    def guard(t, x, fx):
        if not f0:
            f0.append(fx)
        elif fx > blowup * f0[0]:
            raise _Diverged
        return False

    try:
        res = run(obj, x0, cfg, callback=guard)
    except _Diverged:
        return math.inf
    return float(res.queries) if res.terminated_by == "accuracy" else math.inf


def tune_step(obj, base: SolverConfig, etas: Sequence[float], x0s: Sequence, seeds: Sequence[int]):
    """Pick the fixed step with the lowest median queries-to-target.

    Returns ``(best_eta, {eta: median})``. Runs that diverge count as inf.
    """
    table = {}
    for eta in etas:
        q = [queries_to_target(obj, x0, replace(base, eta=float(eta), seed=s)) for x0, s in zip(x0s, seeds)]
        table[float(eta)] = float(np.median(q))
    best = min(table, key=lambda e: (table[e], -e))
    return best, table
