"""End-to-end preprocessing and solve, and the batch benchmark harness.

Variants:
  Plain  solve the problem as given;
  MC     chordal extension, clique tree, clique-wise reformulation, solve,
         recover the original-pattern entries;
  MCFR   MC followed by facial reduction of the decomposed problem, then
         solve, lift back to the decomposed space and recover.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .chordal import build_clique_tree
from .decomposition import DecompositionError, decompose, recover_solution
from .facial import CertificateMode, EPS_RANK, lift_solution, reduce_loop
from .ipm import IpmOptions, SolverTimeout, solve
from .problem import SdpaFormatError, SdpProblem, SolverResult, Status, evaluate, read_sdpa

log = logging.getLogger(__name__)

TIMEOUT = "Timeout"
PARSE_ERROR = "ParseError"
ERROR = "Error"
RECORD_STATUSES = frozenset(s.value for s in Status) | {TIMEOUT, PARSE_ERROR, ERROR}

LIFT_TOL = 1e-6
AGREEMENT_TOL = 1e-5


class Variant(str, enum.Enum):
    PLAIN = "Plain"
    MC = "MC"
    MCFR = "MCFR"


@dataclass
class PipelineConfig:
    variant: Variant = Variant.MCFR
    reorder_enabled: bool = True
    fr_mode: CertificateMode = CertificateMode.DIAGONAL_LP
    merge_cliques: bool = False
    merge_threshold: int = 0
    eps_rank: float = EPS_RANK
    solver: IpmOptions = field(default_factory=IpmOptions)
    time_limit_seconds: float = 600.0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.fr_mode = CertificateMode(self.fr_mode)
        if not self.time_limit_seconds > 0:
            raise ValueError("time limit must be positive")
        if self.merge_cliques and self.merge_threshold < 1:
            raise ValueError("clique merging needs a positive size threshold")
        if not 0 < self.eps_rank < 1:
            raise ValueError("eps_rank must lie in (0, 1)")


CSV_HEADER = (
    "instance",
    "variant",
    "wall_seconds",
    "status",
    "pobj",
    "dobj",
    "iterations",
    "final_dim",
    "n_cliques",
    "fr_iterations",
)


@dataclass
class BenchRecord:
    """One (instance, variant) outcome; ``wall_seconds`` includes preprocessing.

    ``n_cliques`` is 0 for Plain and ``fr_iterations`` is 0 unless MCFR ran.
    """

    instance: str
    variant: str
    wall_seconds: float
    status: str
    pobj: float = math.nan
    dobj: float = math.nan
    iterations: int = 0
    final_dim: int = 0
    n_cliques: int = 0
    fr_iterations: int = 0

    def __post_init__(self):
        if self.wall_seconds < 0:
            raise ValueError("wall_seconds must be nonnegative")
        if self.status not in RECORD_STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        Variant(self.variant)

    @property
    def solved(self) -> bool:
        return self.status == Status.OPTIMAL.value

    def to_row(self) -> list[str]:
        d = asdict(self)
        out = []
        for name in CSV_HEADER:
            v = d[name]
            out.append(repr(float(v)) if isinstance(v, float) else str(v))
        return out

    @classmethod
    def from_row(cls, row) -> "BenchRecord":
        if isinstance(row, dict):
            row = [row[h] for h in CSV_HEADER]
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(row)}")
        kinds = {f.name: f.type for f in fields(cls)}
        vals = {}
        for name, v in zip(CSV_HEADER, row):
            kind = kinds[name]
            vals[name] = float(v) if kind == "float" else int(v) if kind == "int" else v
        return cls(**vals)


def run_pipeline(problem: SdpProblem, config: PipelineConfig | None = None,
                 name: str = "") -> tuple[SolverResult | None, np.ndarray | None, BenchRecord]:
    """Run one variant on ``problem``.

    Returns the solver result (on the problem actually solved), the
    original-space solution and the record. For MC and MCFR the solution
    carries the recovered entries on the chordal pattern only, which is all
    ``evaluate`` needs. Stage failures end up in ``record.status``.
    """
    config = config or PipelineConfig()
    name = name or problem.provenance or "problem"
    t0 = time.perf_counter()
    deadline = time.monotonic() + config.time_limit_seconds
    opts = replace(config.solver, deadline=deadline)
    variant = config.variant
    rec = dict(final_dim=problem.n, n_cliques=0, fr_iterations=0)

    def record(status, res=None, pobj=math.nan):
        return BenchRecord(
            instance=name,
            variant=variant.value,
            wall_seconds=time.perf_counter() - t0,
            status=status,
            pobj=pobj,
            dobj=res.dobj if res is not None else math.nan,
            iterations=res.iterations if res is not None else 0,
            **rec,
        )

    res = None
    try:
        if variant is Variant.PLAIN:
            res = solve(problem, opts)
            X = res.X
        else:
            structure = build_clique_tree(
                problem,
                reorder=config.reorder_enabled,
                merge_threshold=config.merge_threshold if config.merge_cliques else None,
            )
            dec = decompose(problem, structure.tree)
            rec["n_cliques"] = len(structure.tree.cliques)
            rec["final_dim"] = dec.map.total_dim
            target = dec.problem
            transform = None
            if variant is Variant.MCFR:
                fr = reduce_loop(dec.problem, config.fr_mode, config.eps_rank, opts)
                rec["fr_iterations"] = fr.iterations
                rec["final_dim"] = fr.reduced.n
                if fr.infeasible:
                    return None, None, record(Status.PRIMAL_INFEASIBLE.value)
                target, transform = fr.reduced, fr.transform
            res = solve(target, opts)
            Xd = res.X if transform is None else lift_solution(res.X, transform)
            if res.status is not Status.OPTIMAL:
                return res, None, record(res.status.value, res, res.pobj)
            try:
                # entries off the chordal pattern stay 0; evaluate never reads them
                X = recover_solution(dec.map.split(Xd), dec.map, tol=LIFT_TOL).to_dense()
            except DecompositionError as exc:
                log.warning("%s/%s: %s", name, variant.value, exc)
                return res, None, record(Status.NUMERICAL_FAILURE.value, res, res.pobj)
    except SolverTimeout:
        return res, None, record(TIMEOUT, res)
    except Exception as exc:  # the batch must go on
        log.error("%s/%s failed: %r", name, variant.value, exc)
        return res, None, record(ERROR, res)

    if res.status is not Status.OPTIMAL:
        return res, X, record(res.status.value, res, res.pobj)
    obj, resid = evaluate(problem, X)
    worst = float(np.max(np.abs(resid), initial=0.0))
    if worst > LIFT_TOL * (1.0 + float(np.max(np.abs(problem.b), initial=0.0))):
        log.warning("%s/%s: original-space residual %.3e", name, variant.value, worst)
        return res, X, record(Status.NUMERICAL_FAILURE.value, res, obj)
    return res, X, record(Status.OPTIMAL.value, res, obj)


# -- batch ---------------------------------------------------------------------

def instance_files(instance_dir) -> list[Path]:
    return sorted(p for p in Path(instance_dir).iterdir() if p.is_file() and p.name.endswith(".dat-s"))


def _run_instance(path, configs, sense, default_sense) -> list[BenchRecord]:
    name = Path(path).name
    try:
        problem = read_sdpa(path, sense=sense, default_sense=default_sense)
    except (SdpaFormatError, OSError, ValueError) as exc:
        log.error("%s: %s", name, exc)
        return [BenchRecord(name, c.variant.value, 0.0, PARSE_ERROR) for c in configs]
    return [run_pipeline(problem, c, name)[2] for c in configs]


def bench(instance_dir, configs: Iterable[PipelineConfig], out: TextIO, workers: int = 1,
          sense: str | None = None, default_sense: str = "max") -> list[BenchRecord]:
    """Run every config on every ``.dat-s`` file, writing CSV rows to ``out``.

    Rows are flushed after each instance. With ``workers > 1`` instances run
    in a process pool; this process stays the only writer.
    """
    configs = list(configs)
    paths = instance_files(instance_dir)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    out.flush()
    records: list[BenchRecord] = []

    def emit(batch):
        for r in batch:
            writer.writerow(r.to_row())
        out.flush()
        records.extend(batch)

    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(paths), os.cpu_count() or 1)) as pool:
            futures = [pool.submit(_run_instance, p, configs, sense, default_sense) for p in paths]
            for fut in futures:
                emit(fut.result())
    else:
        for p in paths:
            emit(_run_instance(p, configs, sense, default_sense))
    return records


def read_records(stream: TextIO) -> list[BenchRecord]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header!r}")
    return [BenchRecord.from_row(row) for row in reader]


def agreement_violations(records: Iterable[BenchRecord], tol: float = AGREEMENT_TOL) -> list[tuple]:
    """Pairs of Optimal records on one instance whose objectives disagree."""
    by_inst: dict[str, list[BenchRecord]] = {}
    for r in records:
        if r.solved:
            by_inst.setdefault(r.instance, []).append(r)
    bad = []
    for inst, rs in by_inst.items():
        for i, a in enumerate(rs):
            for b in rs[i + 1:]:
                if abs(a.pobj - b.pobj) > tol * (1.0 + abs(a.pobj)):
                    bad.append((inst, a.variant, b.variant, a.pobj, b.pobj))
    return bad


def performance_profile(records: Iterable[BenchRecord]) -> dict[str, list[tuple[float, float]]]:
    """Dolan-More curves: per variant, ``(tau, fraction of instances solved
    within tau times the best time)`` at every breakpoint.

    An instance nobody solved counts against every variant.
    """
    records = list(records)
    variants = sorted({r.variant for r in records})
    instances = sorted({r.instance for r in records})
    times = {(r.instance, r.variant): r.wall_seconds for r in records if r.solved}
    ratios = {v: [] for v in variants}
    for inst in instances:
        solved = [times[(inst, v)] for v in variants if (inst, v) in times]
        best = min(solved) if solved else math.nan
        for v in variants:
            t = times.get((inst, v))
            if t is None:
                ratios[v].append(math.inf)
            else:
                ratios[v].append(t / best if best > 0 else 1.0)
    curves = {}
    total = len(instances)
    for v in variants:
        finite = sorted(x for x in ratios[v] if math.isfinite(x))
        taus = sorted(set([1.0] + finite))
        curves[v] = [(tau, sum(x <= tau for x in finite) / total if total else 0.0) for tau in taus]
    return curves


SUMMARY_HEADER = ("variant", "solved", "instances", "tau", "fraction")


def write_summary(records: Iterable[BenchRecord], out: TextIO) -> None:
    records = list(records)
    instances = len({r.instance for r in records})
    solved = {}
    for r in records:
        solved[r.variant] = solved.get(r.variant, 0) + int(r.solved)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for v, curve in performance_profile(records).items():
        for tau, frac in curve:
            writer.writerow([v, solved.get(v, 0), instances, repr(tau), repr(frac)])
