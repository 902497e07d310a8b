"""Desk-scale benchmark harness.

Each suite times one operation family against synthetic wide-integer
workloads and reports elapsed wall time together with the scan counters
(files opened, fragments pruned, rows decoded) collected during reads.
"""

from __future__ import annotations

import csv
import random
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO

from . import model as m
from .db import Database
from .query import Compare
from .storage import NormalizeConfig

DEFAULT_SIZES: tuple[int, ...] = (100, 1_000, 10_000, 100_000)
DEFAULT_NUM_COLS = 100
VALUE_RANGE = 1_000_000
# Planted outside the random value range so fragment stats can prune it.
NEEDLE_VALUE = 2_000_000

CSV_HEADER = (
    "operation",
    "num_rows",
    "elapsed_seconds",
    "files_opened",
    "fragments_pruned",
    "rows_decoded",
)


@dataclass(frozen=True)
class WorkloadSpec:
    """Shape of a synthetic benchmark dataset."""

    num_rows: int
    num_cols: int = DEFAULT_NUM_COLS
    seed: int = 0


@dataclass
class BenchResult:
    """One timed measurement."""

    operation: str
    num_rows: int
    elapsed_seconds: float
    files_opened: int = 0
    fragments_pruned: int = 0
    rows_decoded: int = 0

    def as_row(self) -> tuple:
        return (
            self.operation,
            self.num_rows,
            f"{self.elapsed_seconds:.6f}",
            self.files_opened,
            self.fragments_pruned,
            self.rows_decoded,
        )


def generate_workload(spec: WorkloadSpec) -> m.CanonicalTable:
    """Build a table of ``num_cols`` Int64 columns of uniform random values."""
    rng = random.Random(spec.seed)
    names = [f"col{i}" for i in range(spec.num_cols)]
    columns = {
        name: [rng.randint(0, VALUE_RANGE) for _ in range(spec.num_rows)]
        for name in names
    }
    fields = [m.FieldDescriptor(name, m.INT64) for name in names]
    schema = m.Schema.of(fields)
    return m.CanonicalTable(schema, [columns[f.name] for f in schema.fields])


def _fresh_db(root: Path, spec: WorkloadSpec, tag: str) -> Database:
    path = root / f"bench_{tag}_{spec.num_rows}"
    if path.exists():
        shutil.rmtree(path)
    return Database(path)


def _timed(fn) -> float:
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


def _scan_result(db: Database, operation: str, num_rows: int, elapsed: float) -> BenchResult:
    scan = db.scan_stats
    return BenchResult(
        operation=operation,
        num_rows=num_rows,
        elapsed_seconds=elapsed,
        files_opened=scan.files_opened,
        fragments_pruned=scan.fragments_pruned,
        rows_decoded=scan.rows_decoded,
    )


def run_create_read_suite(
    root: Path,
    sizes: Sequence[int] = DEFAULT_SIZES,
    num_cols: int = DEFAULT_NUM_COLS,
    seed: int = 0,
) -> list[BenchResult]:
    """Time bulk create, a single-column read, and a full-table read."""
    results: list[BenchResult] = []
    for n in sizes:
        spec = WorkloadSpec(num_rows=n, num_cols=num_cols, seed=seed)
        table = generate_workload(spec)
        db = _fresh_db(root, spec, "create_read")
        elapsed = _timed(lambda: db.create(table))
        results.append(BenchResult("create", n, elapsed))

        elapsed = _timed(lambda: db.read(columns=["col0"]))
        results.append(_scan_result(db, "read_one_column", n, elapsed))

        elapsed = _timed(lambda: db.read())
        results.append(_scan_result(db, "read_full", n, elapsed))
    return results


def run_needle_suite(
    root: Path,
    sizes: Sequence[int] = DEFAULT_SIZES,
    num_cols: int = DEFAULT_NUM_COLS,
    seed: int = 0,
    max_rows_per_file: Optional[int] = None,
) -> list[BenchResult]:
    """Plant one sentinel row, normalize into fragments, time the lookup."""
    results: list[BenchResult] = []
    for n in sizes:
        spec = WorkloadSpec(num_rows=n, num_cols=num_cols, seed=seed)
        table = generate_workload(spec)
        db = _fresh_db(root, spec, "needle")
        db.create(table)
        needle_id = n // 2
        db.update([{"id": needle_id, "col0": NEEDLE_VALUE}])
        cap = max_rows_per_file or max(1, n // 10)
        db.normalize(NormalizeConfig(max_rows_per_file=cap))

        found: list[m.CanonicalTable] = []
        elapsed = _timed(
            lambda: found.append(
                db.read(filters=[Compare("col0", "==", NEEDLE_VALUE)])
            )
        )
        if found[0].row_count != 1:
            raise AssertionError(
                f"needle query returned {found[0].row_count} rows, expected 1"
            )
        results.append(_scan_result(db, "needle_query", n, elapsed))
    return results


def run_update_suite(
    root: Path,
    sizes: Sequence[int] = DEFAULT_SIZES,
    num_cols: int = DEFAULT_NUM_COLS,
    seed: int = 0,
    update_fraction: float = 0.01,
) -> list[BenchResult]:
    """Time an id-keyed update touching a small fraction of the rows."""
    results: list[BenchResult] = []
    rng = random.Random(seed + 1)
    for n in sizes:
        spec = WorkloadSpec(num_rows=n, num_cols=num_cols, seed=seed)
        table = generate_workload(spec)
        db = _fresh_db(root, spec, "update")
        db.create(table)
        k = max(1, int(n * update_fraction))
        targets = rng.sample(range(n), k)
        payload = [{"id": i, "col0": rng.randint(0, VALUE_RANGE)} for i in targets]
        elapsed = _timed(lambda: db.update(payload))
        results.append(BenchResult("update", n, elapsed))
    return results


SUITES = {
    "create-read": run_create_read_suite,
    "needle": run_needle_suite,
    "update": run_update_suite,
}


def run_suite(
    name: str,
    root: Optional[Path] = None,
    sizes: Sequence[int] = DEFAULT_SIZES,
    num_cols: int = DEFAULT_NUM_COLS,
    seed: int = 0,
) -> list[BenchResult]:
    """Run one named suite, using a temp directory when no root is given."""
    if name not in SUITES:
        raise ValueError(f"unknown suite: {name!r}")
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        return SUITES[name](root, sizes=sizes, num_cols=num_cols, seed=seed)
    with tempfile.TemporaryDirectory(prefix="parqdb_bench_") as tmp:
        return SUITES[name](Path(tmp), sizes=sizes, num_cols=num_cols, seed=seed)


def emit_report(results: Iterable[BenchResult], out: TextIO) -> None:
    """Write results as CSV with a fixed header."""
    writer = csv.writer(out)
    writer.writerow(CSV_HEADER)
    for r in results:
        writer.writerow(r.as_row())
