"""Dataset directory management: fragments, ids, transactions, normalize.

A dataset is a directory of Parquet fragment files named
``{dataset_name}_{i}.parquet``. Transactional safety is backup-and-restore:
before a mutation, current fragments are copied to ``.tmp_backup/`` inside
the dataset directory; rollback restores them byte-for-byte.
"""

from __future__ import annotations

import math
import re
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from filelock import FileLock

from . import model as m
from . import pqio
from .errors import (
    CorruptDataset,
    IdCollision,
    IncompatibleSchemas,
    IoFailure,
    ManualRecoveryRequired,
    NestedTransaction,
    RestoreFailure,
)
from .faults import checkpoint
from .pqio import ColumnStats

BACKUP_DIRNAME = ".tmp_backup"
LOCK_FILENAME = ".lock"


@dataclass
class NormalizeConfig:
    """Tuning knobs for row redistribution across fragment files."""

    load_format: str = "table"
    batch_size: Optional[int] = None
    batch_readahead: int = 16
    fragment_readahead: int = 4
    use_threads: bool = True
    max_partitions: int = 1024
    max_open_files: int = 1024
    max_rows_per_file: int = 10000
    min_rows_per_group: int = 0
    max_rows_per_group: int = 10000

    def __post_init__(self):
        if self.load_format not in ("table", "batches"):
            raise ValueError(f"unknown load_format: {self.load_format}")
        if self.max_rows_per_file < 1:
            raise ValueError("max_rows_per_file must be >= 1")
        if not 0 <= self.min_rows_per_group <= self.effective_max_rows_per_group:
            raise ValueError(
                "need 0 <= min_rows_per_group <= max_rows_per_group <= max_rows_per_file"
            )

    @property
    def effective_max_rows_per_group(self) -> int:
        # Row groups can never exceed the file cap.
        return min(self.max_rows_per_group, self.max_rows_per_file)


@dataclass
class LoadConfig:
    """Streaming-read knobs."""

    batch_size: int = 131072
    batch_readahead: int = 16
    fragment_readahead: int = 4
    use_threads: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.batch_readahead < 0 or self.fragment_readahead < 0:
            raise ValueError("readahead counts must be >= 0")


@dataclass
class FragmentInfo:
    """One fragment file plus the footer facts used for pruning."""

    index: int
    path: Path
    row_count: int
    byte_size: int
    stats: dict[str, ColumnStats]


@dataclass
class ScanStats:
    """Observability counters for the most recent read."""

    files_opened: int = 0
    fragments_pruned: int = 0
    rows_decoded: int = 0


@dataclass
class TransactionGuard:
    backup_dir: Path
    original_files: list[Path]
    snapshot: tuple
    state: str = "open"


@dataclass
class DatasetHandle:
    """An open dataset directory."""

    db_path: Path
    dataset_name: str
    fragments: list[FragmentInfo] = dc_field(default_factory=list)
    schema: m.Schema = dc_field(default_factory=m.Schema)
    max_id: int = -1
    historical_max_id: int = -1
    scan: ScanStats = dc_field(default_factory=ScanStats)
    guard: Optional[TransactionGuard] = None

    @property
    def row_count(self) -> int:
        return sum(f.row_count for f in self.fragments)

    def fragment_path(self, index: int) -> Path:
        return self.db_path / f"{self.dataset_name}_{index}.parquet"

    def next_fragment_index(self) -> int:
        return max((f.index for f in self.fragments), default=-1) + 1

    def next_id(self) -> int:
        return max(self.max_id, self.historical_max_id) + 1

    @property
    def lock_path(self) -> Path:
        return self.db_path / LOCK_FILENAME

    @property
    def backup_path(self) -> Path:
        return self.db_path / BACKUP_DIRNAME


@contextmanager
def writer_lock(handle: DatasetHandle, timeout: float = 60.0):
    """Advisory cross-process writer lock; readers never take it."""
    lock = FileLock(str(handle.lock_path), timeout=timeout)
    with lock:
        yield


def _fragment_pattern(dataset_name: str) -> re.Pattern:
    return re.compile(rf"^{re.escape(dataset_name)}_(\d+)\.parquet$")


def open_dataset(
    db_path: str | Path,
    initial_fields: Optional[Iterable[m.FieldDescriptor]] = None,
) -> DatasetHandle:
    """Open (creating if needed) the dataset directory at db_path.

    Schema, statistics, and the id high-water mark are recovered from
    fragment footers; files not matching the fragment naming pattern are
    ignored. A leftover transaction backup makes the open fail with
    ManualRecoveryRequired rather than auto-restoring.
    """
    db_path = Path(db_path)
    name = db_path.name
    if not name:
        raise ValueError("db_path must name a dataset directory")
    db_path.mkdir(parents=True, exist_ok=True)
    backup = db_path / BACKUP_DIRNAME
    if backup.exists():
        raise ManualRecoveryRequired(str(backup))

    pattern = _fragment_pattern(name)
    fragments: list[FragmentInfo] = []
    schema = m.Schema()
    max_id = -1
    historical = -1
    newest = -1
    for entry in sorted(db_path.iterdir()):
        match = pattern.match(entry.name)
        if not match or not entry.is_file():
            continue
        index = int(match.group(1))
        footer = pqio.read_fragment_footer(entry)
        if "id" not in footer.stats or not footer.schema.has_field("id"):
            raise CorruptDataset(f"fragment {entry} has no id column")
        if footer.schema.field("id").dtype != m.INT64:
            raise CorruptDataset(f"fragment {entry} id column is not Int64")
        fragments.append(
            FragmentInfo(
                index=index,
                path=entry,
                row_count=footer.row_count,
                byte_size=entry.stat().st_size,
                stats=footer.stats,
            )
        )
        id_max = footer.stats["id"].max
        if id_max is not None:
            max_id = max(max_id, int(id_max))
        historical = max(historical, footer.max_id)
        if index > newest:
            newest = index
            schema = footer.schema
    fragments.sort(key=lambda f: f.index)
    if initial_fields is not None:
        schema = m.merge_schemas(schema, m.Schema.of(initial_fields))
    return DatasetHandle(
        db_path=db_path,
        dataset_name=name,
        fragments=fragments,
        schema=schema,
        max_id=max_id,
        historical_max_id=max(historical, max_id),
    )


def assign_ids(
    table: m.CanonicalTable,
    handle: DatasetHandle,
    allow_existing: bool = False,
) -> m.CanonicalTable:
    """Append an id column continuing from the dataset's high-water mark."""
    if table.schema.has_field("id") and not allow_existing:
        raise IdCollision("input data already carries an id column")
    if table.schema.has_field("id"):
        return table
    start = handle.next_id()
    n = table.row_count
    ids = list(range(start, start + n))
    schema = m.merge_schemas(
        table.schema, m.Schema.of([m.FieldDescriptor("id", m.INT64)])
    )
    out = m.align_table(table, schema)
    out.columns[schema.names.index("id")] = ids
    if n:
        handle.max_id = ids[-1]
        handle.historical_max_id = max(handle.historical_max_id, ids[-1])
    return out


def write_fragment(
    handle: DatasetHandle,
    table: m.CanonicalTable,
    index: Optional[int] = None,
    row_group_size: Optional[int] = None,
) -> FragmentInfo:
    """Persist a table as a new fragment file and register it."""
    if table.row_count == 0:
        raise ValueError("fragments must carry at least one row")
    if not table.schema.same_fields(handle.schema):
        raise IncompatibleSchemas("fragment schema differs from dataset schema")
    if index is None:
        index = handle.next_fragment_index()
    path = handle.fragment_path(index)
    checkpoint(f"storage.write_fragment:{index}")
    data_max = max((v for v in table.column("id") if v is not None), default=-1)
    handle.max_id = max(handle.max_id, data_max)
    handle.historical_max_id = max(handle.historical_max_id, handle.max_id)
    stats = pqio.write_parquet_fragment(
        path,
        m.CanonicalTable(schema=handle.schema, columns=table.columns),
        max_id=handle.historical_max_id,
        row_group_size=row_group_size,
    )
    info = FragmentInfo(
        index=index,
        path=path,
        row_count=table.row_count,
        byte_size=path.stat().st_size,
        stats=stats,
    )
    handle.fragments.append(info)
    handle.fragments.sort(key=lambda f: f.index)
    return info


def load_fragment(
    handle: DatasetHandle,
    frag: FragmentInfo,
    columns: Optional[Sequence[str]] = None,
) -> m.CanonicalTable:
    """Decode one fragment, updating the handle's scan counters."""
    table = pqio.read_fragment_table(frag.path, handle.schema, columns)
    handle.scan.files_opened += 1
    handle.scan.rows_decoded += frag.row_count
    return table


def read_all(handle: DatasetHandle) -> m.CanonicalTable:
    """Decode the full dataset in fragment-index order."""
    tables = [load_fragment(handle, f) for f in handle.fragments]
    return m.concat_tables(tables, handle.schema)


# --- transactions -----------------------------------------------------------


def begin_transaction(handle: DatasetHandle) -> TransactionGuard:
    """Snapshot all fragment files into the backup directory."""
    if handle.guard is not None and handle.guard.state == "open":
        raise NestedTransaction("a transaction is already open on this dataset")
    backup = handle.backup_path
    if backup.exists():
        raise NestedTransaction(f"stale backup directory exists: {backup}")
    checkpoint("storage.begin_transaction")
    try:
        backup.mkdir()
        originals = [f.path for f in handle.fragments]
        for path in originals:
            shutil.copy2(path, backup / path.name)
    except OSError as e:
        raise IoFailure(f"failed to create backup: {e}") from e
    snapshot = (
        list(handle.fragments),
        handle.schema,
        handle.max_id,
        handle.historical_max_id,
    )
    guard = TransactionGuard(
        backup_dir=backup, original_files=originals, snapshot=snapshot
    )
    handle.guard = guard
    return guard


def commit(handle: DatasetHandle, guard: TransactionGuard) -> None:
    if guard.state != "open":
        raise RestoreFailure(f"cannot commit a {guard.state} transaction")
    checkpoint("storage.commit")
    shutil.rmtree(guard.backup_dir, ignore_errors=True)
    guard.state = "committed"
    handle.guard = None


def rollback(handle: DatasetHandle, guard: TransactionGuard) -> None:
    """Restore the dataset directory byte-for-byte from the snapshot."""
    if guard.state != "open":
        raise RestoreFailure(f"cannot roll back a {guard.state} transaction")
    if not guard.backup_dir.is_dir():
        guard.state = "rolled_back"
        handle.guard = None
        raise RestoreFailure(f"backup directory missing: {guard.backup_dir}")
    pattern = _fragment_pattern(handle.dataset_name)
    for entry in handle.db_path.iterdir():
        if pattern.match(entry.name):
            entry.unlink()
    for item in guard.backup_dir.iterdir():
        shutil.copy2(item, handle.db_path / item.name)
    shutil.rmtree(guard.backup_dir)
    fragments, schema, max_id, historical = guard.snapshot
    handle.fragments = list(fragments)
    handle.schema = schema
    handle.max_id = max_id
    handle.historical_max_id = historical
    guard.state = "rolled_back"
    handle.guard = None


@contextmanager
def transaction(handle: DatasetHandle, guard: Optional[TransactionGuard] = None):
    """Run a mutation under a (possibly pre-existing) transaction."""
    if guard is not None:
        yield guard
        return
    own = begin_transaction(handle)
    try:
        yield own
        commit(handle, own)
    except BaseException:
        if own.state == "open":
            rollback(handle, own)
        raise


# --- rewriting --------------------------------------------------------------


def _split_sizes(total: int, cap: int) -> list[int]:
    """Even split: ceil(total/cap) files whose sizes differ by at most 1."""
    if total == 0:
        return []
    n_files = math.ceil(total / cap)
    base, rem = divmod(total, n_files)
    return [base + 1] * rem + [base] * (n_files - rem)


def _row_group_size(rows_in_file: int, config: NormalizeConfig) -> int:
    cap = config.effective_max_rows_per_group
    n_groups = max(1, math.ceil(rows_in_file / cap)) if rows_in_file else 1
    return max(1, math.ceil(rows_in_file / n_groups)) if rows_in_file else cap


def _slice_table(table: m.CanonicalTable, start: int, stop: int) -> m.CanonicalTable:
    return m.CanonicalTable(
        schema=table.schema, columns=[col[start:stop] for col in table.columns]
    )


def replace_fragments(
    handle: DatasetHandle,
    table: m.CanonicalTable,
    config: NormalizeConfig,
    guard: Optional[TransactionGuard] = None,
) -> None:
    """Replace the whole dataset with an evenly split rewrite of table.

    Rows are written in ascending id order; fragment indices restart at 0.
    """
    with transaction(handle, guard):
        checkpoint("storage.replace_fragments:start")
        order = sorted(range(table.row_count), key=table.column("id").__getitem__)
        if order != list(range(table.row_count)):
            table = m.CanonicalTable(
                schema=table.schema,
                columns=[[col[i] for i in order] for col in table.columns],
            )
        checkpoint("storage.replace_fragments:sorted")
        for frag in handle.fragments:
            frag.path.unlink()
        checkpoint("storage.replace_fragments:cleared")
        handle.fragments = []
        handle.schema = table.schema
        offset = 0
        for i, size in enumerate(_split_sizes(table.row_count, config.max_rows_per_file)):
            chunk = _slice_table(table, offset, offset + size)
            offset += size
            write_fragment(
                handle, chunk, index=i, row_group_size=_row_group_size(size, config)
            )
            checkpoint(f"storage.replace_fragments:wrote:{i}")
        checkpoint("storage.replace_fragments:done")


def normalize(
    handle: DatasetHandle,
    config: Optional[NormalizeConfig] = None,
    guard: Optional[TransactionGuard] = None,
) -> DatasetHandle:
    """Redistribute rows so fragment row counts are even and bounded.

    Total rows and row content are preserved; the rewritten stream is in
    ascending id order. Runs inside a transaction.
    """
    config = config or NormalizeConfig()
    checkpoint("storage.normalize:start")
    if not handle.fragments:
        return handle
    if config.batch_size is not None:
        # Streaming rewrite: decode fragment-by-fragment in bounded batches.
        tables = []
        for frag in handle.fragments:
            whole = load_fragment(handle, frag)
            for start in range(0, whole.row_count, config.batch_size):
                tables.append(_slice_table(whole, start, start + config.batch_size))
        table = m.concat_tables(tables, handle.schema)
    else:
        table = read_all(handle)
    checkpoint("storage.normalize:loaded")
    replace_fragments(handle, table, config, guard)
    return handle


def rewrite_all_fragments(
    handle: DatasetHandle,
    new_schema: m.Schema,
    guard: Optional[TransactionGuard] = None,
) -> DatasetHandle:
    """Align every fragment to a superset schema, preserving rows and ids."""
    merged = m.merge_schemas(handle.schema, new_schema)
    if not merged.same_fields(new_schema):
        raise IncompatibleSchemas("new schema must be a superset of the current one")
    checkpoint("storage.rewrite_all_fragments:start")
    with transaction(handle, guard):
        old = list(handle.fragments)
        old_schema = handle.schema
        handle.schema = new_schema
        handle.fragments = []
        for frag in old:
            table = pqio.read_fragment_table(frag.path, old_schema)
            aligned = m.align_table(table, new_schema)
            frag.path.unlink()
            checkpoint(f"storage.rewrite_all_fragments:rewriting:{frag.index}")
            write_fragment(handle, aligned, index=frag.index)
        checkpoint("storage.rewrite_all_fragments:done")
    return handle
