"""Database facade: create / read / update / delete over a dataset directory.

All mutations run under the writer lock and a backup-and-restore
transaction; any failure leaves the dataset byte-identical to its
pre-call state. Reads are lock-free.
"""

from __future__ import annotations

import hashlib
import shutil
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import polars as pl

from . import model as m
from . import pqio
from . import query as q
from . import storage
from .errors import (
    IdCollision,
    MissingUpdateKeys,
    MixedDeleteModes,
    ProtectedColumn,
    StaleNestedMirrorWarning,
)
from .faults import checkpoint
from .query import Predicate, ReadRequest
from .storage import LoadConfig, NormalizeConfig


@dataclass
class CreateRequest:
    data: Any
    schema: Optional[m.Schema] = None
    metadata: Optional[Mapping[str, str]] = None
    fields_metadata: Optional[Mapping[str, Mapping[str, str]]] = None
    normalize_dataset: bool = False
    normalize_config: NormalizeConfig = dc_field(default_factory=NormalizeConfig)
    treat_fields_as_ragged: frozenset = frozenset()
    convert_to_fixed_shape: bool = True


@dataclass
class UpdateRequest:
    data: Any
    schema: Optional[m.Schema] = None
    metadata: Optional[Mapping[str, str]] = None
    fields_metadata: Optional[Mapping[str, Mapping[str, str]]] = None
    update_keys: Sequence[str] = ("id",)
    normalize_config: NormalizeConfig = dc_field(default_factory=NormalizeConfig)


@dataclass
class DeleteRequest:
    ids: Optional[Sequence[int]] = None
    columns: Optional[Sequence[str]] = None
    filters: Optional[Sequence[Predicate]] = None
    normalize_config: NormalizeConfig = dc_field(default_factory=NormalizeConfig)


@dataclass
class CreateSummary:
    rows_written: int
    new_fragment_index: Optional[int]
    schema_changed: bool


@dataclass
class UpdateSummary:
    rows_matched: int
    rows_updated: int
    fields_added: int


@dataclass
class DeleteSummary:
    rows_deleted: Optional[int] = None
    columns_deleted: Optional[int] = None


def _records_to_flat(data: Any) -> list[dict[str, Any]]:
    """Normalize any accepted input shape into flat per-row dicts."""
    if isinstance(data, m.CanonicalTable):
        return data.to_rows()
    if isinstance(data, Mapping):
        table = m.canonicalize_input(data)
        return table.to_rows()
    return [m.flatten_record(m.inject_dummy_for_empty_struct(r)) for r in data]


class Database:
    """An open parqdb dataset."""

    def __init__(
        self,
        db_path: str | Path,
        initial_fields: Optional[Iterable[m.FieldDescriptor]] = None,
        lock_timeout: float = 60.0,
    ):
        self.handle = storage.open_dataset(db_path, initial_fields)
        self.lock_timeout = lock_timeout

    # -- introspection ------------------------------------------------------

    @property
    def db_path(self) -> Path:
        return self.handle.db_path

    @property
    def dataset_name(self) -> str:
        return self.handle.dataset_name

    @property
    def schema(self) -> m.Schema:
        return self.handle.schema

    @property
    def scan_stats(self) -> storage.ScanStats:
        return self.handle.scan

    @property
    def nested_mirror_path(self) -> Path:
        return self.db_path.parent / f"{self.dataset_name}_nested"

    def _lock(self):
        return storage.writer_lock(self.handle, timeout=self.lock_timeout)

    # -- create --------------------------------------------------------------

    def create(self, data: Any, **options) -> CreateSummary:
        return self._create(CreateRequest(data=data, **options))

    def _create(self, req: CreateRequest) -> CreateSummary:
        with self._lock():
            checkpoint("crud.create:start")
            table = m.canonicalize_input(
                req.data,
                treat_fields_as_ragged=req.treat_fields_as_ragged,
                convert_to_fixed_shape=req.convert_to_fixed_shape,
            )
            if table.schema.has_field("id"):
                raise IdCollision("create input must not carry an id column")
            if req.schema is not None:
                target = m.merge_schemas(table.schema, req.schema)
                table = m.align_table(table, target)
            checkpoint("crud.create:canonicalized")
            if table.row_count == 0:
                return CreateSummary(0, None, False)
            handle = self.handle
            guard = storage.begin_transaction(handle)
            try:
                checkpoint("crud.create:transaction_open")
                table = storage.assign_ids(table, handle)
                checkpoint("crud.create:ids_assigned")
                merged = m.merge_schemas(handle.schema, table.schema)
                merged = self._attach_metadata(
                    merged, req.metadata, req.fields_metadata
                )
                schema_changed = not merged.same_fields(handle.schema)
                if schema_changed and handle.fragments:
                    storage.rewrite_all_fragments(handle, merged, guard)
                else:
                    handle.schema = merged
                checkpoint("crud.create:schema_reconciled")
                aligned = m.align_table(table, merged)
                info = storage.write_fragment(handle, aligned)
                checkpoint("crud.create:fragment_written")
                if req.normalize_dataset:
                    storage.normalize(handle, req.normalize_config, guard)
                    info_index = handle.fragments[-1].index if handle.fragments else None
                else:
                    info_index = info.index
                checkpoint("crud.create:before_commit")
                storage.commit(handle, guard)
            except BaseException:
                storage.rollback(handle, guard)
                raise
            return CreateSummary(
                rows_written=table.row_count,
                new_fragment_index=info_index,
                schema_changed=schema_changed,
            )

    @staticmethod
    def _attach_metadata(
        schema: m.Schema,
        metadata: Optional[Mapping[str, str]],
        fields_metadata: Optional[Mapping[str, Mapping[str, str]]],
    ) -> m.Schema:
        if not metadata and not fields_metadata:
            return schema
        fields = list(schema.fields)
        if fields_metadata:
            for i, f in enumerate(fields):
                extra = fields_metadata.get(f.name)
                if extra:
                    fields[i] = f.with_metadata(extra)
        table_meta = {**schema.table_metadata_dict, **(metadata or {})}
        return m.Schema.of(fields, table_meta)

    # -- read ----------------------------------------------------------------

    def read(
        self,
        ids: Optional[Sequence[int]] = None,
        columns: Optional[Sequence[str]] = None,
        include_cols: bool = True,
        filters: Sequence[Predicate] = (),
        load_format: str = "table",
        load_config: Optional[LoadConfig] = None,
        rebuild_nested_struct: bool = False,
        rebuild_nested_from_scratch: bool = False,
    ):
        request = ReadRequest(
            ids=ids,
            columns=columns,
            include_cols=include_cols,
            filters=filters,
            load_format=load_format,
            load_config=load_config or LoadConfig(),
        )
        if rebuild_nested_struct:
            return self._read_nested(request, rebuild_nested_from_scratch)
        if load_format == "batches":
            return q.read_batches(self.handle, request)
        return q.read_table(self.handle, request)

    # -- update --------------------------------------------------------------

    def update(self, data: Any, **options) -> UpdateSummary:
        return self._update(UpdateRequest(data=data, **options))

    def _update(self, req: UpdateRequest) -> UpdateSummary:
        with self._lock():
            checkpoint("crud.update:start")
            incoming = _records_to_flat(req.data)
            keys = list(req.update_keys)
            for rec in incoming:
                for k in keys:
                    if k not in rec:
                        raise MissingUpdateKeys(
                            f"update record {rec!r} lacks key {k!r}"
                        )
            checkpoint("crud.update:validated")
            handle = self.handle
            if not incoming or not handle.fragments:
                return UpdateSummary(0, 0, 0)
            inc_schema = m.canonicalize_input(incoming).schema
            if req.schema is not None:
                inc_schema = m.merge_schemas(inc_schema, req.schema)
            overlay = {tuple(rec[k] for k in keys): rec for rec in incoming}
            checkpoint("crud.update:overlay_built")

            existing = storage.read_all(handle)
            rows = existing.to_rows()
            checkpoint("crud.update:existing_loaded")
            matched = 0
            for row in rows:
                key = tuple(row.get(k) for k in keys)
                rec = overlay.get(key)
                if rec is not None:
                    row.update(rec)
                    matched += 1
            if matched == 0:
                return UpdateSummary(0, 0, 0)
            checkpoint("crud.update:overlay_applied")

            merged = m.merge_schemas(handle.schema, inc_schema)
            merged = self._attach_metadata(merged, req.metadata, req.fields_metadata)
            fields_added = len(merged.fields) - len(handle.schema.fields)
            updated = m.canonicalize_input(rows)
            final = m.merge_schemas(merged, updated.schema)
            aligned = m.align_table(updated, final)
            checkpoint("crud.update:rewrite_ready")
            storage.replace_fragments(handle, aligned, req.normalize_config)
            return UpdateSummary(
                rows_matched=matched, rows_updated=matched, fields_added=fields_added
            )

    # -- delete --------------------------------------------------------------

    def delete(self, **options) -> DeleteSummary:
        return self._delete(DeleteRequest(**options))

    def _delete(self, req: DeleteRequest) -> DeleteSummary:
        modes = [req.ids is not None, req.columns is not None, req.filters is not None]
        if sum(modes) != 1:
            raise MixedDeleteModes(
                "exactly one of ids, columns, or filters must be provided"
            )
        with self._lock():
            checkpoint("crud.delete:start")
            handle = self.handle
            if req.columns is not None:
                return self._delete_columns(req)
            if not handle.fragments:
                return DeleteSummary(rows_deleted=0)
            full = storage.read_all(handle)
            checkpoint("crud.delete:loaded")
            if req.ids is not None:
                targets = set(req.ids)
                mask = [v in targets for v in full.column("id")]
            else:
                pred = q.conjoin(list(req.filters))
                mask = evaluate_or_empty(pred, full)
            deleted = sum(mask)
            checkpoint("crud.delete:mask_computed")
            if deleted == 0:
                return DeleteSummary(rows_deleted=0)
            kept_rows = [i for i, hit in enumerate(mask) if not hit]
            kept = m.CanonicalTable(
                schema=full.schema,
                columns=[[col[i] for i in kept_rows] for col in full.columns],
            )
            checkpoint("crud.delete:rewrite_ready")
            storage.replace_fragments(handle, kept, req.normalize_config)
            return DeleteSummary(rows_deleted=deleted)

    def _delete_columns(self, req: DeleteRequest) -> DeleteSummary:
        handle = self.handle
        expanded = q.expand_columns(handle.schema, req.columns)
        if "id" in expanded:
            raise ProtectedColumn("the id column cannot be deleted")
        checkpoint("crud.delete:columns_expanded")
        full = storage.read_all(handle)
        remaining = q.project(full, expanded, include=False)
        checkpoint("crud.delete:rewrite_ready")
        storage.replace_fragments(handle, remaining, req.normalize_config)
        return DeleteSummary(columns_deleted=len(expanded))

    # -- maintenance ---------------------------------------------------------

    def normalize(self, config: Optional[NormalizeConfig] = None) -> None:
        with self._lock():
            storage.normalize(self.handle, config)

    def set_metadata(
        self,
        table_metadata: Optional[Mapping[str, str]] = None,
        fields_metadata: Optional[Mapping[str, Mapping[str, str]]] = None,
    ) -> None:
        """Merge metadata into the schema; persisted on the next rewrite."""
        self.handle.schema = self._attach_metadata(
            self.handle.schema, table_metadata, fields_metadata
        )

    # -- nested mirror ---------------------------------------------------------

    def _dataset_digest(self) -> str:
        h = hashlib.sha256()
        for frag in sorted(self.handle.fragments, key=lambda f: f.index):
            h.update(frag.path.name.encode())
            h.update(frag.path.read_bytes())
        return h.hexdigest()

    def build_nested_mirror(self) -> Path:
        """(Re)build the parallel dataset holding reconstructed nested rows."""
        mirror = self.nested_mirror_path
        if mirror.exists():
            shutil.rmtree(mirror)
        mirror.mkdir(parents=True)
        full = q.read_table(self.handle, ReadRequest())
        if full.row_count:
            df = pqio.to_polars(full)
            df = df.select(_nest_expressions(full.schema.names))
            df.write_parquet(mirror / f"{self.dataset_name}_nested_0.parquet")
        (mirror / ".source_digest").write_text(self._dataset_digest())
        return mirror

    def _read_nested(self, request: ReadRequest, from_scratch: bool) -> list[dict]:
        mirror = self.nested_mirror_path
        digest_file = mirror / ".source_digest"
        if from_scratch or not digest_file.exists():
            self.build_nested_mirror()
        elif digest_file.read_text() != self._dataset_digest():
            warnings.warn(
                "nested mirror is stale; pass rebuild_nested_from_scratch=True "
                "to rebuild it",
                StaleNestedMirrorWarning,
            )
        id_request = ReadRequest(
            ids=request.ids, filters=request.filters, columns=["id"]
        )
        wanted = q.read_table(self.handle, id_request).column("id")
        files = sorted(self.nested_mirror_path.glob("*.parquet"))
        if not files or not wanted:
            return []
        df = pl.concat([pl.read_parquet(f) for f in files])
        df = df.filter(pl.col("id").is_in(wanted))
        records = df.to_dicts()
        for rec in records:
            m._strip_dummies(rec)
        return records


def evaluate_or_empty(pred, table):
    if pred is None:
        return [False] * table.row_count
    return q.evaluate(pred, table)


def _nest_expressions(names: Sequence[str]) -> list[pl.Expr]:
    """Group dotted column names into nested struct expressions."""
    tree: dict = {}
    for name in names:
        node = tree
        segments = name.split(".")
        for seg in segments[:-1]:
            node = node.setdefault(seg, {})
            if not isinstance(node, dict):
                from .errors import PathConflict

                raise PathConflict(f"column {name!r} conflicts with a leaf column")
        if segments[-1] in node:
            from .errors import PathConflict

            raise PathConflict(f"column {name!r} conflicts with a nested column")
        node[segments[-1]] = name

    def build(node: dict) -> list[pl.Expr]:
        exprs = []
        for seg, child in node.items():
            if isinstance(child, dict):
                exprs.append(pl.struct(build(child)).alias(seg))
            else:
                exprs.append(pl.col(child).alias(seg))
        return exprs

    return build(tree)
