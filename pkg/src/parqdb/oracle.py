"""Naive in-memory reference database used as ground truth in tests.

Implements the same CRUD semantics as :class:`parqdb.db.Database` by plain
linear scans: no fragments, no pruning, no transactions. Any divergence
between this module and the engine is a bug in the engine.
"""

from __future__ import annotations

import struct
from typing import Any, Mapping, Optional, Sequence

from . import model as m
from .errors import (
    IdCollision,
    MissingUpdateKeys,
    MixedDeleteModes,
    ProtectedColumn,
    TypeMismatch,
    UnknownField,
)
from .query import And, Compare, IsNull, Not, Or, Predicate


class OracleDb:
    def __init__(self):
        self.rows: dict[int, dict[str, Any]] = {}
        self.schema = m.Schema()
        self.max_id = -1

    def _merge_schema(self, incoming: m.Schema) -> None:
        self.schema = m.merge_schemas(self.schema, incoming)

    def o_create(
        self,
        data: Any,
        treat_fields_as_ragged=(),
        convert_to_fixed_shape: bool = True,
    ) -> int:
        table = m.canonicalize_input(
            data,
            treat_fields_as_ragged=treat_fields_as_ragged,
            convert_to_fixed_shape=convert_to_fixed_shape,
        )
        if table.schema.has_field("id"):
            raise IdCollision("create input must not carry an id column")
        if table.row_count == 0:
            return 0
        self._merge_schema(table.schema)
        self._merge_schema(m.Schema.of([m.FieldDescriptor("id", m.INT64)]))
        for row in table.to_rows():
            self.max_id += 1
            row["id"] = self.max_id
            self.rows[self.max_id] = row
        return table.row_count

    def o_read(
        self,
        ids: Optional[Sequence[int]] = None,
        columns: Optional[Sequence[str]] = None,
        include_cols: bool = True,
        filters: Sequence[Predicate] = (),
    ) -> m.CanonicalTable:
        for pred in filters:
            for path in _paths(pred):
                if not self.schema.has_field(path):
                    raise UnknownField(f"no such field: {path}")
        names = self.schema.names
        if columns is not None:
            expanded = set(_expand(names, columns))
            names = [n for n in names if (n in expanded) == include_cols]
        keep = []
        for rid in sorted(self.rows):
            row = self.rows[rid]
            if ids is not None and rid not in set(ids):
                continue
            if all(_row_matches(p, row, self.schema) for p in filters):
                keep.append(row)
        fields = [self.schema.field(n) for n in names]
        columns_out = [
            [_cast(row.get(f.name), f.dtype) for row in keep] for f in fields
        ]
        return m.CanonicalTable(
            schema=m.Schema(
                fields=tuple(fields), table_metadata=self.schema.table_metadata
            ),
            columns=columns_out,
        )

    def o_update(self, data: Any, update_keys: Sequence[str] = ("id",)) -> int:
        if isinstance(data, m.CanonicalTable):
            incoming = data.to_rows()
        elif isinstance(data, Mapping):
            incoming = m.canonicalize_input(data).to_rows()
        else:
            incoming = [
                m.flatten_record(m.inject_dummy_for_empty_struct(r)) for r in data
            ]
        keys = list(update_keys)
        for rec in incoming:
            for k in keys:
                if k not in rec:
                    raise MissingUpdateKeys(f"record lacks update key {k!r}")
        if not incoming or not self.rows:
            return 0
        inc_schema = m.canonicalize_input(incoming).schema
        overlay = {tuple(rec[k] for k in keys): rec for rec in incoming}
        matched = 0
        for row in self.rows.values():
            rec = overlay.get(tuple(row.get(k) for k in keys))
            if rec is not None:
                row.update(rec)
                matched += 1
        if matched:
            self._merge_schema(inc_schema)
            dense = m.canonicalize_input(list(self.rows.values()))
            self._merge_schema(dense.schema)
        return matched

    def o_delete(
        self,
        ids: Optional[Sequence[int]] = None,
        columns: Optional[Sequence[str]] = None,
        filters: Optional[Sequence[Predicate]] = None,
    ) -> int:
        modes = [ids is not None, columns is not None, filters is not None]
        if sum(modes) != 1:
            raise MixedDeleteModes("exactly one delete mode")
        if columns is not None:
            expanded = _expand(self.schema.names, columns)
            if "id" in expanded:
                raise ProtectedColumn("the id column cannot be deleted")
            self.schema = m.Schema(
                fields=tuple(f for f in self.schema.fields if f.name not in expanded),
                table_metadata=self.schema.table_metadata,
            )
            for row in self.rows.values():
                for name in expanded:
                    row.pop(name, None)
            return len(expanded)
        if ids is not None:
            victims = [rid for rid in self.rows if rid in set(ids)]
        else:
            for pred in filters:
                for path in _paths(pred):
                    if not self.schema.has_field(path):
                        raise UnknownField(f"no such field: {path}")
            victims = [
                rid
                for rid, row in self.rows.items()
                if all(_row_matches(p, row, self.schema) for p in filters)
                and filters
            ]
        for rid in victims:
            del self.rows[rid]
        return len(victims)


def _paths(pred: Predicate) -> set[str]:
    if isinstance(pred, (Compare, IsNull)):
        return {pred.path}
    if isinstance(pred, (And, Or)):
        return _paths(pred.left) | _paths(pred.right)
    return _paths(pred.inner)


def _expand(names: Sequence[str], wanted: Sequence[str]) -> list[str]:
    out = []
    for w in wanted:
        hits = [n for n in names if n == w or n.startswith(w + ".")]
        if not hits:
            raise UnknownField(f"no such field: {w}")
        out.extend(h for h in hits if h not in out)
    return out


def _bit_eq(a: Any, b: Any) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        return struct.pack("<d", float(a)) == struct.pack("<d", float(b))
    return a == b


def _row_matches(pred: Predicate, row: Mapping[str, Any], schema: m.Schema) -> bool:
    """Row-at-a-time predicate evaluation, independent of the engine's."""
    if isinstance(pred, Compare):
        field = schema.field(pred.path)
        lit_type = m.classify_value(pred.literal)
        try:
            m.promote(field.dtype, lit_type)
        except Exception as e:
            raise TypeMismatch(str(e)) from e
        if pred.op in ("<", "<=", ">", ">=") and not lit_type.is_orderable:
            raise TypeMismatch(f"operator {pred.op} needs an orderable literal")
        v = row.get(pred.path)
        if v is None:
            return False
        lit = pred.literal
        return {
            "==": lambda: _bit_eq(v, lit),
            "!=": lambda: not _bit_eq(v, lit),
            "<": lambda: v < lit,
            "<=": lambda: v <= lit,
            ">": lambda: v > lit,
            ">=": lambda: v >= lit,
        }[pred.op]()
    if isinstance(pred, IsNull):
        if not schema.has_field(pred.path):
            raise UnknownField(pred.path)
        return row.get(pred.path) is None
    if isinstance(pred, And):
        return _row_matches(pred.left, row, schema) and _row_matches(
            pred.right, row, schema
        )
    if isinstance(pred, Or):
        return _row_matches(pred.left, row, schema) or _row_matches(
            pred.right, row, schema
        )
    return not _row_matches(pred.inner, row, schema)


def _cast(v: Any, dtype: m.LogicalType) -> Any:
    if v is None:
        return None
    return m.cast_value(v, dtype)
