"""Conversion between canonical tables and Parquet files via polars.

This is the only module that touches the columnar file format; everything
above it works on :class:`~parqdb.model.CanonicalTable`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import polars as pl

from . import model as m
from .errors import CorruptDataset, IoFailure

METADATA_PREFIX = "parquetdb."
SCHEMA_KEY = "parquetdb.schema"
MAX_ID_KEY = "parquetdb.max_id"
FRAGMENT_KEY = "parquetdb.fragment"
_RESERVED = {"schema", "max_id", "fragment"}


def dtype_to_polars(t: m.LogicalType) -> pl.DataType:
    if t.kind == "null":
        return pl.Null()
    if t.kind == "bool":
        return pl.Boolean()
    if t.kind == "int64":
        return pl.Int64()
    if t.kind == "float64":
        return pl.Float64()
    if t.kind == "string":
        return pl.String()
    if t.kind == "list":
        return pl.List(dtype_to_polars(t.element))
    if t.kind == "tensor":
        return pl.Array(dtype_to_polars(t.element), t.shape)
    raise ValueError(f"unmapped logical type: {t}")


def to_polars(table: m.CanonicalTable) -> pl.DataFrame:
    series = [
        pl.Series(f.name, col, dtype=dtype_to_polars(f.dtype))
        for f, col in zip(table.schema.fields, table.columns)
    ]
    return pl.DataFrame(series)


def from_polars(df: pl.DataFrame, schema: m.Schema) -> m.CanonicalTable:
    columns = [df[f.name].to_list() for f in schema.fields]
    return m.CanonicalTable(schema=schema, columns=columns)


def dtype_to_json(t: m.LogicalType) -> dict:
    out: dict[str, Any] = {"kind": t.kind}
    if t.element is not None:
        out["element"] = dtype_to_json(t.element)
    if t.shape is not None:
        out["shape"] = list(t.shape)
    return out


def dtype_from_json(d: dict) -> m.LogicalType:
    element = dtype_from_json(d["element"]) if "element" in d else None
    shape = tuple(d["shape"]) if "shape" in d else None
    return m.LogicalType(d["kind"], element=element, shape=shape)


def schema_to_json(schema: m.Schema) -> str:
    return json.dumps(
        [
            {
                "name": f.name,
                "dtype": dtype_to_json(f.dtype),
                "metadata": f.metadata_dict,
            }
            for f in schema.fields
        ]
    )


def schema_from_json(payload: str, table_metadata: dict[str, str]) -> m.Schema:
    fields = [
        m.FieldDescriptor(
            name=d["name"],
            dtype=dtype_from_json(d["dtype"]),
            metadata=tuple(sorted(d.get("metadata", {}).items())),
        )
        for d in json.loads(payload)
    ]
    return m.Schema.of(fields, table_metadata)


@dataclass
class ColumnStats:
    """Per-fragment field statistics used for pruning."""

    min: Any = None
    max: Any = None
    null_count: int = 0

    def to_json(self) -> dict:
        return {"min": self.min, "max": self.max, "null_count": self.null_count}

    @classmethod
    def from_json(cls, d: dict) -> "ColumnStats":
        return cls(min=d.get("min"), max=d.get("max"), null_count=d["null_count"])


def compute_stats(table: m.CanonicalTable) -> dict[str, ColumnStats]:
    """Min/max/null-count per orderable field.

    Float columns containing NaN record no min/max: predicate equality is
    bit-exact, so NaN rows could otherwise be pruned away unsoundly.
    """
    stats: dict[str, ColumnStats] = {}
    for f, col in zip(table.schema.fields, table.columns):
        nulls = sum(1 for v in col if v is None)
        entry = ColumnStats(null_count=nulls)
        if f.dtype.is_orderable:
            values = [v for v in col if v is not None]
            if f.dtype.kind == "float64" and any(math.isnan(v) for v in values):
                values = []
            if values:
                entry.min = min(values)
                entry.max = max(values)
        stats[f.name] = entry
    return stats


def write_parquet_fragment(
    path: Path,
    table: m.CanonicalTable,
    max_id: int,
    row_group_size: Optional[int] = None,
) -> dict[str, ColumnStats]:
    """Write a canonical table as one Parquet fragment with parqdb footer."""
    stats = compute_stats(table)
    metadata = {
        SCHEMA_KEY: schema_to_json(table.schema),
        MAX_ID_KEY: str(max_id),
        FRAGMENT_KEY: json.dumps(
            {
                "row_count": table.row_count,
                "stats": {k: v.to_json() for k, v in stats.items()},
            }
        ),
    }
    for k, v in table.schema.table_metadata_dict.items():
        metadata[METADATA_PREFIX + k] = v
    df = to_polars(table)
    try:
        df.write_parquet(path, metadata=metadata, row_group_size=row_group_size)
    except OSError as e:
        raise IoFailure(f"failed to write {path}: {e}") from e
    return stats


@dataclass
class FragmentFooter:
    schema: m.Schema
    max_id: int
    row_count: int
    stats: dict[str, ColumnStats]


def read_fragment_footer(path: Path) -> FragmentFooter:
    """Decode the parqdb footer of a fragment without reading its data."""
    try:
        md = pl.read_parquet_metadata(path)
    except Exception as e:
        raise CorruptDataset(f"unreadable fragment {path}: {e}") from e
    if SCHEMA_KEY not in md or FRAGMENT_KEY not in md:
        raise CorruptDataset(f"fragment {path} lacks parqdb footer metadata")
    table_meta = {
        k[len(METADATA_PREFIX):]: v
        for k, v in md.items()
        if k.startswith(METADATA_PREFIX)
        and k[len(METADATA_PREFIX):] not in _RESERVED
    }
    schema = schema_from_json(md[SCHEMA_KEY], table_meta)
    frag = json.loads(md[FRAGMENT_KEY])
    return FragmentFooter(
        schema=schema,
        max_id=int(md.get(MAX_ID_KEY, "-1")),
        row_count=int(frag["row_count"]),
        stats={k: ColumnStats.from_json(v) for k, v in frag["stats"].items()},
    )


def read_fragment_table(
    path: Path,
    schema: m.Schema,
    columns: Optional[Sequence[str]] = None,
) -> m.CanonicalTable:
    """Decode a fragment, optionally projecting to the named columns."""
    names = list(columns) if columns is not None else schema.names
    try:
        df = pl.read_parquet(path, columns=names)
    except Exception as e:
        raise CorruptDataset(f"unreadable fragment {path}: {e}") from e
    sub = m.Schema.of([schema.field(n) for n in names], schema.table_metadata_dict)
    return from_polars(df, sub)
