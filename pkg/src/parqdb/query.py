"""Predicate AST, in-memory evaluation, fragment pruning, and reads.

Comparison semantics are SQL-like: any comparison against a null cell is
false; IsNull selects exactly the null cells. Float equality is bit-exact,
so range predicates are the better fit for float columns.
"""

from __future__ import annotations

import re
import struct
from bisect import bisect_left
from dataclasses import dataclass, field as dc_field
from typing import Any, Iterator, Optional, Sequence, Union

from . import model as m
from . import storage
from .errors import TypeMismatch, UnknownField
from .storage import DatasetHandle, FragmentInfo, LoadConfig

# --- predicate AST ----------------------------------------------------------

_OPS = ("==", "!=", "<", "<=", ">", ">=")
_ORDER_OPS = ("<", "<=", ">", ">=")


@dataclass(frozen=True)
class Compare:
    path: str
    op: str
    literal: Any

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparison operator: {self.op}")
        if self.literal is None:
            raise TypeMismatch("comparison literal may not be null; use IsNull")


@dataclass(frozen=True)
class IsNull:
    path: str


@dataclass(frozen=True)
class And:
    left: "Predicate"
    right: "Predicate"


@dataclass(frozen=True)
class Or:
    left: "Predicate"
    right: "Predicate"


@dataclass(frozen=True)
class Not:
    inner: "Predicate"


Predicate = Union[Compare, IsNull, And, Or, Not]


def predicate_paths(pred: Predicate) -> set[str]:
    if isinstance(pred, (Compare, IsNull)):
        return {pred.path}
    if isinstance(pred, (And, Or)):
        return predicate_paths(pred.left) | predicate_paths(pred.right)
    return predicate_paths(pred.inner)


def conjoin(preds: Sequence[Predicate]) -> Optional[Predicate]:
    """Fold a filter list into a single conjunction (bitwise-and semantics)."""
    out: Optional[Predicate] = None
    for p in preds:
        out = p if out is None else And(out, p)
    return out


# --- evaluation -------------------------------------------------------------


def _float_bits(x: float) -> bytes:
    return struct.pack("<d", x)


def _bit_equal(a: Any, b: Any) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        return _float_bits(float(a)) == _float_bits(float(b))
    return a == b


def _check_literal(field: m.FieldDescriptor, pred: Compare) -> None:
    lit_type = m.classify_value(pred.literal)
    try:
        m.promote(field.dtype, lit_type)
    except Exception as e:
        raise TypeMismatch(
            f"literal {pred.literal!r} is not comparable with field "
            f"{field.name!r} of type {field.dtype}"
        ) from e
    if pred.op in _ORDER_OPS and not lit_type.is_orderable:
        raise TypeMismatch(f"operator {pred.op} needs an orderable literal")


def _compare_cell(v: Any, op: str, lit: Any) -> bool:
    if v is None:
        return False
    if op == "==":
        return _bit_equal(v, lit)
    if op == "!=":
        return not _bit_equal(v, lit)
    if op == "<":
        return v < lit
    if op == "<=":
        return v <= lit
    if op == ">":
        return v > lit
    return v >= lit


def evaluate(pred: Predicate, table: m.CanonicalTable) -> list[bool]:
    """Row mask for pred over an in-memory table."""
    if isinstance(pred, Compare):
        field = table.schema.field(pred.path)
        _check_literal(field, pred)
        col = table.column(pred.path)
        op, lit = pred.op, pred.literal
        return [_compare_cell(v, op, lit) for v in col]
    if isinstance(pred, IsNull):
        table.schema.field(pred.path)
        return [v is None for v in table.column(pred.path)]
    if isinstance(pred, And):
        left = evaluate(pred.left, table)
        right = evaluate(pred.right, table)
        return [a and b for a, b in zip(left, right)]
    if isinstance(pred, Or):
        left = evaluate(pred.left, table)
        right = evaluate(pred.right, table)
        return [a or b for a, b in zip(left, right)]
    if isinstance(pred, Not):
        return [not x for x in evaluate(pred.inner, table)]
    raise TypeError(f"not a predicate: {pred!r}")


# --- fragment pruning -------------------------------------------------------


def _stats_comparable(lit: Any, lo: Any) -> bool:
    numeric = (bool, int, float)
    if isinstance(lit, numeric) and isinstance(lo, numeric):
        return True
    return isinstance(lit, str) and isinstance(lo, str)


def _fragment_may_match(pred: Predicate, frag: FragmentInfo) -> bool:
    """Sound satisfiability check against fragment statistics.

    Returns True unless the statistics prove no row can match; missing
    statistics always retain the fragment.
    """
    if isinstance(pred, Compare):
        st = frag.stats.get(pred.path)
        if st is None:
            return True
        if st.null_count == frag.row_count:
            return False  # no non-null cell, and null never matches a compare
        lo, hi = st.min, st.max
        if lo is None or hi is None:
            return True
        lit = pred.literal
        if not _stats_comparable(lit, lo):
            return True
        if pred.op == "==":
            return lo <= lit <= hi
        if pred.op == "!=":
            return not (lo == hi == lit)
        if pred.op == "<":
            return lo < lit
        if pred.op == "<=":
            return lo <= lit
        if pred.op == ">":
            return hi > lit
        return hi >= lit
    if isinstance(pred, IsNull):
        st = frag.stats.get(pred.path)
        return True if st is None else st.null_count > 0
    if isinstance(pred, And):
        return _fragment_may_match(pred.left, frag) and _fragment_may_match(
            pred.right, frag
        )
    if isinstance(pred, Or):
        return _fragment_may_match(pred.left, frag) or _fragment_may_match(
            pred.right, frag
        )
    # Not: interval reasoning under negation is not attempted; keep it.
    return True


def prune_fragments(
    pred: Optional[Predicate],
    fragments: Sequence[FragmentInfo],
    ids: Optional[Sequence[int]] = None,
) -> list[FragmentInfo]:
    """Drop fragments whose statistics disprove the predicate / id set."""
    sorted_ids = sorted(set(ids)) if ids is not None else None
    kept = []
    for frag in fragments:
        if pred is not None and not _fragment_may_match(pred, frag):
            continue
        if sorted_ids is not None and not _ids_may_hit(sorted_ids, frag):
            continue
        kept.append(frag)
    return kept


def _ids_may_hit(sorted_ids: list[int], frag: FragmentInfo) -> bool:
    st = frag.stats.get("id")
    if st is None or st.min is None or st.max is None:
        return True
    i = bisect_left(sorted_ids, st.min)
    return i < len(sorted_ids) and sorted_ids[i] <= st.max


# --- projection -------------------------------------------------------------


def expand_columns(schema: m.Schema, columns: Sequence[str]) -> list[str]:
    """Expand requested dot-paths, letting a parent name all its children."""
    out: list[str] = []
    seen = set()
    for want in columns:
        prefix = want + "."
        matches = [
            f.name
            for f in schema.fields
            if f.name == want or f.name.startswith(prefix)
        ]
        if not matches:
            raise UnknownField(f"no such field: {want}")
        for name in matches:
            if name not in seen:
                seen.add(name)
                out.append(name)
    return out


def project(
    table: m.CanonicalTable, columns: Sequence[str], include: bool = True
) -> m.CanonicalTable:
    """Keep (or drop) the named columns; field order stays alphabetical."""
    expanded = set(expand_columns(table.schema, columns))
    keep = [
        (f, col)
        for f, col in zip(table.schema.fields, table.columns)
        if (f.name in expanded) == include
    ]
    schema = m.Schema(
        fields=tuple(f for f, _ in keep),
        table_metadata=table.schema.table_metadata,
    )
    return m.CanonicalTable(schema=schema, columns=[col for _, col in keep])


# --- read path --------------------------------------------------------------


@dataclass
class ReadRequest:
    """Everything a flat read needs."""

    ids: Optional[Sequence[int]] = None
    columns: Optional[Sequence[str]] = None
    include_cols: bool = True
    filters: Sequence[Predicate] = ()
    load_format: str = "table"
    load_config: LoadConfig = dc_field(default_factory=LoadConfig)

    def __post_init__(self):
        if self.load_format not in ("table", "batches"):
            raise ValueError(f"unknown load_format: {self.load_format}")


def _output_schema(handle: DatasetHandle, request: ReadRequest) -> m.Schema:
    if request.columns is None:
        return handle.schema
    expanded = set(
        expand_columns(handle.schema, request.columns)
    )
    fields = [
        f
        for f in handle.schema.fields
        if (f.name in expanded) == request.include_cols
    ]
    return m.Schema(
        fields=tuple(fields), table_metadata=handle.schema.table_metadata
    )


def _matching_tables(
    handle: DatasetHandle, request: ReadRequest
) -> Iterator[m.CanonicalTable]:
    """Yield per-fragment tables already filtered and projected."""
    handle.scan = storage.ScanStats()
    pred = conjoin(list(request.filters))
    if pred is not None:
        for path in sorted(predicate_paths(pred)):
            handle.schema.field(path)  # raises UnknownField early
    out_schema = _output_schema(handle, request)
    id_set = set(request.ids) if request.ids is not None else None

    decode_cols = list(out_schema.names)
    for extra in sorted(predicate_paths(pred)) if pred else []:
        if extra not in decode_cols:
            decode_cols.append(extra)
    if id_set is not None and "id" not in decode_cols:
        decode_cols.append("id")

    candidates = prune_fragments(pred, handle.fragments, request.ids)
    handle.scan.fragments_pruned = len(handle.fragments) - len(candidates)

    for frag in candidates:
        table = storage.load_fragment(handle, frag, decode_cols)
        mask = [True] * table.row_count
        if pred is not None:
            mask = evaluate(pred, table)
        if id_set is not None:
            id_col = table.column("id")
            mask = [ok and id_col[i] in id_set for i, ok in enumerate(mask)]
        if not any(mask):
            continue
        if all(mask):
            columns = [table.column(f.name) for f in out_schema.fields]
        else:
            rows = [i for i, ok in enumerate(mask) if ok]
            columns = []
            for f in out_schema.fields:
                col = table.column(f.name)
                columns.append([col[i] for i in rows])
        yield m.CanonicalTable(schema=out_schema, columns=columns)


def read_table(handle: DatasetHandle, request: ReadRequest) -> m.CanonicalTable:
    """Materialize a read as one canonical table."""
    schema = _output_schema(handle, request)
    return m.concat_tables(list(_matching_tables(handle, request)), schema)


def read_batches(
    handle: DatasetHandle, request: ReadRequest
) -> Iterator[m.CanonicalTable]:
    """Stream a read as tables of at most load_config.batch_size rows."""
    size = request.load_config.batch_size
    schema = _output_schema(handle, request)
    buffer = m.empty_table(schema)
    for part in _matching_tables(handle, request):
        buffer = m.concat_tables([buffer, part], schema)
        while buffer.row_count >= size:
            yield m.CanonicalTable(
                schema=schema, columns=[col[:size] for col in buffer.columns]
            )
            buffer = m.CanonicalTable(
                schema=schema, columns=[col[size:] for col in buffer.columns]
            )
    if buffer.row_count:
        yield buffer


# --- filter text grammar ----------------------------------------------------

_FILTER_RE = re.compile(
    r"^\s*(?P<path>[^\s]+)\s+(?:(?P<isnull>is\s+null)|(?P<op>==|!=|<=|>=|<|>)\s*(?P<lit>.+?))\s*$"
)
_INT_RE = re.compile(r"^-?\d+$")
_FLOAT_RE = re.compile(r"^-?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")


def parse_filter(text: str) -> Predicate:
    """Parse the CLI filter grammar: ``<path> <op> <literal>``.

    Operators: ==, !=, <, <=, >, >= plus ``<path> is null``. Literals are
    integers, decimals, or single-quoted strings.
    """
    match = _FILTER_RE.match(text)
    if not match:
        raise ValueError(f"cannot parse filter: {text!r}")
    path = match.group("path")
    if match.group("isnull"):
        return IsNull(path)
    raw = match.group("lit")
    literal: Any
    if raw.startswith("'") and raw.endswith("'") and len(raw) >= 2:
        literal = raw[1:-1]
    elif _INT_RE.match(raw):
        literal = int(raw)
    elif _FLOAT_RE.match(raw):
        literal = float(raw)
    elif raw in ("true", "false"):
        literal = raw == "true"
    else:
        raise ValueError(f"cannot parse literal: {raw!r}")
    return Compare(path, match.group("op"), literal)
