"""Canonical flattened table model: logical types, schemas, flattening.

Every operation in parqdb consumes and produces :class:`CanonicalTable`,
a flattened, alphabetically ordered columnar table. Values are plain
Python objects: None, bool, int, float, str, and (nested) lists. Tensors
are represented as nested lists whose fixed shape lives in the field's
:class:`LogicalType`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

from .errors import (
    EmptyName,
    HeterogeneousType,
    IncompatibleSchemas,
    PathConflict,
)

DUMMY_FIELD = "dummy_field"

_SCALAR_RANK = {"null": 0, "bool": 1, "int64": 2, "float64": 3}


@dataclass(frozen=True)
class LogicalType:
    """A logical column type.

    kind is one of "null", "bool", "int64", "float64", "string", "list",
    "tensor". List types carry an element type; tensor types additionally
    carry a fixed shape with every dimension >= 1.
    """

    kind: str
    element: Optional["LogicalType"] = None
    shape: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.kind in _SCALAR_RANK or self.kind == "string":
            if self.element is not None or self.shape is not None:
                raise ValueError(f"scalar type {self.kind} takes no parameters")
        elif self.kind == "list":
            if self.element is None or self.shape is not None:
                raise ValueError("list type requires an element type only")
        elif self.kind == "tensor":
            if self.element is None or not self.shape:
                raise ValueError("tensor type requires element type and shape")
            if any(d < 1 for d in self.shape):
                raise ValueError("tensor dimensions must be >= 1")
        else:
            raise ValueError(f"unknown logical type kind: {self.kind}")

    @property
    def is_orderable(self) -> bool:
        return self.kind in ("bool", "int64", "float64", "string")

    def __str__(self) -> str:
        if self.kind == "list":
            return f"list[{self.element}]"
        if self.kind == "tensor":
            return f"tensor[{self.element}, {list(self.shape)}]"
        return self.kind


NULL = LogicalType("null")
BOOLEAN = LogicalType("bool")
INT64 = LogicalType("int64")
FLOAT64 = LogicalType("float64")
STRING = LogicalType("string")


def list_of(element: LogicalType) -> LogicalType:
    return LogicalType("list", element=element)


def tensor_of(element: LogicalType, shape: Sequence[int]) -> LogicalType:
    return LogicalType("tensor", element=element, shape=tuple(shape))


def _tensor_as_list(t: LogicalType) -> LogicalType:
    """The list type a tensor degrades to (one list level per dimension)."""
    out = t.element
    for _ in t.shape:
        out = list_of(out)
    return out


def promote(a: LogicalType, b: LogicalType) -> LogicalType:
    """Least common type of a and b along the promotion ladder.

    Null < Boolean < Int64 < Float64; String promotes only with Null;
    lists merge by element promotion; tensors with unequal shapes degrade
    to lists. Raises HeterogeneousType when no promotion applies.
    """
    if a == b:
        return a
    if a.kind == "null":
        return b
    if b.kind == "null":
        return a
    if a.kind in _SCALAR_RANK and b.kind in _SCALAR_RANK:
        return a if _SCALAR_RANK[a.kind] >= _SCALAR_RANK[b.kind] else b
    if a.kind == "tensor" and b.kind == "tensor":
        if a.shape == b.shape:
            return tensor_of(promote(a.element, b.element), a.shape)
        a, b = _tensor_as_list(a), _tensor_as_list(b)
    elif a.kind == "tensor":
        a = _tensor_as_list(a)
    elif b.kind == "tensor":
        b = _tensor_as_list(b)
    if a.kind == "list" and b.kind == "list":
        return list_of(promote(a.element, b.element))
    raise HeterogeneousType(f"cannot promote {a} with {b}")


def classify_value(v: Any) -> LogicalType:
    """The narrowest LogicalType describing a single value."""
    if v is None:
        return NULL
    if isinstance(v, bool):
        return BOOLEAN
    if isinstance(v, int):
        return INT64
    if isinstance(v, float):
        return FLOAT64
    if isinstance(v, str):
        return STRING
    if isinstance(v, (list, tuple)):
        elem = NULL
        for item in v:
            elem = promote(elem, classify_value(item))
        return list_of(elem)
    raise HeterogeneousType(f"unsupported value type: {type(v).__name__}")


def value_conforms(v: Any, t: LogicalType) -> bool:
    """Whether value v (possibly None) fits logical type t."""
    if v is None:
        return True
    if t.kind == "null":
        return False
    if t.kind == "bool":
        return isinstance(v, bool)
    if t.kind == "int64":
        return isinstance(v, int) and not isinstance(v, bool)
    if t.kind == "float64":
        return isinstance(v, float)
    if t.kind == "string":
        return isinstance(v, str)
    if t.kind == "list":
        return isinstance(v, list) and all(value_conforms(x, t.element) for x in v)
    if t.kind == "tensor":
        return _shape_of(v) == t.shape and _tensor_leaves_conform(v, t.element)
    return False


def _tensor_leaves_conform(v: Any, elem: LogicalType) -> bool:
    if isinstance(v, list):
        return all(_tensor_leaves_conform(x, elem) for x in v)
    return value_conforms(v, elem)


def cast_value(v: Any, target: LogicalType) -> Any:
    """Cast v upward along the promotion ladder to target."""
    if v is None:
        return None
    k = target.kind
    if k == "bool":
        if isinstance(v, bool):
            return v
    elif k == "int64":
        if isinstance(v, bool):
            return int(v)
        if isinstance(v, int):
            return v
    elif k == "float64":
        if isinstance(v, (bool, int, float)):
            return float(v)
    elif k == "string":
        if isinstance(v, str):
            return v
    elif k == "list":
        if isinstance(v, (list, tuple)):
            return [cast_value(x, target.element) for x in v]
    elif k == "tensor":
        if isinstance(v, (list, tuple)):
            return _cast_tensor(v, target)
    raise IncompatibleSchemas(f"cannot cast {v!r} to {target}")


def _cast_tensor(v: Any, target: LogicalType) -> list:
    if _shape_of(v) != target.shape:
        raise IncompatibleSchemas(f"value shape does not match {target}")
    def rec(x, depth):
        if depth == len(target.shape):
            return cast_value(x, target.element)
        return [rec(y, depth + 1) for y in x]
    return rec(list(v), 0)


def _shape_of(v: Any) -> Optional[tuple[int, ...]]:
    """Rectangular shape of a nested list, or None if ragged."""
    if not isinstance(v, (list, tuple)):
        return ()
    shapes = {_shape_of(x) for x in v}
    if len(shapes) > 1 or None in shapes:
        return None
    inner = shapes.pop() if shapes else ()
    return (len(v),) + inner


def validate_field_name(name: str) -> None:
    if not name or any(c.isspace() for c in name):
        raise EmptyName(f"invalid field name: {name!r}")
    if any(not seg for seg in name.split(".")):
        raise EmptyName(f"field name has an empty segment: {name!r}")


@dataclass(frozen=True)
class FieldDescriptor:
    """One column: dot-path name, logical type, metadata."""

    name: str
    dtype: LogicalType
    nullable: bool = True
    metadata: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        validate_field_name(self.name)
        if self.name == "id" and self.dtype.kind not in ("int64", "null"):
            raise IncompatibleSchemas("the id column must be Int64")

    @property
    def metadata_dict(self) -> dict[str, str]:
        return dict(self.metadata)

    def with_metadata(self, meta: Mapping[str, str]) -> "FieldDescriptor":
        merged = {**self.metadata_dict, **meta}
        return replace(self, metadata=tuple(sorted(merged.items())))


def _name_key(name: str) -> bytes:
    return name.encode("utf-8")


@dataclass(frozen=True)
class Schema:
    """An ordered set of fields plus table-level metadata.

    Fields are kept sorted ascending by UTF-8 byte order of their names.
    """

    fields: tuple[FieldDescriptor, ...] = ()
    table_metadata: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise IncompatibleSchemas(f"duplicate field names: {names}")
        if names != sorted(names, key=_name_key):
            raise IncompatibleSchemas("schema fields must be sorted by name")

    @classmethod
    def of(
        cls,
        fields: Iterable[FieldDescriptor],
        table_metadata: Mapping[str, str] | None = None,
    ) -> "Schema":
        ordered = tuple(sorted(fields, key=lambda f: _name_key(f.name)))
        meta = tuple(sorted((table_metadata or {}).items()))
        return cls(fields=ordered, table_metadata=meta)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def table_metadata_dict(self) -> dict[str, str]:
        return dict(self.table_metadata)

    def field(self, name: str) -> FieldDescriptor:
        for f in self.fields:
            if f.name == name:
                return f
        from .errors import UnknownField

        raise UnknownField(f"no such field: {name}")

    def has_field(self, name: str) -> bool:
        return any(f.name == name for f in self.fields)

    def same_fields(self, other: "Schema") -> bool:
        """Name/type equality, ignoring metadata."""
        return [(f.name, f.dtype) for f in self.fields] == [
            (f.name, f.dtype) for f in other.fields
        ]


@dataclass
class CanonicalTable:
    """The flattened columnar table every operation exchanges."""

    schema: Schema
    columns: list[list]

    @property
    def row_count(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def column(self, name: str) -> list:
        for f, col in zip(self.schema.fields, self.columns):
            if f.name == name:
                return col
        from .errors import UnknownField

        raise UnknownField(f"no such field: {name}")

    def row(self, i: int) -> dict[str, Any]:
        return {f.name: col[i] for f, col in zip(self.schema.fields, self.columns)}

    def to_rows(self) -> list[dict[str, Any]]:
        return [self.row(i) for i in range(self.row_count)]

    def validate(self) -> None:
        """Check all table invariants; raises on violation (test helper)."""
        if len(self.columns) != len(self.schema.fields):
            raise ValueError("column count does not match schema")
        n = self.row_count
        scalar_types = {
            "null": (),
            "bool": (bool,),
            "int64": (int,),
            "float64": (float,),
            "string": (str,),
        }
        for f, col in zip(self.schema.fields, self.columns):
            if len(col) != n:
                raise ValueError(f"column {f.name} has length {len(col)} != {n}")
            allowed = scalar_types.get(f.dtype.kind)
            if allowed is not None:
                kinds = set(map(type, col))
                kinds.discard(type(None))
                ok = kinds <= set(allowed) and (
                    f.dtype.kind != "int64" or bool not in kinds
                )
                if not ok:
                    raise ValueError(
                        f"column {f.name} holds values not conforming to {f.dtype}"
                    )
                continue
            for v in col:
                if not value_conforms(v, f.dtype):
                    raise ValueError(f"value {v!r} does not conform to {f.dtype}")


def empty_table(schema: Schema | None = None) -> CanonicalTable:
    schema = schema or Schema()
    return CanonicalTable(schema=schema, columns=[[] for _ in schema.fields])


def inject_dummy_for_empty_struct(record: Mapping[str, Any]) -> dict[str, Any]:
    """Replace every empty nested map with {'dummy_field': None}.

    Parquet cannot store empty structs, so a placeholder field keeps the
    struct representable; it is stripped again on rebuild.
    """
    out: dict[str, Any] = {}
    for k, v in record.items():
        if isinstance(v, Mapping):
            out[k] = {DUMMY_FIELD: None} if not v else inject_dummy_for_empty_struct(v)
        else:
            out[k] = v
    return out


def flatten_record(record: Mapping[str, Any]) -> dict[str, Any]:
    """Flatten nested maps into a dot-path -> value map."""
    flat: dict[str, Any] = {}

    def walk(prefix: str, rec: Mapping[str, Any]) -> None:
        for k, v in rec.items():
            if not isinstance(k, str):
                raise EmptyName(f"field names must be strings, got {k!r}")
            validate_field_name(k)
            path = f"{prefix}.{k}" if prefix else k
            if isinstance(v, Mapping):
                walk(path, v)
            else:
                flat[path] = v

    walk("", record)
    return flat


def rebuild_record(flat: Mapping[str, Any]) -> dict[str, Any]:
    """Invert flatten_record, stripping dummy placeholders.

    Raises PathConflict when one path is a strict prefix of another
    (e.g. both 'a' and 'a.b' present).
    """
    root: dict[str, Any] = {}
    for path, value in flat.items():
        segments = path.split(".")
        node = root
        for seg in segments[:-1]:
            child = node.get(seg, _MISSING)
            if child is _MISSING:
                child = {}
                node[seg] = child
            elif not isinstance(child, dict):
                raise PathConflict(f"path {path!r} conflicts with a leaf value")
            node = child
        leaf = segments[-1]
        if leaf in node:
            raise PathConflict(f"path {path!r} conflicts with an existing entry")
        node[leaf] = value
    _strip_dummies(root)
    return root


_MISSING = object()


def _strip_dummies(node: dict[str, Any]) -> None:
    for k, v in list(node.items()):
        if isinstance(v, dict):
            _strip_dummies(v)
    if node.get(DUMMY_FIELD, _MISSING) is None and DUMMY_FIELD in node:
        del node[DUMMY_FIELD]


def infer_column_type(values: Sequence[Any]) -> LogicalType:
    """Least promoted type covering all non-null values in the column."""
    # Fast path: columns of one scalar Python type need no per-value walk.
    kinds = set(map(type, values))
    kinds.discard(type(None))
    if not kinds:
        return NULL
    if len(kinds) == 1:
        k = kinds.pop()
        if k is bool:
            return BOOLEAN
        if k is int:
            return INT64
        if k is float:
            return FLOAT64
        if k is str:
            return STRING
        kinds = {k}
    out = NULL
    for v in values:
        if v is not None:
            out = promote(out, classify_value(v))
    return out


def _leaf_element(t: LogicalType) -> LogicalType:
    while t.kind == "list":
        t = t.element
    return t


def _detect_fixed_shape(values: Sequence[Any], dtype: LogicalType) -> LogicalType:
    """Upgrade a list column to a tensor when all rows share one shape.

    Any null row, ragged row, zero-length dimension, or non-scalar leaf
    keeps the column a plain list.
    """
    leaf = _leaf_element(dtype)
    if leaf.kind not in ("bool", "int64", "float64", "string"):
        return dtype
    shape: Optional[tuple[int, ...]] = None
    for v in values:
        if v is None:
            return dtype
        s = _shape_of(v)
        if s is None or not s or any(d < 1 for d in s):
            return dtype
        if shape is None:
            shape = s
        elif s != shape:
            return dtype
    if shape is None:
        return dtype
    return tensor_of(leaf, shape)


_EXACT_SCALAR = {"bool": bool, "int64": int, "float64": float, "string": str}


def _cast_column(col: list, dtype: LogicalType) -> list:
    """Cast a column's values up to the inferred promoted type."""
    exact = _EXACT_SCALAR.get(dtype.kind)
    if exact is not None:
        kinds = set(map(type, col))
        kinds.discard(type(None))
        if kinds <= {exact} and (dtype.kind != "int64" or bool not in kinds):
            return col
    elif dtype.kind == "null":
        return col
    return [None if v is None else cast_value(v, dtype) for v in col]


def merge_schemas(existing: Schema, incoming: Schema) -> Schema:
    """Union of fields by name, shared names resolved by promotion."""
    by_name: dict[str, FieldDescriptor] = {f.name: f for f in existing.fields}
    for f in incoming.fields:
        old = by_name.get(f.name)
        if old is None:
            by_name[f.name] = f
        else:
            try:
                dtype = promote(old.dtype, f.dtype)
            except HeterogeneousType as e:
                raise IncompatibleSchemas(
                    f"field {f.name!r}: {e}"
                ) from e
            merged_meta = {**old.metadata_dict, **f.metadata_dict}
            by_name[f.name] = FieldDescriptor(
                name=f.name,
                dtype=dtype,
                metadata=tuple(sorted(merged_meta.items())),
            )
    meta = {**existing.table_metadata_dict, **incoming.table_metadata_dict}
    return Schema.of(by_name.values(), meta)


def align_table(table: CanonicalTable, target: Schema) -> CanonicalTable:
    """Reshape a table onto a superset schema.

    Missing fields are filled with null columns; present columns are cast
    upward along the promotion ladder.
    """
    merged = merge_schemas(table.schema, target)
    if not merged.same_fields(target):
        raise IncompatibleSchemas(
            "target schema is not a superset of the table schema"
        )
    n = table.row_count
    existing = {f.name: col for f, col in zip(table.schema.fields, table.columns)}
    types = {f.name: f.dtype for f in table.schema.fields}
    columns: list[list] = []
    for f in target.fields:
        col = existing.get(f.name)
        if col is None:
            columns.append([None] * n)
        elif types[f.name] == f.dtype:
            columns.append(list(col))
        else:
            columns.append([cast_value(v, f.dtype) for v in col])
    return CanonicalTable(schema=target, columns=columns)


def canonicalize_input(
    data: Any,
    treat_fields_as_ragged: Iterable[str] = (),
    convert_to_fixed_shape: bool = True,
) -> CanonicalTable:
    """Convert user input into a canonical flattened table.

    Accepts a sequence of (possibly nested) record mappings, a
    column-name -> value-sequence mapping, or an already-canonical table.
    """
    ragged = set(treat_fields_as_ragged)
    if isinstance(data, CanonicalTable):
        data.validate()
        return data
    if isinstance(data, Mapping):
        columns = {k: list(v) for k, v in data.items()}
        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"column lengths differ: {sorted(lengths)}")
        if any(isinstance(v, Mapping) for col in columns.values() for v in col):
            records = [
                {k: col[i] for k, col in columns.items()}
                for i in range(lengths.pop() if lengths else 0)
            ]
            return canonicalize_input(records, ragged, convert_to_fixed_shape)
        for name in columns:
            validate_field_name(name)
    else:
        flats = [flatten_record(inject_dummy_for_empty_struct(r)) for r in data]
        paths: dict[str, None] = {}
        for flat in flats:
            for p in flat:
                paths[p] = None
        columns = {p: [flat.get(p) for flat in flats] for p in paths}

    fields = []
    for name, col in columns.items():
        try:
            dtype = infer_column_type(col)
        except HeterogeneousType as e:
            raise HeterogeneousType(f"field {name!r}: {e}") from e
        if dtype.kind == "list" and convert_to_fixed_shape and name not in ragged:
            dtype = _detect_fixed_shape(col, dtype)
        columns[name] = _cast_column(col, dtype)
        fields.append(FieldDescriptor(name=name, dtype=dtype))
    schema = Schema.of(fields)
    return CanonicalTable(
        schema=schema, columns=[columns[f.name] for f in schema.fields]
    )


def concat_tables(tables: Sequence[CanonicalTable], schema: Schema) -> CanonicalTable:
    """Concatenate tables that already share the given schema."""
    if len(tables) == 1 and tables[0].schema.same_fields(schema):
        return CanonicalTable(schema=schema, columns=tables[0].columns)
    columns: list[list] = [[] for _ in schema.fields]
    for t in tables:
        aligned = t if t.schema.same_fields(schema) else align_table(t, schema)
        for i, col in enumerate(aligned.columns):
            columns[i].extend(col)
    return CanonicalTable(schema=schema, columns=columns)
