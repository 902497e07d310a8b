"""Embedded, serverless columnar database on Parquet fragment files."""

from .db import (
    CreateRequest,
    CreateSummary,
    Database,
    DeleteRequest,
    DeleteSummary,
    UpdateRequest,
    UpdateSummary,
)
from .model import (
    BOOLEAN,
    FLOAT64,
    INT64,
    NULL,
    STRING,
    CanonicalTable,
    FieldDescriptor,
    LogicalType,
    Schema,
    canonicalize_input,
    list_of,
    tensor_of,
)
from .query import And, Compare, IsNull, Not, Or, ReadRequest, parse_filter
from .storage import LoadConfig, NormalizeConfig

__all__ = [
    "And",
    "BOOLEAN",
    "CanonicalTable",
    "Compare",
    "CreateRequest",
    "CreateSummary",
    "Database",
    "DeleteRequest",
    "DeleteSummary",
    "FieldDescriptor",
    "FLOAT64",
    "INT64",
    "IsNull",
    "LoadConfig",
    "LogicalType",
    "NormalizeConfig",
    "Not",
    "NULL",
    "Or",
    "ReadRequest",
    "Schema",
    "STRING",
    "UpdateRequest",
    "UpdateSummary",
    "canonicalize_input",
    "list_of",
    "parse_filter",
    "tensor_of",
]
