"""Command-line front end.

One process, one command; data goes to stdout, diagnostics to stderr.
Exit codes are stable: 0 ok, 2 bad input, 3 schema conflict, 4 usage
error, 5 I/O or dataset corruption.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import bench as bench_mod
from . import errors as err
from . import model as m
from .db import Database
from .query import parse_filter
from .storage import LoadConfig, NormalizeConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SCHEMA = 3
EXIT_USAGE = 4
EXIT_IO = 5

_INPUT_ERRORS = (
    err.HeterogeneousType,
    err.EmptyName,
    err.PathConflict,
    err.IdCollision,
    err.MissingUpdateKeys,
    err.UnknownField,
)
_SCHEMA_ERRORS = (
    err.IncompatibleSchemas,
    err.TypeMismatch,
    err.ProtectedColumn,
)
_IO_ERRORS = (
    err.CorruptDataset,
    err.ManualRecoveryRequired,
    err.IoFailure,
    err.RestoreFailure,
)


class CliError(Exception):
    """Raised for problems detected by the CLI itself."""

    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; remap to the usage code."""

    def error(self, message: str):
        raise CliError(message, EXIT_USAGE)


# -- input/output helpers ------------------------------------------------------


def _load_json_records(source: str) -> list[dict]:
    if source == "-":
        text = sys.stdin.read()
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise CliError(f"cannot read {source}: {exc}", EXIT_IO)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON: {exc}", EXIT_INPUT)
    if not isinstance(data, list) or not all(isinstance(r, dict) for r in data):
        raise CliError("input must be a JSON array of objects", EXIT_INPUT)
    return data


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise CliError(f"bad id list: {text!r}", EXIT_INPUT)


def _parse_filters(exprs: Sequence[str]):
    try:
        return [parse_filter(e) for e in exprs]
    except ValueError as exc:
        raise CliError(f"bad filter: {exc}", EXIT_INPUT)


def _print_json(obj: Any) -> None:
    json.dump(obj, sys.stdout, ensure_ascii=False)
    sys.stdout.write("\n")


def _emit_records(records: list[dict], header: Sequence[str], fmt: str) -> None:
    if fmt == "json":
        _print_json(records)
    elif fmt == "csv":
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        for rec in records:
            writer.writerow([_cell(rec.get(name)) for name in header])
    else:  # table-text
        rows = [[_cell(rec.get(name)) for name in header] for rec in records]
        widths = [
            max(len(str(name)), *(len(row[i]) for row in rows)) if rows else len(name)
            for i, name in enumerate(header)
        ]
        line = "  ".join(str(n).ljust(w) for n, w in zip(header, widths))
        print(line.rstrip())
        for row in rows:
            print("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (list, dict, bool)):
        return json.dumps(value)
    return str(value)


def _table_records(table: m.CanonicalTable) -> tuple[list[str], list[dict]]:
    names = [f.name for f in table.schema.fields]
    return names, table.to_rows()


# -- commands ------------------------------------------------------------------


def cmd_create(args) -> int:
    records = _load_json_records(args.input)
    db = Database(Path(args.db))
    options: dict[str, Any] = {}
    if args.normalize:
        options["normalize_dataset"] = True
        if args.max_rows_per_file:
            options["normalize_config"] = NormalizeConfig(
                max_rows_per_file=args.max_rows_per_file
            )
    summary = db.create(records, **options)
    _print_json(
        {"rows_written": summary.rows_written, "schema_changed": summary.schema_changed}
    )
    return EXIT_OK


def cmd_read(args) -> int:
    db = Database(Path(args.db))
    filters = _parse_filters(args.filter or [])
    columns = args.columns.split(",") if args.columns else None
    ids = _parse_ids(args.ids) if args.ids else None
    if args.nested or args.rebuild_nested:
        records = db.read(
            ids=ids,
            filters=filters,
            rebuild_nested_struct=True,
            rebuild_nested_from_scratch=args.rebuild_nested,
        )
        header = sorted({k for r in records for k in r})
        _emit_records(records, header, args.format)
        return EXIT_OK
    common = dict(ids=ids, columns=columns, include_cols=not args.exclude, filters=filters)
    if args.batch_size:
        out: list[dict] = []
        header: list[str] = []
        for batch in db.read(
            load_format="batches",
            load_config=LoadConfig(batch_size=args.batch_size),
            **common,
        ):
            names, recs = _table_records(batch)
            header, out = names, out + recs
        _emit_records(out, header, args.format)
        return EXIT_OK
    table = db.read(**common)
    header, records = _table_records(table)
    _emit_records(records, header, args.format)
    return EXIT_OK


def cmd_update(args) -> int:
    records = _load_json_records(args.input)
    db = Database(Path(args.db))
    summary = db.update(records)
    _print_json(
        {
            "rows_matched": summary.rows_matched,
            "rows_updated": summary.rows_updated,
            "fields_added": summary.fields_added,
        }
    )
    return EXIT_OK


def cmd_delete(args) -> int:
    modes = [bool(args.ids), bool(args.columns), bool(args.filter)]
    if sum(modes) != 1:
        raise CliError("delete takes exactly one of --ids, --columns, --filter", EXIT_USAGE)
    db = Database(Path(args.db))
    summary = db.delete(
        ids=_parse_ids(args.ids) if args.ids else None,
        columns=args.columns.split(",") if args.columns else None,
        filters=_parse_filters(args.filter) if args.filter else None,
    )
    _print_json(
        {"rows_deleted": summary.rows_deleted, "columns_deleted": summary.columns_deleted}
    )
    return EXIT_OK


def cmd_normalize(args) -> int:
    db = Database(Path(args.db))
    kwargs: dict[str, Any] = {}
    if args.max_rows_per_file:
        kwargs["max_rows_per_file"] = args.max_rows_per_file
    if args.max_rows_per_group:
        kwargs["max_rows_per_group"] = args.max_rows_per_group
    db.normalize(NormalizeConfig(**kwargs) if kwargs else None)
    _print_json({"fragments": len(db.handle.fragments)})
    return EXIT_OK


def cmd_info(args) -> int:
    db = Database(Path(args.db))
    handle = db.handle
    fields = [
        {"name": f.name, "type": str(f.dtype)} for f in handle.schema.fields
    ]
    fragments = []
    for frag in sorted(handle.fragments, key=lambda f: f.index):
        stats = {
            name: {"min": s.min, "max": s.max, "null_count": s.null_count}
            for name, s in sorted(frag.stats.items())
        }
        fragments.append(
            {
                "file": frag.path.name,
                "row_count": frag.row_count,
                "stats": stats,
            }
        )
    _print_json(
        {
            "dataset": handle.dataset_name,
            "fields": fields,
            "num_fragments": len(fragments),
            "fragments": fragments,
        }
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else bench_mod.DEFAULT_SIZES
    root = Path(args.db) if args.db else None
    results = bench_mod.run_suite(args.suite, root=root, sizes=sizes)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            bench_mod.emit_report(results, fh)
    else:
        bench_mod.emit_report(results, sys.stdout)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    db = Database(Path(args.db))
    filters = _parse_filters(args.filter or [])
    table = db.read(columns=[args.column], filters=filters)
    values = [v for v in table.column(args.column) if v is not None]
    if args.agg == "count":
        result: Any = len(values)
    elif not values:
        result = None
    elif args.agg == "min":
        result = min(values)
    else:
        result = max(values)
    _print_json(result)
    return EXIT_OK


# -- wiring --------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="parqdb", description="Embedded Parquet-backed dataset store.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, needs_db: bool = True, needs_format: bool = False):
        p = sub.add_parser(name)
        if needs_db:
            p.add_argument("--db", required=True, help="dataset directory")
        if needs_format:
            p.add_argument(
                "--format", choices=("json", "csv", "table-text"), default="json"
            )
        p.set_defaults(func=func)
        return p

    p = add("create", cmd_create)
    p.add_argument("--input", required=True, help="JSON file, or '-' for stdin")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--max-rows-per-file", type=int, default=0)

    p = add("read", cmd_read, needs_format=True)
    p.add_argument("--columns", help="comma-separated dot-paths")
    p.add_argument("--exclude", action="store_true", help="treat --columns as exclusions")
    p.add_argument("--ids", help="comma-separated ids")
    p.add_argument("--filter", action="append", help="predicate expression (repeatable)")
    p.add_argument("--batch-size", type=int, default=0)
    p.add_argument("--nested", action="store_true", help="rebuild nested records")
    p.add_argument("--rebuild-nested", action="store_true", help="force mirror rebuild")

    p = add("update", cmd_update)
    p.add_argument("--input", required=True, help="JSON file, or '-' for stdin")

    p = add("delete", cmd_delete)
    p.add_argument("--ids")
    p.add_argument("--columns")
    p.add_argument("--filter", action="append")

    p = add("normalize", cmd_normalize)
    p.add_argument("--max-rows-per-file", type=int, default=0)
    p.add_argument("--max-rows-per-group", type=int, default=0)

    add("info", cmd_info)

    p = add("bench", cmd_bench, needs_db=False)
    p.add_argument("--db", help="working directory for benchmark datasets")
    p.add_argument("--suite", required=True, choices=sorted(bench_mod.SUITES))
    p.add_argument("--sizes", help="comma-separated row counts")
    p.add_argument("--out", help="write CSV report to this file")

    p = add("aggregate", cmd_aggregate)
    p.add_argument("--column", required=True)
    p.add_argument("--agg", required=True, choices=("min", "max", "count"))
    p.add_argument("--filter", action="append")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except err.MixedDeleteModes as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _SCHEMA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (*_IO_ERRORS, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
