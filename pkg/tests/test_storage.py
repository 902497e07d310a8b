"""Tests for fragment storage, transactions, and normalization."""

import hashlib
import math
import random

import pytest

from parqdb import model as m
from parqdb import storage
from parqdb.errors import (
    CorruptDataset,
    IdCollision,
    ManualRecoveryRequired,
    NestedTransaction,
    RestoreFailure,
)


def make_table(rows, **canon):
    return m.canonicalize_input(rows, **canon)


def ingest(handle, rows):
    table = storage.assign_ids(make_table(rows), handle)
    merged = m.merge_schemas(handle.schema, table.schema)
    if not merged.same_fields(handle.schema):
        if handle.fragments:
            storage.rewrite_all_fragments(handle, merged)
        else:
            handle.schema = merged
    return storage.write_fragment(handle, m.align_table(table, merged))


def dir_digest(path):
    """Byte-level digest of every fragment file in a dataset directory."""
    out = {}
    for p in sorted(path.iterdir()):
        if p.suffix == ".parquet":
            out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestOpenDataset:
    def test_empty(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        assert h.fragments == []
        assert h.max_id == -1

    def test_reopen_recovers_max_id(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": i} for i in range(3)])
        h2 = storage.open_dataset(tmp_path / "ds")
        assert h2.max_id == 2
        assert h2.row_count == 3

    def test_non_matching_file_ignored(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": 1}])
        (tmp_path / "ds" / "README.txt").write_text("not a fragment")
        (tmp_path / "ds" / "other_0.parquet").write_text("wrong name")
        h2 = storage.open_dataset(tmp_path / "ds")
        assert len(h2.fragments) == 1

    def test_footer_fidelity(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        h.schema = m.Schema.of([], {"owner": "tests"})
        ingest(
            h,
            [
                {"v": [[1, 2], [3, 4]], "n": None},
                {"v": [[5, 6], [7, 8]], "n": None},
            ],
        )
        h2 = storage.open_dataset(tmp_path / "ds")
        assert h2.schema == h.schema
        assert h2.schema.field("v").dtype == m.tensor_of(m.INT64, (2, 2))
        assert h2.schema.table_metadata_dict == {"owner": "tests"}

    def test_corrupt_fragment(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": 1}])
        frag = h.fragments[0].path
        frag.write_bytes(b"garbage")
        with pytest.raises(CorruptDataset):
            storage.open_dataset(tmp_path / "ds")

    def test_stale_backup_requires_manual_recovery(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        (h.db_path / storage.BACKUP_DIRNAME).mkdir()
        with pytest.raises(ManualRecoveryRequired):
            storage.open_dataset(tmp_path / "ds")

    def test_initial_fields(self, tmp_path):
        h = storage.open_dataset(
            tmp_path / "ds", initial_fields=[m.FieldDescriptor("x", m.INT64)]
        )
        assert h.schema.names == ["x"]


class TestAssignIds:
    def test_empty_dataset_starts_at_zero(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        t = storage.assign_ids(make_table([{"x": 1}] * 3), h)
        assert t.column("id") == [0, 1, 2]

    def test_zero_rows(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        t = storage.assign_ids(make_table([]), h)
        assert t.row_count == 0
        assert h.max_id == -1

    def test_continuation(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": i} for i in range(3)])
        assert h.max_id == 2
        t = storage.assign_ids(make_table([{"x": 1}, {"x": 2}]), h)
        # Sequential-counter oracle: ids continue one past the maximum.
        assert t.column("id") == [3, 4]

    def test_collision(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        with pytest.raises(IdCollision):
            storage.assign_ids(make_table([{"id": 7}]), h)


class TestTransactions:
    def test_noop_rollback(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": 1}])
        before = dir_digest(h.db_path)
        g = storage.begin_transaction(h)
        storage.rollback(h, g)
        assert dir_digest(h.db_path) == before

    def test_rollback_removes_new_fragment(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": 1}])
        before = dir_digest(h.db_path)
        g = storage.begin_transaction(h)
        ingest(h, [{"x": 2}])
        storage.rollback(h, g)
        assert dir_digest(h.db_path) == before
        assert h.max_id == 0

    def test_rollback_restores_deleted_fragment_bytes(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": 1}])
        before = dir_digest(h.db_path)
        g = storage.begin_transaction(h)
        h.fragments[0].path.unlink()
        storage.rollback(h, g)
        assert dir_digest(h.db_path) == before

    def test_nested_transaction_rejected(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        storage.begin_transaction(h)
        with pytest.raises(NestedTransaction):
            storage.begin_transaction(h)

    def test_missing_backup_surfaces(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        g = storage.begin_transaction(h)
        import shutil

        shutil.rmtree(g.backup_dir)
        with pytest.raises(RestoreFailure):
            storage.rollback(h, g)

    def test_commit_removes_backup(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        g = storage.begin_transaction(h)
        storage.commit(h, g)
        assert not h.backup_path.exists()
        storage.begin_transaction(h)  # reopenable after commit


class TestNormalize:
    def rows_by_id(self, handle):
        t = storage.read_all(handle)
        return sorted(map(tuple, zip(*t.columns)))

    def test_even_split_25000(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": i} for i in range(25000)])
        storage.normalize(h, storage.NormalizeConfig(max_rows_per_file=10000))
        counts = sorted((f.row_count for f in h.fragments), reverse=True)
        # Even-split formula: ceil(25000/10000)=3 files, sizes within 1 row.
        assert counts == [8334, 8333, 8333]
        assert [f.index for f in h.fragments] == [0, 1, 2]

    def test_conservation(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        rng = random.Random(0)
        for _ in range(4):
            ingest(h, [{"x": rng.randint(0, 100)} for _ in range(rng.randint(1, 50))])
        before = self.rows_by_id(h)
        storage.normalize(h, storage.NormalizeConfig(max_rows_per_file=17))
        assert self.rows_by_id(h) == before
        total = h.row_count
        assert len(h.fragments) == math.ceil(total / 17)
        counts = [f.row_count for f in h.fragments]
        assert max(counts) - min(counts) <= 1

    def test_empty_dataset(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        storage.normalize(h)
        assert h.fragments == []

    def test_idempotent(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": i} for i in range(100)])
        cfg = storage.NormalizeConfig(max_rows_per_file=30)
        storage.normalize(h, cfg)
        first = [f.row_count for f in h.fragments]
        storage.normalize(h, cfg)
        assert [f.row_count for f in h.fragments] == first

    def test_streaming_matches_table_mode(self, tmp_path):
        for mode, batch in (("table", None), ("batches", 7)):
            h = storage.open_dataset(tmp_path / f"ds_{mode}")
            ingest(h, [{"x": i} for i in range(83)])
            cfg = storage.NormalizeConfig(
                load_format=mode, batch_size=batch, max_rows_per_file=20
            )
            storage.normalize(h, cfg)
            assert self.rows_by_id(h) == [(i, i) for i in range(83)]

    def test_preserves_ascending_id_order(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"x": i} for i in range(40)])
        storage.normalize(h, storage.NormalizeConfig(max_rows_per_file=9))
        ids = storage.read_all(h).column("id")
        assert ids == sorted(ids)


class TestRewriteAllFragments:
    def test_schema_superset_rewrite(self, tmp_path):
        h = storage.open_dataset(tmp_path / "ds")
        ingest(h, [{"a": 1}, {"a": 2}])
        new = m.merge_schemas(
            h.schema, m.Schema.of([m.FieldDescriptor("b", m.STRING)])
        )
        storage.rewrite_all_fragments(h, new)
        t = storage.read_all(h)
        assert t.column("b") == [None, None]
        assert t.column("a") == [1, 2]
        h2 = storage.open_dataset(tmp_path / "ds")
        assert h2.schema.same_fields(new)


class TestNormalizeConfig:
    def test_defaults_from_reference_table(self):
        cfg = storage.NormalizeConfig()
        assert cfg.load_format == "table"
        assert cfg.batch_size is None
        assert cfg.batch_readahead == 16
        assert cfg.fragment_readahead == 4
        assert cfg.use_threads is True
        assert cfg.max_partitions == 1024
        assert cfg.max_open_files == 1024
        assert cfg.max_rows_per_file == 10000
        assert cfg.min_rows_per_group == 0
        assert cfg.max_rows_per_group == 10000

    def test_group_bounds_validated(self):
        with pytest.raises(ValueError):
            storage.NormalizeConfig(min_rows_per_group=50, max_rows_per_group=10)

    def test_load_config_defaults(self):
        cfg = storage.LoadConfig()
        assert cfg.batch_size == 131072
        assert cfg.batch_readahead == 16
        assert cfg.fragment_readahead == 4
        assert cfg.use_threads is True
