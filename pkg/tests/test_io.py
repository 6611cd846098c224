"""Determinism and round-trip checks for the persistence layer."""

import json

import numpy as np
import pytest

from wflab.io import (SNAPSHOT_MAGIC, canonical_json, config_hash,
                      format_cell, read_report, read_snapshots, write_csv,
                      write_report, write_snapshots)


class TestCells:
    def test_float_round_trip(self):
        for x in (0.1, 1e-300, -3.5e7, np.float64(2.0) / 3.0, 1.0):
            assert float(format_cell(x)) == float(x)

    def test_shortest_repr(self):
        assert format_cell(0.1) == "0.1"
        assert format_cell(np.float64(0.25)) == "0.25"

    def test_int_and_bool(self):
        assert format_cell(np.int64(7)) == "7"
        assert format_cell(True) == "true"
        assert format_cell(np.bool_(False)) == "false"

    def test_string_passthrough(self):
        assert format_cell("T=0.5") == "T=0.5"


class TestCsv:
    def test_bytes_reproducible(self, tmp_path):
        rows = [[0, 0.1, "x"], [1, 2.0 / 3.0, "y"]]
        p1 = write_csv(tmp_path / "a.csv", ["i", "v", "tag"], rows)
        p2 = write_csv(tmp_path / "b.csv", ["i", "v", "tag"], rows)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == "i,v,tag"
        assert lines[1] == "0,0.1,x"

    def test_row_width_checked(self, tmp_path):
        with pytest.raises(ValueError, match="cells"):
            write_csv(tmp_path / "c.csv", ["a", "b"], [[1]])

    def test_creates_parent_dirs(self, tmp_path):
        p = write_csv(tmp_path / "deep" / "dir" / "c.csv", ["a"], [[1]])
        assert p.is_file()


class TestJson:
    def test_sorted_keys(self):
        s = canonical_json({"b": 1, "a": {"z": 2, "y": 3}})
        assert s.index('"a"') < s.index('"b"')
        assert s.index('"y"') < s.index('"z"')

    def test_numpy_values_serialized(self):
        payload = {"x": np.float64(0.5), "n": np.int32(3),
                   "arr": np.arange(3.0), "flag": np.bool_(True)}
        parsed = json.loads(canonical_json(payload))
        assert parsed == {"x": 0.5, "n": 3, "arr": [0.0, 1.0, 2.0],
                          "flag": True}

    def test_nonfinite_values_survive(self):
        parsed = json.loads(canonical_json({"x": np.inf, "y": np.nan}))
        assert parsed["x"] == "inf"
        assert parsed["y"] == "nan"

    def test_hash_independent_of_key_order(self):
        h1 = config_hash({"a": 1, "b": [1.5, 2.5]})
        h2 = config_hash({"b": [1.5, 2.5], "a": 1})
        assert h1 == h2
        assert len(h1) == 64

    def test_hash_sensitive_to_values(self):
        assert config_hash({"a": 1}) != config_hash({"a": 2})


class TestReport:
    def test_timestamp_isolated_to_one_key(self, tmp_path):
        payload = {"result": 1.25, "nested": {"k": [1, 2]}}
        p1 = write_report(tmp_path / "r1.json", payload)
        p2 = write_report(tmp_path / "r2.json", payload)
        raw1 = json.loads(p1.read_text())
        raw2 = json.loads(p2.read_text())
        assert "written_at" in raw1
        raw1.pop("written_at")
        raw2.pop("written_at")
        assert raw1 == raw2 == payload

    def test_read_drops_timestamp(self, tmp_path):
        p = write_report(tmp_path / "r.json", {"a": 1})
        assert read_report(p) == {"a": 1}
        assert "written_at" in read_report(p, drop_timestamp=False)

    def test_bytes_reproducible_without_timestamp(self, tmp_path):
        payload = {"z": 0.1, "a": [True, None, "s"]}
        p1 = write_report(tmp_path / "r1.json", payload, timestamp=False)
        p2 = write_report(tmp_path / "r2.json", payload, timestamp=False)
        assert p1.read_bytes() == p2.read_bytes()


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        times = np.linspace(0.0, 2.0, 5)
        frames = rng.normal(size=(5, 16))
        p = write_snapshots(tmp_path / "s.wfl1", times, frames, L=40.0)
        t2, f2, L2 = read_snapshots(p)
        assert L2 == 40.0
        np.testing.assert_array_equal(t2, times)
        np.testing.assert_array_equal(f2, frames)

    def test_magic_bytes(self, tmp_path):
        p = write_snapshots(tmp_path / "s.wfl1", [0.0], np.zeros((1, 4)), 1.0)
        assert p.read_bytes()[:4] == SNAPSHOT_MAGIC

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            read_snapshots(p)

    def test_rejects_truncated_payload(self, tmp_path):
        p = write_snapshots(tmp_path / "s.wfl1", [0.0, 1.0],
                            np.zeros((2, 8)), 1.0)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError, match="doubles"):
            read_snapshots(p)

    def test_shape_mismatch_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="frames"):
            write_snapshots(tmp_path / "s.wfl1", [0.0, 1.0],
                            np.zeros((3, 8)), 1.0)
