"""Tests for the JSON encoder, JSON-lines helpers and the codec registry."""

import json
import subprocess
import sys

import numpy as np
import pytest

from iplearn import DatasetParseError
from iplearn._json import ArrayEncoder, dumps, iter_json_lines, jsonable, read_json, write_json, write_json_lines
from iplearn._registry import known_patterns, resolve_codec


def test_numpy_values_serialize():
    """Arrays, integers, floats and booleans become plain JSON."""
    payload = {"a": np.arange(3), "b": np.float64(0.5), "c": np.int64(7), "d": np.bool_(True)}
    assert json.loads(json.dumps(payload, cls=ArrayEncoder)) == {"a": [0, 1, 2], "b": 0.5, "c": 7, "d": True}


def test_jsonable_recurses():
    assert jsonable({"x": [np.float64(1.5), (np.int32(2),)]}) == {"x": [1.5, [2]]}


def test_floats_roundtrip_exactly(tmp_path):
    values = [0.1 + 0.2, 1.0 / 3.0, 5e-324, -1.7976931348623157e308]
    path = tmp_path / "doc.json"
    write_json(path, {"values": np.array(values)})
    assert read_json(path)["values"] == values


def test_nan_is_refused():
    with pytest.raises(ValueError):
        dumps({"x": float("nan")})


def test_unknown_types_still_fail():
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_json_lines_skip_blank_lines(tmp_path):
    path = tmp_path / "records.jsonl"
    assert write_json_lines(path, [{"a": 1}, {"a": 2}]) == 2
    path.write_text(path.read_text() + "\n\n")
    assert [record for _, record in iter_json_lines(path)] == [{"a": 1}, {"a": 2}]


def test_json_lines_bad_line(tmp_path):
    path = tmp_path / "records.jsonl"
    path.write_text('{"a": 1}\n\n{"a": \n')
    with pytest.raises(DatasetParseError, match="line 3"):
        list(iter_json_lines(path))


# ── Registry ──────────────────────────────────────────────────────────────


@pytest.mark.parametrize(
    ("path", "kind", "codec"),
    [
        ("env.json", "document", "JsonDocumentCodec"),
        ("runs/q.msgpack", "document", "MsgpackDocumentCodec"),
        ("data.jsonl", "records", "JsonLinesCodec"),
        ("data.msgpack", "records", "MsgpackRecordsCodec"),
    ],
)
def test_resolve_codec(path, kind, codec):
    assert type(resolve_codec(path, kind=kind)).__name__ == codec


def test_resolve_codec_unknown():
    with pytest.raises(ValueError, match=r"\*\.jsonl"):
        resolve_codec("data.csv", kind="records")


def test_known_patterns():
    assert known_patterns("document") == ["*.json", "*.msgpack"]


def test_resolve_codec_imports_entry_module(monkeypatch):
    """Entries name their module; it is imported when the pattern matches."""
    from iplearn import _registry

    entry = _registry._RegistryEntry("*.ordered", "document", "collections", "OrderedDict")
    monkeypatch.setattr(_registry, "_REGISTRY", [entry, *_registry._REGISTRY])
    assert type(resolve_codec("x.ordered", kind="document")).__name__ == "OrderedDict"
    assert known_patterns("document")[0] == "*.ordered"


def test_codecs_load_lazily():
    script = "import sys, iplearn; print('iplearn._codecs' in sys.modules, 'msgpack' in sys.modules)"
    out = subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, check=True).stdout
    assert out.split() == ["False", "False"]
