import json

import numpy as np

from mortbench.util import (
    derive_rng,
    dump_json,
    load_arrays,
    load_json,
    round_half_up,
    save_arrays,
    sha256_bytes,
    sha256_file,
)


def test_derive_rng_deterministic_and_keyed():
    a = derive_rng(42, "x").normal(size=5)
    b = derive_rng(42, "x").normal(size=5)
    c = derive_rng(42, "y").normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_derive_rng_mixed_key_types():
    a = derive_rng(7, "tree", 3).integers(0, 1000, size=4)
    b = derive_rng(7, "tree", 3).integers(0, 1000, size=4)
    assert np.array_equal(a, b)


def test_round_half_up():
    assert round_half_up(0.5) == 1
    assert round_half_up(1.5) == 2  # not banker's rounding
    assert round_half_up(2.4) == 2
    assert round_half_up(-0.5) == 0


def test_save_load_arrays_roundtrip(tmp_path):
    arrays = {
        "a": np.arange(12, dtype=np.float64).reshape(3, 4),
        "b": np.array([1, 0, 1], dtype=np.int64),
        "empty": np.zeros((0, 4)),
    }
    meta = {"names": ["x", "y"], "seed": 42}
    path = tmp_path / "pack.bin"
    save_arrays(path, meta, arrays)
    meta2, arrays2 = load_arrays(path)
    assert meta2 == meta
    assert set(arrays2) == set(arrays)
    for k in arrays:
        assert arrays2[k].dtype == arrays[k].dtype
        assert np.array_equal(arrays2[k], arrays[k])


def test_save_arrays_byte_deterministic(tmp_path):
    arrays = {"z": np.linspace(0, 1, 7), "a": np.eye(3)}
    save_arrays(tmp_path / "p1.bin", {"k": 1}, arrays)
    save_arrays(tmp_path / "p2.bin", {"k": 1}, dict(reversed(arrays.items())))
    assert (tmp_path / "p1.bin").read_bytes() == (tmp_path / "p2.bin").read_bytes()


def test_dump_json_sorted_and_stable(tmp_path):
    dump_json({"b": 1, "a": [2, 3]}, tmp_path / "x.json")
    text = (tmp_path / "x.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
    assert load_json(tmp_path / "x.json") == {"b": 1, "a": [2, 3]}


def test_sha256_file_matches_bytes(tmp_path):
    payload = b"some bytes\n"
    p = tmp_path / "f"
    p.write_bytes(payload)
    assert sha256_file(p) == sha256_bytes(payload)
    assert sha256_bytes(payload) == json.loads(json.dumps(sha256_bytes(payload)))
