"""Small shared helpers: seeded RNG streams, hashing, JSON emission."""
from __future__ import annotations

import hashlib
import json
import zlib
from pathlib import Path

import numpy as np


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Deterministic RNG stream named by (seed, *keys).

    Strings are mapped to stable ints via crc32 so the same label always
    yields the same stream regardless of call order.
    """
    spawn = [zlib.crc32(str(k).encode()) if not isinstance(k, (int, np.integer)) else int(k)
             for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn))


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dump_json(obj, path) -> None:
    """Write deterministic JSON: sorted keys, repr floats, trailing newline."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def load_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# deterministic binary array container
# ---------------------------------------------------------------------------
# npz archives embed zip metadata that is not stable across writes, which
# would break byte-identical artifact hashing; this flat container holds a
# JSON header plus raw little-endian array bytes and nothing else.

_MAGIC = b"MBIN0001"


def save_arrays(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    import struct

    descs, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        descs.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": descs}, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    import struct

    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a recognized array container")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for d in header["arrays"]:
            raw = f.read(d["nbytes"])
            arrays[d["name"]] = np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).copy()
    return header["meta"], arrays
