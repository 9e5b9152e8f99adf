"""Versioned binary checkpoints.

Layout (little-endian)::

    b"LTRF" | u32 format version | u32 CRC32C(payload) | u64 payload length
    payload = u32 manifest length | manifest (UTF-8 JSON) | array data

The manifest records the config, vocabularies, RNG stream states, the batch
cursor, the global step, and for every array its name, shape and byte
offset. Arrays are float64, C order.
"""

import json
import struct
from pathlib import Path

import crc32c
import numpy as np

from ltr.core import AdagradState
from ltr.data import BatchCursor
from ltr.errors import CheckpointCorruptError, CheckpointShapeError, CheckpointVersionError, ConfigError
from ltr.features import Vocabulary
from ltr.model import RankingConfig, build_model, expected_param_shapes

MAGIC = b"LTRF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_LEN = struct.Struct("<I")

PARAM_PREFIX = "param/"
ACCUM_PREFIX = "adagrad/"


def _encode(model):
    arrays = []
    for name in sorted(model.params):
        arrays.append((PARAM_PREFIX + name, model.params[name]))
    for name in sorted(model.optimizer.accumulators):
        arrays.append((ACCUM_PREFIX + name, model.optimizer.accumulators[name]))
    entries, blobs, offset = [], [], 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = {
        "config": model.config.to_dict(),
        "vocabularies": [model.transform.vocabularies[v].to_dict() for v in sorted(model.transform.vocabularies)],
        "global_step": model.global_step,
        "rng": model.rngs.state(),
        "cursor": None if model.cursor is None else {
            "n": model.cursor.n, **model.cursor.state()
        },
        "arrays": entries,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _LEN.pack(len(head)) + head + b"".join(blobs)


def save_checkpoint(model, path):
    payload = _encode(model)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, crc32c.crc32c(payload), len(payload))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)
    return path


def _read(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointCorruptError(f"{path}: truncated header")
    magic, version, crc, length = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointCorruptError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload = raw[_HEADER.size:]
    if len(payload) != length:
        raise CheckpointCorruptError(f"{path}: payload is {len(payload)} bytes, header says {length}")
    if crc32c.crc32c(payload) != crc:
        raise CheckpointCorruptError(f"{path}: checksum mismatch")
    (mlen,) = _LEN.unpack_from(payload)
    try:
        manifest = json.loads(payload[_LEN.size:_LEN.size + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: unreadable manifest ({exc})") from None
    data = payload[_LEN.size + mlen:]
    arrays = {}
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["nbytes"] != 8 * count or e["offset"] + e["nbytes"] > len(data):
            raise CheckpointShapeError(f"{path}: array {e['name']} does not match its declared shape")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return manifest, arrays


def load_checkpoint(path):
    """Rebuilds the model saved by ``save_checkpoint``.

    Raises ``CheckpointVersionError``, ``CheckpointCorruptError`` or
    ``CheckpointShapeError``.
    """
    manifest, arrays = _read(path)
    config = RankingConfig.from_dict(manifest["config"])
    vocabs = {d["id"]: Vocabulary.from_dict(d) for d in manifest["vocabularies"]}
    params = {k[len(PARAM_PREFIX):]: v for k, v in arrays.items() if k.startswith(PARAM_PREFIX)}
    accum = {k[len(ACCUM_PREFIX):]: v for k, v in arrays.items() if k.startswith(ACCUM_PREFIX)}
    try:
        model = build_model(config, vocabularies=vocabs, params=params)
    except ConfigError as exc:
        raise CheckpointShapeError(f"{path}: {exc}") from None
    shapes = expected_param_shapes(model.scorer, model.transform)
    for name, acc in accum.items():
        if shapes.get(name) != acc.shape:
            raise CheckpointShapeError(f"{path}: accumulator {name} has shape {acc.shape}")
    model.head.optimizer = AdagradState(
        config.learning_rate, config.epsilon, config.initial_accumulator, accumulators=accum
    )
    model.global_step = manifest["global_step"]
    model.rngs.set_state(manifest["rng"])
    cur = manifest.get("cursor")
    if cur is not None:
        model.cursor = BatchCursor(cur["n"], config.batch_size, True, model.rngs["batches"])
        model.cursor.set_state(cur)
    return model
