"""JSON checkpoints with checksummed binary arrays.

Arrays are stored as base64 of their little-endian ``float64``/``int64``
bytes together with a SHA-256 of those bytes, so a flipped weight byte is
caught on load. RNG states use numpy's PCG64 state dictionaries, tagged
with :data:`RNG_FORMAT`.
"""
from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import IntegrityError, MissingFileError

FORMAT_VERSION = 1
RNG_FORMAT = "numpy-PCG64-v1"


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
    raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    return {"dtype": dtype, "shape": list(arr.shape),
            "data": base64.b64encode(raw).decode("ascii"),
            "sha256": hashlib.sha256(raw).hexdigest()}


def decode_array(d: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(d["data"], validate=True)
    except (ValueError, KeyError) as exc:
        raise IntegrityError(f"undecodable array payload: {exc}") from exc
    if hashlib.sha256(raw).hexdigest() != d["sha256"]:
        raise IntegrityError("array checksum mismatch")
    arr = np.frombuffer(raw, dtype=d["dtype"])
    if arr.size != int(np.prod(d["shape"])):
        raise IntegrityError("array size does not match its recorded shape")
    return arr.reshape(d["shape"]).astype(np.float64 if d["dtype"] == "<f8" else np.int64)


def encode_tree(obj):
    """Recursively replace numpy arrays by encoded dicts."""
    if isinstance(obj, np.ndarray):
        return {"__array__": encode_array(obj)}
    if isinstance(obj, dict):
        return {k: encode_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode_tree(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def decode_tree(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return decode_array(obj["__array__"])
        return {k: decode_tree(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [decode_tree(v) for v in obj]
    return obj


def rng_state(gen: np.random.Generator) -> dict:
    return {"format": RNG_FORMAT, "state": gen.bit_generator.state}


def rng_from_state(d: dict) -> np.random.Generator:
    if d.get("format") != RNG_FORMAT:
        raise IntegrityError(f"unsupported RNG format {d.get('format')!r}")
    bg = np.random.PCG64()
    bg.state = d["state"]
    return np.random.Generator(bg)


def save_checkpoint(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = encode_tree(payload)
    text = json.dumps(body, sort_keys=True)
    doc = {"format_version": FORMAT_VERSION,
           "payload_sha256": hashlib.sha256(text.encode()).hexdigest(),
           "payload": body}
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
    tmp.replace(path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"checkpoint {path} not found")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"checkpoint {path} is not valid JSON") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"unsupported checkpoint version {doc.get('format_version')}")
    body = doc["payload"]
    # arrays are verified individually first so that corrupted weights are named as such
    payload = decode_tree(body)
    text = json.dumps(body, sort_keys=True)
    if hashlib.sha256(text.encode()).hexdigest() != doc["payload_sha256"]:
        raise IntegrityError(f"checkpoint {path} payload checksum mismatch")
    return payload
