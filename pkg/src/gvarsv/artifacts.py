"""Deterministic on-disk artifacts: hashed manifests and zip-of-npy bundles."""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()


def config_hash(cfg: Mapping) -> str:
    return sha256_bytes(canonical_json(cfg))


def write_json(path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=str) + "\n")


def save_bundle(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    """Zip of .npy members plus meta.json with fixed timestamps (byte-reproducible)."""
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_EPOCH)
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, json.dumps({"format_version": FORMAT_VERSION, **meta},
                                     sort_keys=True, indent=1, default=str))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_bundle(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported artifact version {meta.get('format_version')}")
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)),
                                                             allow_pickle=False)
    return arrays, meta
