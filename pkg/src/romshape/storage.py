"""Bit-exact matrix and manifest persistence.

Matrices are stored as raw little-endian float64 payloads in row-major order,
each described by a JSON descriptor {rows, cols, dtype, layout, sha256}. The
descriptor lives in whatever JSON document the caller maintains (trial meta,
model header, manifest). Checksums make corruption loud and reruns comparable.
"""

import hashlib
import json
import os

import numpy as np

DTYPE_TAG = "f64le"
LAYOUT_TAG = "row-major"


def matrix_bytes(M):
    M = np.ascontiguousarray(np.asarray(M, dtype=float))
    return M.astype("<f8", copy=False).tobytes(order="C")


def save_matrix(path, M):
    """Write M as f64le row-major; return its JSON descriptor."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    payload = matrix_bytes(M)
    with open(path, "wb") as fh:
        fh.write(payload)
    return {
        "rows": int(M.shape[0]),
        "cols": int(M.shape[1]),
        "dtype": DTYPE_TAG,
        "layout": LAYOUT_TAG,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }


def load_matrix(path, desc):
    """Read a matrix back, verifying length and checksum against desc."""
    if desc.get("dtype") != DTYPE_TAG or desc.get("layout") != LAYOUT_TAG:
        raise ValueError(f"unsupported matrix format in descriptor for {path}")
    rows, cols = int(desc["rows"]), int(desc["cols"])
    with open(path, "rb") as fh:
        payload = fh.read()
    if len(payload) != rows * cols * 8:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, header says {rows}x{cols}"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != desc["sha256"]:
        raise ValueError(f"{path}: checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").astype(float).reshape(rows, cols)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def json_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(dirpath, config_hash, version, extra=None):
    """Write dirpath/manifest.json with per-file checksums.

    Every file under dirpath (except the manifest itself) is checksummed so
    that identical configs can be compared by comparing manifests.
    """
    files = {}
    for root, _, names in os.walk(dirpath):
        for name in sorted(names):
            if name == "manifest.json":
                continue
            full = os.path.join(root, name)
            rel = os.path.relpath(full, dirpath)
            files[rel.replace(os.sep, "/")] = file_sha256(full)
    manifest = {
        "config_hash": config_hash,
        "tool_version": version,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    write_json(os.path.join(dirpath, "manifest.json"), manifest)
    return manifest
