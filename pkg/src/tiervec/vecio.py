"""Readers and writers for the fvecs / bvecs / ivecs benchmark formats.

Every record is a little-endian int32 dimension followed by that many
elements (float32, uint8 or int32). All records in a file must share one
dimension; malformed input raises ``FormatError`` carrying the byte offset.
"""

import numpy as np

from .core import VectorDataset

KIND_DTYPES = {
    "fvecs": np.dtype("<f4"),
    "bvecs": np.dtype("<u1"),
    "ivecs": np.dtype("<i4"),
}


class FormatError(ValueError):
    """Malformed vector file; str(err) names the offending byte offset."""


def _parse_records(data: bytes, kind: str, path: str) -> np.ndarray:
    elem = KIND_DTYPES[kind]
    if len(data) == 0:
        return np.empty((0, 0), dtype=elem)
    dim = int(np.frombuffer(data, dtype="<i4", count=1)[0])
    if dim <= 0:
        raise FormatError(f"{path}: non-positive dimension {dim} at byte 0")
    rec_bytes = 4 + dim * elem.itemsize
    if len(data) % rec_bytes != 0:
        raise FormatError(f"{path}: truncated record at byte "
                          f"{len(data) - len(data) % rec_bytes}")
    n = len(data) // rec_bytes
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n, rec_bytes)
    dims = raw[:, :4].copy().view("<i4")[:, 0]
    bad = np.flatnonzero(dims != dim)
    if bad.size:
        raise FormatError(f"{path}: record {int(bad[0])} at byte "
                          f"{int(bad[0]) * rec_bytes} has dimension "
                          f"{int(dims[bad[0]])}, expected {dim}")
    return raw[:, 4:].copy().view(elem).reshape(n, dim)


def read_vecs(path: str, kind: str = None):
    """Read a vector file; fvecs/bvecs yield a VectorDataset, ivecs an id matrix."""
    kind = kind or infer_kind(path)
    if kind not in KIND_DTYPES:
        raise ValueError(f"unknown vector file kind {kind!r}")
    with open(path, "rb") as fh:
        data = fh.read()
    arr = _parse_records(data, kind, path)
    if kind == "ivecs":
        return arr.astype(np.int32)
    elem = np.float32 if kind == "fvecs" else np.uint8
    return VectorDataset(np.ascontiguousarray(arr, dtype=elem))


def write_vecs(path: str, data, kind: str = None) -> None:
    """Inverse of ``read_vecs``; accepts a VectorDataset or a 2-D array."""
    kind = kind or infer_kind(path)
    if kind not in KIND_DTYPES:
        raise ValueError(f"unknown vector file kind {kind!r}")
    arr = data.vectors if isinstance(data, VectorDataset) else np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    elem = KIND_DTYPES[kind]
    arr = np.ascontiguousarray(arr, dtype=elem)
    n, dim = arr.shape
    out = np.empty((n, 4 + dim * elem.itemsize), dtype=np.uint8)
    out[:, :4] = np.full((n, 1), dim, dtype="<i4").view(np.uint8)
    out[:, 4:] = arr.view(np.uint8)
    with open(path, "wb") as fh:
        fh.write(out.tobytes())


def infer_kind(path: str) -> str:
    for kind in KIND_DTYPES:
        if str(path).endswith("." + kind):
            return kind
    raise ValueError(f"cannot infer vector kind from {path!r}")
