"""Binary file formats: feature matrices, named-tensor containers, checkpoints.

Everything is little-endian with an explicit magic and version so loaders can
refuse foreign or truncated files instead of misreading them.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MATRIX_MAGIC = b"F0VCMAT1"
TENSORS_MAGIC = b"F0VCTEN1"
CHECKPOINT_MAGIC = b"F0VCCKP1"
FORMAT_VERSION = 1


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def save_matrix(path, matrix: np.ndarray) -> None:
    """Write a 2-D float64 matrix with an 8-byte magic + version + dims header."""
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise FormatError(f"matrix files are 2-D, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != MATRIX_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
        version, rows, cols = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported matrix version {version}")
        raw = _read_exact(fh, rows * cols * 8, "matrix body")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after matrix body")
    return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()


def save_matrix_csv(path, matrix: np.ndarray) -> None:
    np.savetxt(path, np.asarray(matrix, dtype=np.float64), delimiter=",", fmt="%.10g")


def save_tensors(path, arrays: dict[str, np.ndarray]) -> None:
    """Write a named-tensor container (name, shape, raw little-endian float64)."""
    with open(path, "wb") as fh:
        fh.write(_tensor_container_bytes(arrays))


def _tensor_container_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [TENSORS_MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{max(a.ndim, 0)}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return _read_tensor_container(fh, str(path))


def _read_tensor_container(fh, label: str) -> dict[str, np.ndarray]:
    magic = _read_exact(fh, 8, "magic")
    if magic != TENSORS_MAGIC:
        raise FormatError(f"{label}: bad magic {magic!r}, expected {TENSORS_MAGIC!r}")
    version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"{label}: unsupported container version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
        name = _read_exact(fh, name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = _read_exact(fh, n * 8, f"tensor '{name}'")
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Checkpoint = JSON metadata block + embedded tensor container."""
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(_tensor_container_bytes(arrays))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version, header_len = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        try:
            meta = json.loads(_read_exact(fh, header_len, "metadata").decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: corrupt metadata block: {exc}") from exc
        arrays = _read_tensor_container(fh, str(path))
    return meta, arrays


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
