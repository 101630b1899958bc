"""
Matrix and label files.

Binary matrix layout (all little-endian):

    offset 0   4 bytes  magic "UFCL"
    offset 4   u32      format version (1)
    offset 8   u32      rows
    offset 12  u32      cols
    offset 16  f64 * rows * cols, row-major

CSV holds one comma-separated row per line. Label files hold one decimal
integer per line, -1 for an outlier.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from core.errors import FormatError, StorageError

logger = logging.getLogger(__name__)

MAGIC = b"UFCL"
FORMAT_VERSION = 1
HEADER_BYTES = 16
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")

PathLike = Union[str, Path]


def matrix_to_bytes(X) -> bytes:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise FormatError(f"Only 2-D matrices can be stored, got shape {X.shape}")
    header = np.array([FORMAT_VERSION, X.shape[0], X.shape[1]], dtype=_U32).tobytes()
    return MAGIC + header + np.ascontiguousarray(X, dtype=_F64).tobytes()


def matrix_from_bytes(data: bytes, path: Optional[PathLike] = None) -> np.ndarray:
    if len(data) < HEADER_BYTES:
        raise FormatError("Truncated header", path=path, offset=len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"Bad magic {data[:4]!r}", path=path, offset=0)
    version, rows, cols = np.frombuffer(data, dtype=_U32, count=3, offset=4).tolist()
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported format version {version}", path=path, offset=4)
    expected = HEADER_BYTES + rows * cols * _F64.itemsize
    if len(data) != expected:
        raise FormatError(
            f"Header declares {rows}x{cols} ({expected} bytes), file has {len(data)} bytes",
            path=path,
            offset=min(len(data), expected),
        )
    values = np.frombuffer(data, dtype=_F64, count=rows * cols, offset=HEADER_BYTES)
    return values.astype(np.float64).reshape(rows, cols)


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise StorageError(f"Cannot read {e.strerror or e}", path) from e


def _read_text(path: Path) -> str:
    data = _read_bytes(path)
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"Not valid UTF-8: {e.reason}", path=path, offset=e.start) from e


def _write(path: Path, payload: Union[bytes, str]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(payload, bytes):
            path.write_bytes(payload)
        else:
            path.write_text(payload, encoding="utf-8")
    except OSError as e:
        raise StorageError(f"Cannot write {e.strerror or e}", path) from e


def save_matrix(path: PathLike, X) -> None:
    _write(Path(path), matrix_to_bytes(X))


def load_matrix(path: PathLike) -> np.ndarray:
    path = Path(path)
    return matrix_from_bytes(_read_bytes(path), path=path)


def save_csv(path: PathLike, X) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    lines = [",".join(repr(float(v)) for v in row) for row in X.tolist()]
    _write(Path(path), "\n".join(lines) + ("\n" if lines else ""))


def load_csv(path: PathLike) -> np.ndarray:
    """Comma-separated floats; blank lines are skipped, ragged rows rejected."""
    path = Path(path)
    text = _read_text(path)
    rows: list[list[float]] = []
    width: Optional[int] = None
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise FormatError(f"Expected {width} values, got {len(cells)}", path=path, line=number)
        try:
            rows.append([float(cell) for cell in cells])
        except ValueError as e:
            raise FormatError(f"Not a number: {e}", path=path, line=number) from e
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is not None:
        if fmt not in ("binary", "csv"):
            raise FormatError(f"Unknown matrix format {fmt!r}", path=path)
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def save_embeddings(path: PathLike, X, fmt: Optional[str] = None) -> None:
    path = Path(path)
    if _infer_format(path, fmt) == "csv":
        save_csv(path, X)
    else:
        save_matrix(path, X)
    logger.debug(f"Saved {np.shape(X)} matrix to {path}")


def load_embeddings(path: PathLike, fmt: Optional[str] = None) -> np.ndarray:
    """Load a matrix; the format defaults to csv for *.csv and binary otherwise."""
    path = Path(path)
    if _infer_format(path, fmt) == "csv":
        return load_csv(path)
    return load_matrix(path)


def save_labels(path: PathLike, labels) -> None:
    values = np.asarray(labels, dtype=np.int64).reshape(-1).tolist()
    _write(Path(path), "".join(f"{v}\n" for v in values))


def load_labels(path: PathLike, expected_length: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    text = _read_text(path)
    values = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            values.append(int(line.strip()))
        except ValueError as e:
            raise FormatError(f"Not an integer label: {line.strip()!r}", path=path, line=number) from e
    if expected_length is not None and len(values) != expected_length:
        raise FormatError(f"Expected {expected_length} labels, got {len(values)}", path=path)
    return np.array(values, dtype=np.int64)
