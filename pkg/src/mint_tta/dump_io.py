"""Binary embedding-dump format and CSV report emission.

Dump layout (all integers little-endian):

    offset  size  field
    0       8     magic "MINTDMP1"
    8       4     version (u32, currently 1)
    12      8     n_samples (u64)
    20      4     dim (u32)
    24      4     n_classes (u32)
    28      4     flags (u32; bit0 = has_labels, bit1 = has_text)
    32      ...   n_samples x dim float32 embeddings, row-major
    ...     ...   n_samples int32 labels            (if bit0)
    ...     ...   n_classes x dim float32 text rows (if bit1)

Values are float32 on disk and float64 in memory. The reader validates the
declared length against the file size before touching any payload, so it
never allocates more than the header claims.
"""

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .metrics import EmbeddingSet
from .synthetic import TextEmbeddings

__all__ = ["DumpHeader", "write_dump", "read_dump", "write_csv", "HEADER_SIZE", "MAGIC"]

MAGIC = b"MINTDMP1"
VERSION = 1
_HEADER_FMT = "<8sIQIII"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)
FLAG_LABELS = 1
FLAG_TEXT = 2

# row-norm validation bands: fine up to 1e-3, warn up to 1e-1, error beyond
NORM_WARN = 1e-3
NORM_ERROR = 1e-1


@dataclass
class DumpHeader:
    n_samples: int
    dim: int
    n_classes: int
    flags: int
    version: int = VERSION

    @property
    def has_labels(self) -> bool:
        return bool(self.flags & FLAG_LABELS)

    @property
    def has_text(self) -> bool:
        return bool(self.flags & FLAG_TEXT)

    def payload_size(self) -> int:
        size = 4 * self.n_samples * self.dim
        if self.has_labels:
            size += 4 * self.n_samples
        if self.has_text:
            size += 4 * self.n_classes * self.dim
        return size

    def pack(self) -> bytes:
        return struct.pack(_HEADER_FMT, MAGIC, self.version, self.n_samples,
                           self.dim, self.n_classes, self.flags)


def write_dump(path, embeddings: EmbeddingSet, text: TextEmbeddings | None = None):
    """Write an embedding set (and optional text embeddings) to `path`."""
    path = Path(path)
    n, d = embeddings.data.shape
    if n < 1 or d < 1:
        raise DataError("dump needs at least one sample and one dimension")
    if embeddings.n_classes < 2:
        raise DataError("dump needs at least two classes")
    if text is not None and text.dim != d:
        raise DataError("text embedding dimension does not match image embeddings")
    flags = 0
    if embeddings.labels is not None:
        flags |= FLAG_LABELS
    if text is not None:
        flags |= FLAG_TEXT
    header = DumpHeader(n_samples=n, dim=d, n_classes=embeddings.n_classes, flags=flags)
    try:
        with open(path, "wb") as fh:
            fh.write(header.pack())
            fh.write(np.ascontiguousarray(embeddings.data, dtype="<f4").tobytes())
            if embeddings.labels is not None:
                fh.write(np.ascontiguousarray(embeddings.labels, dtype="<i4").tobytes())
            if text is not None:
                fh.write(np.ascontiguousarray(text.t, dtype="<f4").tobytes())
    except OSError as exc:
        raise DataError(f"failed to write dump {path}: {exc}") from exc


def _read_header(raw: bytes, path: Path) -> DumpHeader:
    if len(raw) < HEADER_SIZE:
        raise DataError(f"{path}: truncated at byte {len(raw)}, header needs {HEADER_SIZE}")
    magic, version, n, d, c, flags = struct.unpack_from(_HEADER_FMT, raw)
    if magic != MAGIC:
        raise DataError(f"{path}: not a mint dump")
    if version != VERSION:
        raise DataError(f"{path}: unsupported dump version {version}")
    if flags & ~(FLAG_LABELS | FLAG_TEXT):
        raise DataError(f"{path}: unknown flag bits 0x{flags:x}")
    if n < 1 or d < 1 or c < 2:
        raise DataError(f"{path}: invalid header (n={n}, dim={d}, classes={c})")
    return DumpHeader(n_samples=n, dim=d, n_classes=c, flags=flags, version=version)


def read_dump(path) -> tuple[EmbeddingSet, TextEmbeddings | None]:
    """Read and validate a dump; returns double-precision data."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"failed to read dump {path}: {exc}") from exc
    header = _read_header(raw, path)
    expected = HEADER_SIZE + header.payload_size()
    if len(raw) != expected:
        raise DataError(f"{path}: truncated at byte {len(raw)}, expected {expected} bytes")

    offset = HEADER_SIZE
    n, d, c = header.n_samples, header.dim, header.n_classes
    data = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset).reshape(n, d).astype(np.float64)
    offset += 4 * n * d

    labels = None
    if header.has_labels:
        labels = np.frombuffer(raw, dtype="<i4", count=n, offset=offset).astype(np.int64)
        offset += 4 * n
        if labels.min() < 0 or labels.max() >= c:
            raise DataError(f"{path}: label out of range")

    text = None
    if header.has_text:
        trows = np.frombuffer(raw, dtype="<f4", count=c * d, offset=offset).reshape(c, d).astype(np.float64)
        tnorms = np.linalg.norm(trows, axis=1)
        _check_norms(tnorms, path, "text row")
        if np.max(np.abs(tnorms - 1.0)) > 1e-6:
            trows = trows / tnorms[:, None]  # renormalize only sloppy external dumps
        text = TextEmbeddings(t=trows)

    norms = np.linalg.norm(data, axis=1)
    _check_norms(norms, path, "embedding row")
    return EmbeddingSet(data=data, n_classes=c, labels=labels), text


def _check_norms(norms: np.ndarray, path: Path, what: str):
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if worst > NORM_ERROR:
        raise DataError(f"{path}: {what} norms deviate from 1 by {worst:.3g} (limit {NORM_ERROR})")
    if worst > NORM_WARN:
        warnings.warn(f"{path}: {what} norms deviate from 1 by up to {worst:.3g}", stacklevel=3)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if v != v:
            return ""
        return repr(v)  # shortest string that round-trips the double
    return str(value)


def write_csv(path, header_row, rows):
    """RFC-4180-style CSV: UTF-8, LF line endings, round-trip float text."""
    import csv

    path = Path(path)
    width = len(header_row)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header_row)
            for row in rows:
                if len(row) != width:
                    raise DataError(f"csv row has {len(row)} cells, header has {width}")
                writer.writerow([_format_cell(v) for v in row])
    except OSError as exc:
        raise DataError(f"failed to write csv {path}: {exc}") from exc
