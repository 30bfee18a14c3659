"""Feature, label and assignment file formats.

Binary feature file (``.gcdf``)::

    b"GCDF" | u16 version=1 | u64 n_points | u32 dim
    n_points * dim float32, little-endian, row-major
    u8 has_labels | n_points int64 labels (-1 = unlabelled)    # optional

CSV feature file: a ``dim=<D>`` header, then one line per point with ``D``
decimal floats and an optional trailing ``label=<id|none>`` field.

Label sidecar CSV: ``index,label,is_labelled``.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import FormatError

MAGIC = b"GCDF"
VERSION = 1
_HEADER = struct.Struct("<4sHQI")


def _is_csv(path) -> bool:
    return Path(path).suffix.lower() in (".csv", ".txt")


def encode_binary(X, labels=None) -> bytes:
    X = np.asarray(X)
    if X.ndim != 2:
        raise FormatError("feature matrix must be two-dimensional", kind="shape")
    if not np.all(np.isfinite(X)):
        raise FormatError("feature matrix contains non-finite values", kind="non-finite")
    n, d = X.shape
    parts = [_HEADER.pack(MAGIC, VERSION, n, d),
             np.ascontiguousarray(X, dtype="<f4").tobytes()]
    if labels is None:
        parts.append(b"\x00")
    else:
        labels = np.asarray(labels, dtype="<i8")
        if labels.shape != (n,):
            raise FormatError("labels must have one entry per row", kind="shape")
        parts.append(b"\x01")
        parts.append(labels.tobytes())
    return b"".join(parts)


def decode_binary(buf: bytes):
    """Parse a ``.gcdf`` payload; returns ``(X float64, labels or None)``."""
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes at offset 0",
                          kind="truncated", offset=len(buf))
    magic, version, n, d = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte offset 0", kind="bad-magic", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte offset 4",
                          kind="bad-version", offset=4)
    if n < 1 or d < 1:
        raise FormatError(f"header declares empty matrix ({n} x {d}) at byte offset 6",
                          kind="shape", offset=6)
    start = _HEADER.size
    end = start + 4 * n * d
    if len(buf) < end:
        floats = (len(buf) - start) // 4
        raise FormatError(
            f"truncated payload: header declares {n}x{d}={n * d} floats but only {floats} "
            f"present (data ends at byte offset {len(buf)}, expected {end})",
            kind="truncated", offset=len(buf))
    X = np.frombuffer(buf, dtype="<f4", count=n * d, offset=start).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(X.ravel()))
    if bad.size:
        off = start + 4 * int(bad[0])
        raise FormatError(f"non-finite value at byte offset {off}", kind="non-finite", offset=off)
    labels = None
    if len(buf) > end:
        flag = buf[end]
        if flag == 1:
            lend = end + 1 + 8 * n
            if len(buf) < lend:
                raise FormatError(
                    f"truncated label block: expected {n} labels ending at byte offset {lend}, "
                    f"file ends at {len(buf)}", kind="truncated", offset=len(buf))
            labels = np.frombuffer(buf, dtype="<i8", count=n, offset=end + 1).astype(np.int64)
            end = lend
        elif flag != 0:
            raise FormatError(f"invalid label flag {flag} at byte offset {end}",
                              kind="bad-flag", offset=end)
        else:
            end += 1
        if len(buf) != end:
            raise FormatError(f"{len(buf) - end} trailing bytes at byte offset {end}",
                              kind="trailing", offset=end)
    return X.astype(np.float64), labels


def encode_csv(X, labels=None) -> str:
    X = np.asarray(X, dtype=np.float64)
    out = io.StringIO()
    out.write(f"dim={X.shape[1]}\n")
    for i, row in enumerate(X):
        fields = [repr(float(v)) for v in row]
        if labels is not None:
            lab = int(labels[i])
            fields.append(f"label={lab if lab >= 0 else 'none'}")
        out.write(",".join(fields) + "\n")
    return out.getvalue()


def decode_csv(text: str):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise FormatError("line 1: expected header 'dim=<D>'", kind="bad-header", offset=1)
    try:
        d = int(lines[0][4:])
    except ValueError:
        raise FormatError(f"line 1: bad dimension {lines[0][4:]!r}", kind="bad-header", offset=1)
    if d < 1:
        raise FormatError("line 1: dimension must be >= 1", kind="bad-header", offset=1)
    rows, labels, any_label = [], [], False
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        lab = -1
        if fields and fields[-1].startswith("label="):
            any_label = True
            tag = fields.pop()[6:]
            if tag != "none":
                try:
                    lab = int(tag)
                except ValueError:
                    raise FormatError(f"line {lineno}: bad label {tag!r}", kind="bad-label",
                                      offset=lineno)
        if len(fields) != d:
            raise FormatError(f"line {lineno}: expected {d} values, found {len(fields)}",
                              kind="row-length", offset=lineno)
        try:
            vals = [float(f) for f in fields]
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}", kind="bad-value", offset=lineno)
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"line {lineno}: non-finite value", kind="non-finite", offset=lineno)
        rows.append(vals)
        labels.append(lab)
    if not rows:
        raise FormatError("no data rows", kind="truncated", offset=len(lines))
    return np.array(rows, dtype=np.float64), (np.array(labels, dtype=np.int64) if any_label else None)


def save_features(path, X, labels=None) -> None:
    path = Path(path)
    if _is_csv(path):
        path.write_text(encode_csv(X, labels))
    else:
        path.write_bytes(encode_binary(X, labels))


def load_features(path):
    """Read a feature file; returns ``(X, labels or None)``.

    Files ending in ``.csv``/``.txt`` use the text format, anything else the
    binary one.
    """
    path = Path(path)
    if _is_csv(path):
        return decode_csv(path.read_text())
    return decode_binary(path.read_bytes())


def save_label_sidecar(path, labels, labelled_mask) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(labelled_mask, dtype=bool)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label", "is_labelled"])
        for i, (lab, m) in enumerate(zip(labels, mask)):
            w.writerow([i, int(lab), int(m)])


def load_label_sidecar(path):
    """Returns ``(labels, labelled_mask)`` from an ``index,label,is_labelled`` file."""
    labels, mask = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "label", "is_labelled"]:
            raise FormatError(f"line 1: expected header index,label,is_labelled, got {header}",
                              kind="bad-header", offset=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise FormatError(f"line {lineno}: expected 3 fields", kind="row-length",
                                  offset=lineno)
            try:
                idx, lab, flag = int(row[0]), int(row[1]), int(row[2])
            except ValueError:
                raise FormatError(f"line {lineno}: non-integer field", kind="bad-value",
                                  offset=lineno)
            if idx != len(labels):
                raise FormatError(f"line {lineno}: index {idx} out of order", kind="bad-index",
                                  offset=lineno)
            if flag not in (0, 1):
                raise FormatError(f"line {lineno}: is_labelled must be 0 or 1", kind="bad-value",
                                  offset=lineno)
            labels.append(lab)
            mask.append(bool(flag))
    return np.array(labels, dtype=np.int64), np.array(mask, dtype=bool)


def save_assignments(path, assignments, indices: Optional[np.ndarray] = None) -> None:
    assignments = np.asarray(assignments, dtype=np.int64)
    if indices is None:
        indices = np.arange(assignments.size)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "cluster"])
        for i, a in zip(indices, assignments):
            w.writerow([int(i), int(a)])


def load_assignments(path):
    """Returns ``(indices, clusters)``."""
    idx, cl = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "cluster"]:
            raise FormatError("line 1: expected header index,cluster", kind="bad-header",
                              offset=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                i, c = (int(v) for v in row)
            except ValueError:
                raise FormatError(f"line {lineno}: expected two integers", kind="bad-value",
                                  offset=lineno)
            idx.append(i)
            cl.append(c)
    return np.array(idx, dtype=np.int64), np.array(cl, dtype=np.int64)
