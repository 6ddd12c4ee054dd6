"""Shared on-disk container: one JSON header line followed by binary blobs.

All project files (volumes, checkpoints) use this layout so they can be
parsed with a line read plus a seek, and inspected without loading blobs.
Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile


class FileFormatError(ValueError):
    """Raised for malformed headers, truncated blobs or byte-count mismatches."""


def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_header_blob(path, header: dict, blob: bytes):
    header = dict(header)
    header["blob_bytes"] = len(blob)
    atomic_write_bytes(path, json.dumps(header, sort_keys=True).encode() + b"\n" + blob)


def read_header(path, expected_magic=None):
    """Parse just the JSON header line of a container file."""
    with open(path, "rb") as f:
        line = f.readline()
    try:
        header = json.loads(line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FileFormatError(f"{path}: malformed header: {e}") from None
    if expected_magic is not None and header.get("magic") != expected_magic:
        raise FileFormatError(
            f"{path}: expected magic {expected_magic!r}, found {header.get('magic')!r}"
        )
    return header


def read_header_blob(path, expected_magic=None):
    header = read_header(path, expected_magic)
    with open(path, "rb") as f:
        f.readline()
        blob = f.read()
    expected = header.get("blob_bytes")
    if expected is not None and len(blob) != expected:
        raise FileFormatError(
            f"{path}: blob truncated or oversized: expected {expected} bytes, found {len(blob)}"
        )
    return header, blob
