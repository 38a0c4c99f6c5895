"""Small helpers for the versioned binary/text file formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

from .errors import DataFormatError

FORMAT_VERSION = "v1"


def read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    """Read exactly n bytes or fail with a truncation error."""
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(f"unexpected end of {what}")
    return data


def read_header_line(fh: BinaryIO, magic: str, what: str) -> list[str]:
    """Read and validate a `MAGIC v1 [extras...]` header line; return extras."""
    raw = fh.readline(4096)
    if not raw.endswith(b"\n"):
        raise DataFormatError(f"unexpected end of {what}")
    try:
        fields = raw.decode("utf-8").split()
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{what}: header is not valid UTF-8") from exc
    if not fields or fields[0] != magic:
        raise DataFormatError(f"{what}: bad magic (expected {magic})")
    if len(fields) < 2 or fields[1] != FORMAT_VERSION:
        found = fields[1] if len(fields) > 1 else "<missing>"
        raise DataFormatError(f"{what}: unsupported version {found!r}")
    return fields[2:]


def parse_text_header(line: str, magic: str, what: str) -> list[str]:
    """Validate a header line already read from a text file; return extras."""
    fields = line.split()
    if not fields or fields[0] != magic:
        raise DataFormatError(f"{what}: bad magic (expected {magic})")
    if len(fields) < 2 or fields[1] != FORMAT_VERSION:
        found = fields[1] if len(fields) > 1 else "<missing>"
        raise DataFormatError(f"{what}: unsupported version {found!r}")
    return fields[2:]


def check_no_trailing(fh: BinaryIO, what: str) -> None:
    if fh.read(1):
        raise DataFormatError(f"trailing data in {what}")


def unpack(fmt: str, fh: BinaryIO, what: str) -> tuple:
    return struct.unpack(fmt, read_exact(fh, struct.calcsize(fmt), what))
