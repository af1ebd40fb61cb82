"""Shared binary-file plumbing for the series and checkpoint formats."""

from __future__ import annotations

import struct
from typing import BinaryIO


class FileFormatError(Exception):
    """Base class for container-format failures."""

    category = "format"


class BadMagicError(FileFormatError):
    category = "bad-magic"


class VersionError(FileFormatError):
    category = "version"


class TruncatedError(FileFormatError):
    category = "truncated"


def read_exact(f: BinaryIO, n: int, what: str = "data") -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_struct(f: BinaryIO, fmt: str, what: str = "header field") -> tuple:
    return struct.unpack(fmt, read_exact(f, struct.calcsize(fmt), what))
