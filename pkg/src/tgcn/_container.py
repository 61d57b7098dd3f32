"""Checksummed binary container shared by model and dataset files.

Layout: 8 magic bytes, uint32 format version, uint32 header length, UTF-8
JSON header, payload bytes, then a 32-byte SHA-256 over everything before it.
All integers little-endian.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

from .errors import ChecksumError, FormatError, VersionError

_DIGEST = 32


def write(path, magic: bytes, version: int, header: dict, payload: bytes) -> str:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = magic + struct.pack("<II", version, len(head)) + head + payload
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)
    return digest.hex()


def read(path, magic: bytes, version: int) -> tuple[dict, memoryview]:
    raw = Path(path).read_bytes()
    if len(raw) < len(magic) + 8 + _DIGEST:
        raise ChecksumError(f"{path}: file too short ({len(raw)} bytes)")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupt)")
    if body[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic bytes {body[:len(magic)]!r}")
    found, head_len = struct.unpack_from("<II", body, len(magic))
    if found != version:
        raise VersionError(f"{path}: format version {found}, expected {version}")
    start = len(magic) + 8
    header = json.loads(bytes(body[start:start + head_len]).decode("utf-8"))
    return header, memoryview(body)[start + head_len:]
