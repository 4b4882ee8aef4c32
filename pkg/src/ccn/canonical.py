"""Canonical byte encodings shared across the stack.

Every signature, digest, ledger key, and journal frame in this package is
computed over *canonical JSON*: UTF-8, sorted keys, no whitespace.  Two
parties that agree on a JSON value therefore agree on its bytes, which is
what makes encrypt-then-hash consent proofs and hash-chained blocks
reproducible across processes and runs.
"""

from __future__ import annotations

import base64
import json
import struct
from typing import Any, BinaryIO, Iterator


def canonical_bytes(value: Any) -> bytes:
    """Serialize ``value`` to canonical JSON bytes."""
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def canonical_str(value: Any) -> str:
    return canonical_bytes(value).decode("utf-8")


def from_canonical(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)


def b64u_encode(raw: bytes) -> str:
    """URL-safe base64 without padding (the wire form for binary fields)."""
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def b64u_decode(text: str) -> bytes:
    pad = -len(text) % 4
    return base64.urlsafe_b64decode(text + "=" * pad)


# ---------------------------------------------------------------------------
# Length-prefixed record framing (journal files, socket messages)
# ---------------------------------------------------------------------------

_LEN = struct.Struct(">I")


def write_framed(stream: BinaryIO, payload: bytes) -> None:
    stream.write(_LEN.pack(len(payload)))
    stream.write(payload)


def read_framed(stream: BinaryIO) -> bytes | None:
    """Read one length-prefixed record; ``None`` at clean EOF."""
    header = stream.read(_LEN.size)
    if not header:
        return None
    if len(header) < _LEN.size:
        raise ValueError("truncated frame header")
    (length,) = _LEN.unpack(header)
    payload = stream.read(length)
    if len(payload) < length:
        raise ValueError("truncated frame payload")
    return payload


def iter_framed(stream: BinaryIO) -> Iterator[bytes]:
    while True:
        record = read_framed(stream)
        if record is None:
            return
        yield record
