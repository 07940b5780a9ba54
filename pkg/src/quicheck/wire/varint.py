"""QUIC variable-length integers (draft-29 section 16).

The top two bits of the first byte select the length class:
00 -> 1 byte, 01 -> 2 bytes, 10 -> 4 bytes, 11 -> 8 bytes.
"""

from .errors import RangeError, TruncationError

VARINT_MAX = (1 << 62) - 1

_CLASS_MAX = (0x3F, 0x3FFF, 0x3FFFFFFF, 0x3FFFFFFFFFFFFFFF)
_CLASS_LEN = (1, 2, 4, 8)
_CLASS_TAG = (0x00, 0x40, 0x80, 0xC0)


def varint_size(value: int) -> int:
    """Length in bytes of the minimal encoding of `value`."""
    if not 0 <= value <= VARINT_MAX:
        raise RangeError(f"varint out of range: {value}")
    for limit, length in zip(_CLASS_MAX, _CLASS_LEN):
        if value <= limit:
            return length
    raise AssertionError("unreachable")


def encode_varint(value: int) -> bytes:
    """Encode `value` in the minimal length class."""
    size = varint_size(value)
    tag = _CLASS_TAG[_CLASS_LEN.index(size)]
    out = value.to_bytes(size, "big")
    return bytes([out[0] | tag]) + out[1:]


def decode_varint(data: bytes, offset: int = 0, field: str = "varint") -> tuple[int, int]:
    """Decode one varint at `offset`; returns (value, bytes consumed)."""
    if offset >= len(data):
        raise TruncationError(field, offset, needed=1, available=0)
    first = data[offset]
    size = _CLASS_LEN[first >> 6]
    if offset + size > len(data):
        raise TruncationError(field, offset, needed=size, available=len(data) - offset)
    value = int.from_bytes(data[offset : offset + size], "big") & _CLASS_MAX[first >> 6]
    return value, size
