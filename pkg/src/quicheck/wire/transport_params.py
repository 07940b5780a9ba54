"""Transport parameter TLV stream (draft-29 section 18).

The codec is deliberately permissive: duplicates and unknown ids are retained
in order, byte for byte, so the monitor (not the codec) can judge them.
"""

from dataclasses import dataclass, field
from enum import IntEnum

from .errors import RangeError, TruncationError
from .varint import decode_varint, encode_varint


class TpId(IntEnum):
    ORIGINAL_DESTINATION_CONNECTION_ID = 0x00
    MAX_IDLE_TIMEOUT = 0x01
    STATELESS_RESET_TOKEN = 0x02
    MAX_UDP_PAYLOAD_SIZE = 0x03
    INITIAL_MAX_DATA = 0x04
    INITIAL_MAX_STREAM_DATA_BIDI_LOCAL = 0x05
    INITIAL_MAX_STREAM_DATA_BIDI_REMOTE = 0x06
    INITIAL_MAX_STREAM_DATA_UNI = 0x07
    INITIAL_MAX_STREAMS_BIDI = 0x08
    INITIAL_MAX_STREAMS_UNI = 0x09
    ACK_DELAY_EXPONENT = 0x0A
    MAX_ACK_DELAY = 0x0B
    DISABLE_ACTIVE_MIGRATION = 0x0C
    PREFERRED_ADDRESS = 0x0D
    ACTIVE_CONNECTION_ID_LIMIT = 0x0E
    INITIAL_SOURCE_CONNECTION_ID = 0x0F


KNOWN_TP_IDS = frozenset(int(i) for i in TpId)

# Only a server may send these (judged by the monitor, not the codec).
SERVER_ONLY_TP_IDS = frozenset(
    {
        TpId.ORIGINAL_DESTINATION_CONNECTION_ID,
        TpId.STATELESS_RESET_TOKEN,
        TpId.PREFERRED_ADDRESS,
    }
)

_VARINT_VALUED = frozenset(
    {
        TpId.MAX_IDLE_TIMEOUT,
        TpId.MAX_UDP_PAYLOAD_SIZE,
        TpId.INITIAL_MAX_DATA,
        TpId.INITIAL_MAX_STREAM_DATA_BIDI_LOCAL,
        TpId.INITIAL_MAX_STREAM_DATA_BIDI_REMOTE,
        TpId.INITIAL_MAX_STREAM_DATA_UNI,
        TpId.INITIAL_MAX_STREAMS_BIDI,
        TpId.INITIAL_MAX_STREAMS_UNI,
        TpId.ACK_DELAY_EXPONENT,
        TpId.MAX_ACK_DELAY,
        TpId.ACTIVE_CONNECTION_ID_LIMIT,
    }
)


@dataclass(frozen=True)
class PreferredAddress:
    ipv4: bytes  # 4 bytes
    port4: int
    ipv6: bytes  # 16 bytes
    port6: int
    connection_id: bytes
    reset_token: bytes  # 16 bytes

    def encode(self) -> bytes:
        if len(self.ipv4) != 4 or len(self.ipv6) != 16 or len(self.reset_token) != 16:
            raise RangeError("preferred address field has wrong size")
        out = bytearray(self.ipv4)
        out += self.port4.to_bytes(2, "big")
        out += self.ipv6
        out += self.port6.to_bytes(2, "big")
        out += bytes([len(self.connection_id)]) + self.connection_id
        out += self.reset_token
        return bytes(out)

    @classmethod
    def decode(cls, raw: bytes) -> "PreferredAddress":
        if len(raw) < 25:
            raise TruncationError("preferred_address", 0, 25, len(raw))
        cid_len = raw[24]
        need = 25 + cid_len + 16
        if len(raw) < need:
            raise TruncationError("preferred_address.cid", 25, cid_len + 16, len(raw) - 25)
        return cls(
            ipv4=raw[0:4],
            port4=int.from_bytes(raw[4:6], "big"),
            ipv6=raw[6:22],
            port6=int.from_bytes(raw[22:24], "big"),
            connection_id=raw[25 : 25 + cid_len],
            reset_token=raw[25 + cid_len : need],
        )


@dataclass
class TransportParameterSet:
    """Ordered (id, raw value) entries plus typed accessors for known ids."""

    entries: list[tuple[int, bytes]] = field(default_factory=list)

    def add(self, tp_id: int, raw: bytes) -> None:
        self.entries.append((tp_id, raw))

    def add_varint(self, tp_id: int, value: int) -> None:
        self.add(tp_id, encode_varint(value))

    def add_empty(self, tp_id: int) -> None:
        self.add(tp_id, b"")

    def has(self, tp_id: int) -> bool:
        return any(i == tp_id for i, _ in self.entries)

    def get_raw(self, tp_id: int) -> bytes | None:
        for i, raw in self.entries:
            if i == tp_id:
                return raw
        return None

    def get_varint(self, tp_id: int) -> int | None:
        raw = self.get_raw(tp_id)
        if raw is None:
            return None
        value, _ = decode_varint(raw, 0, f"transport parameter 0x{tp_id:x}")
        return value

    def duplicate_ids(self) -> list[int]:
        seen: set[int] = set()
        dups: list[int] = []
        for i, _ in self.entries:
            if i in seen and i not in dups:
                dups.append(i)
            seen.add(i)
        return dups

    def unknown_ids(self) -> list[int]:
        return [i for i, _ in self.entries if i not in KNOWN_TP_IDS]

    def preferred_address(self) -> PreferredAddress | None:
        raw = self.get_raw(TpId.PREFERRED_ADDRESS)
        return None if raw is None else PreferredAddress.decode(raw)


def encode_transport_params(params: TransportParameterSet) -> bytes:
    out = bytearray()
    for tp_id, raw in params.entries:
        out += encode_varint(tp_id)
        out += encode_varint(len(raw))
        out += raw
    return bytes(out)


def decode_transport_params(data: bytes) -> TransportParameterSet:
    params = TransportParameterSet()
    pos = 0
    while pos < len(data):
        tp_id, used = decode_varint(data, pos, "transport parameter id")
        pos += used
        length, used = decode_varint(data, pos, "transport parameter length")
        pos += used
        if pos + length > len(data):
            raise TruncationError(f"transport parameter 0x{tp_id:x}", pos, length, len(data) - pos)
        params.add(tp_id, data[pos : pos + length])
        pos += length
    return params


def default_params(
    source_cid: bytes,
    original_dcid: bytes | None = None,
    max_data: int = 1 << 20,
    max_stream_data: int = 1 << 18,
    max_streams_bidi: int = 16,
    max_streams_uni: int = 4,
) -> TransportParameterSet:
    """A conformant parameter set for one endpoint of a test connection."""
    params = TransportParameterSet()
    if original_dcid is not None:
        params.add(TpId.ORIGINAL_DESTINATION_CONNECTION_ID, original_dcid)
    params.add_varint(TpId.MAX_IDLE_TIMEOUT, 30_000)
    params.add_varint(TpId.INITIAL_MAX_DATA, max_data)
    params.add_varint(TpId.INITIAL_MAX_STREAM_DATA_BIDI_LOCAL, max_stream_data)
    params.add_varint(TpId.INITIAL_MAX_STREAM_DATA_BIDI_REMOTE, max_stream_data)
    params.add_varint(TpId.INITIAL_MAX_STREAM_DATA_UNI, max_stream_data)
    params.add_varint(TpId.INITIAL_MAX_STREAMS_BIDI, max_streams_bidi)
    params.add_varint(TpId.INITIAL_MAX_STREAMS_UNI, max_streams_uni)
    params.add_varint(TpId.ACK_DELAY_EXPONENT, 3)
    params.add_varint(TpId.MAX_ACK_DELAY, 25)
    params.add_varint(TpId.ACTIVE_CONNECTION_ID_LIMIT, 4)
    params.add(TpId.INITIAL_SOURCE_CONNECTION_ID, source_cid)
    return params
