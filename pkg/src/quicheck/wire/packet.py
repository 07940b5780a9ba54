"""QUIC draft-29 packet envelopes in null-cipher mode.

Headers follow the draft-29 bit layout. The null-cipher deviations: no header
or payload protection, and packet numbers are always encoded as 2 plaintext
bytes (the header's packet-number-length bits still describe the field, so a
general decoder can read it). Full packet numbers are reconstructed against
the largest number seen in the same space, when the context provides one.

Retry and Version Negotiation formats are not supported.
"""

from dataclasses import dataclass, field
from enum import Enum

from .errors import MalformedPacketError, RangeError, TruncationError
from .frames import Frame, decode_frames, encode_frame, is_probing_frame
from .varint import decode_varint, encode_varint

PINNED_VERSION = 0xFF00001D  # draft-29
MAX_CID_LEN = 16

_FORM_LONG = 0x80
_FIXED_BIT = 0x40
_LONG_TYPE_MASK = 0x30
_LONG_RESERVED_MASK = 0x0C
_SHORT_RESERVED_MASK = 0x18
_PN_LEN_MASK = 0x03
_PN_BYTES = 2  # null-cipher pin


class PacketType(Enum):
    INITIAL = "initial"
    ZERO_RTT = "0rtt"
    HANDSHAKE = "handshake"
    ONE_RTT = "1rtt"


class PnSpace(Enum):
    INITIAL = 0
    HANDSHAKE = 1
    APPLICATION = 2


_LONG_TYPE_BITS = {
    PacketType.INITIAL: 0x00,
    PacketType.ZERO_RTT: 0x10,
    PacketType.HANDSHAKE: 0x20,
}
_BITS_LONG_TYPE = {v: k for k, v in _LONG_TYPE_BITS.items()}

_SPACE_OF_TYPE = {
    PacketType.INITIAL: PnSpace.INITIAL,
    PacketType.HANDSHAKE: PnSpace.HANDSHAKE,
    PacketType.ZERO_RTT: PnSpace.APPLICATION,
    PacketType.ONE_RTT: PnSpace.APPLICATION,
}


def pn_space(packet_type: PacketType) -> PnSpace:
    return _SPACE_OF_TYPE[packet_type]


@dataclass(frozen=True)
class Packet:
    packet_type: PacketType
    dcid: bytes
    packet_number: int
    frames: tuple[Frame, ...]
    scid: bytes | None = None  # long headers only
    version: int | None = None  # long headers only
    token: bytes | None = None  # Initial only (may be empty)
    annotations: tuple[str, ...] = field(default=(), compare=False)

    @property
    def is_long(self) -> bool:
        return self.packet_type is not PacketType.ONE_RTT

    @property
    def space(self) -> PnSpace:
        return pn_space(self.packet_type)

    def is_probing(self) -> bool:
        return all(is_probing_frame(f) for f in self.frames)

    def has_frame_kind(self, kind) -> bool:
        return any(f.KIND is kind for f in self.frames)


@dataclass
class DecodeContext:
    """What a decoder must know beyond the bytes themselves."""

    dcid_length: int = 8  # short headers carry no length field
    largest_pn: dict[PnSpace, int] | None = None  # per-space, for reconstruction


def reconstruct_pn(truncated: int, pn_bits: int, largest: int) -> int:
    """Expand a truncated packet number against the largest seen (RFC-style)."""
    if largest < 0:
        return truncated
    expected = largest + 1
    window = 1 << pn_bits
    half = window >> 1
    candidate = (expected & ~(window - 1)) | truncated
    if candidate <= expected - half and candidate < (1 << 62) - window:
        return candidate + window
    if candidate > expected + half and candidate >= window:
        return candidate - window
    return candidate


def _check_cid(cid: bytes, name: str) -> None:
    if len(cid) > MAX_CID_LEN:
        raise RangeError(f"{name} length {len(cid)} exceeds {MAX_CID_LEN}")


def encode_packet(packet: Packet) -> bytes:
    """Serialize a packet; rejects CIDs over 16 bytes and empty frame lists."""
    if not packet.frames:
        raise MalformedPacketError("refusing to encode a packet with no frames")
    _check_cid(packet.dcid, "destination CID")

    payload = b"".join(encode_frame(f) for f in packet.frames)
    pn_field = (packet.packet_number & 0xFFFF).to_bytes(_PN_BYTES, "big")

    if packet.packet_type is PacketType.ONE_RTT:
        first = _FIXED_BIT | (_PN_BYTES - 1)
        return bytes([first]) + packet.dcid + pn_field + payload

    if packet.version is None or packet.scid is None:
        raise MalformedPacketError("long header requires version and source CID")
    _check_cid(packet.scid, "source CID")
    if packet.packet_type is PacketType.INITIAL:
        if packet.token is None:
            raise MalformedPacketError("Initial packet requires a token field (may be empty)")
    elif packet.token is not None:
        raise MalformedPacketError(f"{packet.packet_type.value} packet must not carry a token")

    first = _FORM_LONG | _FIXED_BIT | _LONG_TYPE_BITS[packet.packet_type] | (_PN_BYTES - 1)
    out = bytearray([first])
    out += packet.version.to_bytes(4, "big")
    out += bytes([len(packet.dcid)]) + packet.dcid
    out += bytes([len(packet.scid)]) + packet.scid
    if packet.packet_type is PacketType.INITIAL:
        out += encode_varint(len(packet.token)) + packet.token
    out += encode_varint(_PN_BYTES + len(payload))
    out += pn_field + payload
    return bytes(out)


def decode_packet(data: bytes, ctx: DecodeContext, offset: int = 0) -> tuple[Packet, int]:
    """Decode one packet at `offset`; returns (packet, bytes consumed).

    A short-header packet extends to the end of the datagram. Oversized CIDs
    and unpinned versions decode fine; judging them is the monitor's job.
    """
    if offset >= len(data):
        raise TruncationError("packet first byte", offset, 1, 0)
    first = data[offset]
    pos = offset + 1
    annotations: list[str] = []
    if not first & _FIXED_BIT:
        annotations.append("fixed bit is zero")

    if first & _FORM_LONG:
        if pos + 4 > len(data):
            raise TruncationError("version", pos, 4, len(data) - pos)
        version = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        try:
            packet_type = _BITS_LONG_TYPE[first & _LONG_TYPE_MASK]
        except KeyError:
            raise MalformedPacketError("Retry packets are not supported") from None
        if first & _LONG_RESERVED_MASK:
            annotations.append("long header reserved bits set")

        if pos >= len(data):
            raise TruncationError("DCID length", pos, 1, 0)
        dcid_len = data[pos]
        pos += 1
        if pos + dcid_len > len(data):
            raise TruncationError("DCID", pos, dcid_len, len(data) - pos)
        dcid = data[pos : pos + dcid_len]
        pos += dcid_len

        if pos >= len(data):
            raise TruncationError("SCID length", pos, 1, 0)
        scid_len = data[pos]
        pos += 1
        if pos + scid_len > len(data):
            raise TruncationError("SCID", pos, scid_len, len(data) - pos)
        scid = data[pos : pos + scid_len]
        pos += scid_len

        token = None
        if packet_type is PacketType.INITIAL:
            token_len, used = decode_varint(data, pos, "token length")
            pos += used
            if pos + token_len > len(data):
                raise TruncationError("token", pos, token_len, len(data) - pos)
            token = data[pos : pos + token_len]
            pos += token_len

        length, used = decode_varint(data, pos, "length")
        pos += used
        if pos + length > len(data):
            raise TruncationError("packet body", pos, length, len(data) - pos)
        body_end = pos + length
    else:
        packet_type = PacketType.ONE_RTT
        version = None
        scid = None
        token = None
        if first & _SHORT_RESERVED_MASK:
            annotations.append("short header reserved bits set")
        if pos + ctx.dcid_length > len(data):
            raise TruncationError("DCID", pos, ctx.dcid_length, len(data) - pos)
        dcid = data[pos : pos + ctx.dcid_length]
        pos += ctx.dcid_length
        body_end = len(data)

    pn_bytes = (first & _PN_LEN_MASK) + 1
    if pos + pn_bytes > body_end:
        raise TruncationError("packet number", pos, pn_bytes, body_end - pos)
    truncated = int.from_bytes(data[pos : pos + pn_bytes], "big")
    pos += pn_bytes

    space = pn_space(packet_type)
    largest = -1
    if ctx.largest_pn is not None:
        largest = ctx.largest_pn.get(space, -1)
    packet_number = reconstruct_pn(truncated, pn_bytes * 8, largest)

    frames = decode_frames(data[pos:body_end])
    packet = Packet(
        packet_type=packet_type,
        dcid=dcid,
        scid=scid,
        version=version,
        token=token,
        packet_number=packet_number,
        frames=tuple(frames),
        annotations=tuple(annotations),
    )
    return packet, body_end - offset


def decode_datagram(data: bytes, ctx: DecodeContext) -> list[Packet]:
    """Split a datagram into coalesced packets."""
    packets: list[Packet] = []
    pos = 0
    while pos < len(data):
        packet, used = decode_packet(data, ctx, pos)
        packets.append(packet)
        pos += used
    if not packets:
        raise MalformedPacketError("empty datagram")
    return packets


def encode_datagram(packets: list[Packet]) -> bytes:
    """Coalesce packets; a short-header packet is only valid in last position."""
    for p in packets[:-1]:
        if not p.is_long:
            raise MalformedPacketError("short-header packet must be the last in a datagram")
    return b"".join(encode_packet(p) for p in packets)
