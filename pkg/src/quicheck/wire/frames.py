"""QUIC draft-29 frame encoding and decoding.

Known frame types round-trip to typed dataclasses. Unassigned type codes
decode to UnknownFrame, whose body is carried under this tool's greased-frame
convention: one varint declaring the body length, then that many bytes. The
generator emits unknown frames with the same convention, so they are lossless
in both directions.
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum

from .errors import MalformedPacketError, RangeError, TruncationError
from .varint import VARINT_MAX, decode_varint, encode_varint


class FrameKind(Enum):
    PADDING = "PADDING"
    PING = "PING"
    ACK = "ACK"
    RESET_STREAM = "RESET_STREAM"
    STOP_SENDING = "STOP_SENDING"
    CRYPTO = "CRYPTO"
    NEW_TOKEN = "NEW_TOKEN"
    STREAM = "STREAM"
    MAX_DATA = "MAX_DATA"
    MAX_STREAM_DATA = "MAX_STREAM_DATA"
    MAX_STREAMS = "MAX_STREAMS"
    DATA_BLOCKED = "DATA_BLOCKED"
    STREAM_DATA_BLOCKED = "STREAM_DATA_BLOCKED"
    STREAMS_BLOCKED = "STREAMS_BLOCKED"
    NEW_CONNECTION_ID = "NEW_CONNECTION_ID"
    RETIRE_CONNECTION_ID = "RETIRE_CONNECTION_ID"
    PATH_CHALLENGE = "PATH_CHALLENGE"
    PATH_RESPONSE = "PATH_RESPONSE"
    CONNECTION_CLOSE = "CONNECTION_CLOSE"
    HANDSHAKE_DONE = "HANDSHAKE_DONE"
    UNKNOWN = "UNKNOWN"


class FrameType(IntEnum):
    PADDING = 0x00
    PING = 0x01
    ACK = 0x02
    ACK_ECN = 0x03
    RESET_STREAM = 0x04
    STOP_SENDING = 0x05
    CRYPTO = 0x06
    NEW_TOKEN = 0x07
    STREAM_BASE = 0x08  # 0x08-0x0f, bits: OFF=0x04 LEN=0x02 FIN=0x01
    MAX_DATA = 0x10
    MAX_STREAM_DATA = 0x11
    MAX_STREAMS_BIDI = 0x12
    MAX_STREAMS_UNI = 0x13
    DATA_BLOCKED = 0x14
    STREAM_DATA_BLOCKED = 0x15
    STREAMS_BLOCKED_BIDI = 0x16
    STREAMS_BLOCKED_UNI = 0x17
    NEW_CONNECTION_ID = 0x18
    RETIRE_CONNECTION_ID = 0x19
    PATH_CHALLENGE = 0x1A
    PATH_RESPONSE = 0x1B
    TRANSPORT_CLOSE = 0x1C
    APPLICATION_CLOSE = 0x1D
    HANDSHAKE_DONE = 0x1E


HIGHEST_KNOWN_FRAME_TYPE = FrameType.HANDSHAKE_DONE

# Frames that probe a network path; every other kind is non-probing, and a
# packet is probing only if all of its frames are.
PROBING_FRAME_KINDS = frozenset(
    {
        FrameKind.PATH_CHALLENGE,
        FrameKind.PATH_RESPONSE,
        FrameKind.NEW_CONNECTION_ID,
        FrameKind.PADDING,
    }
)

CONNECTION_ID_MAX_LEN = 16
RESET_TOKEN_LEN = 16
PATH_DATA_LEN = 8


@dataclass(frozen=True)
class PaddingFrame:
    KIND = FrameKind.PADDING


@dataclass(frozen=True)
class PingFrame:
    KIND = FrameKind.PING


@dataclass(frozen=True)
class AckFrame:
    """ACK with ranges stored as inclusive (low, high) pairs, descending."""

    KIND = FrameKind.ACK

    largest: int
    delay: int = 0
    ranges: tuple[tuple[int, int], ...] = ()
    ecn_counts: tuple[int, int, int] | None = None

    def __post_init__(self):
        if not self.ranges:
            object.__setattr__(self, "ranges", ((self.largest, self.largest),))

    @classmethod
    def from_packet_numbers(cls, pns: set[int], delay: int = 0) -> "AckFrame":
        if not pns:
            raise ValueError("cannot acknowledge an empty set")
        ordered = sorted(pns, reverse=True)
        ranges: list[tuple[int, int]] = []
        high = low = ordered[0]
        for pn in ordered[1:]:
            if pn == low - 1:
                low = pn
            else:
                ranges.append((low, high))
                high = low = pn
        ranges.append((low, high))
        return cls(largest=ordered[0], delay=delay, ranges=tuple(ranges))

    def acknowledged(self) -> set[int]:
        out: set[int] = set()
        for low, high in self.ranges:
            out.update(range(low, high + 1))
        return out


@dataclass(frozen=True)
class ResetStreamFrame:
    KIND = FrameKind.RESET_STREAM

    stream_id: int
    error_code: int
    final_size: int


@dataclass(frozen=True)
class StopSendingFrame:
    KIND = FrameKind.STOP_SENDING

    stream_id: int
    error_code: int


@dataclass(frozen=True)
class CryptoFrame:
    KIND = FrameKind.CRYPTO

    offset: int
    data: bytes


@dataclass(frozen=True)
class NewTokenFrame:
    KIND = FrameKind.NEW_TOKEN

    token: bytes


@dataclass(frozen=True)
class StreamFrame:
    KIND = FrameKind.STREAM

    stream_id: int
    offset: int
    data: bytes
    fin: bool = False


@dataclass(frozen=True)
class MaxDataFrame:
    KIND = FrameKind.MAX_DATA

    maximum: int


@dataclass(frozen=True)
class MaxStreamDataFrame:
    KIND = FrameKind.MAX_STREAM_DATA

    stream_id: int
    maximum: int


@dataclass(frozen=True)
class MaxStreamsFrame:
    KIND = FrameKind.MAX_STREAMS

    maximum: int
    bidirectional: bool = True


@dataclass(frozen=True)
class DataBlockedFrame:
    KIND = FrameKind.DATA_BLOCKED

    limit: int


@dataclass(frozen=True)
class StreamDataBlockedFrame:
    KIND = FrameKind.STREAM_DATA_BLOCKED

    stream_id: int
    limit: int


@dataclass(frozen=True)
class StreamsBlockedFrame:
    KIND = FrameKind.STREAMS_BLOCKED

    limit: int
    bidirectional: bool = True


@dataclass(frozen=True)
class NewConnectionIdFrame:
    KIND = FrameKind.NEW_CONNECTION_ID

    sequence_number: int
    retire_prior_to: int
    connection_id: bytes
    stateless_reset_token: bytes


@dataclass(frozen=True)
class RetireConnectionIdFrame:
    KIND = FrameKind.RETIRE_CONNECTION_ID

    sequence_number: int


@dataclass(frozen=True)
class PathChallengeFrame:
    KIND = FrameKind.PATH_CHALLENGE

    data: bytes


@dataclass(frozen=True)
class PathResponseFrame:
    KIND = FrameKind.PATH_RESPONSE

    data: bytes


@dataclass(frozen=True)
class ConnectionCloseFrame:
    """Transport close carries the offending frame type; application close does not."""

    KIND = FrameKind.CONNECTION_CLOSE

    error_code: int
    frame_type: int | None = 0
    reason: bytes = b""

    @property
    def is_application(self) -> bool:
        return self.frame_type is None


@dataclass(frozen=True)
class HandshakeDoneFrame:
    KIND = FrameKind.HANDSHAKE_DONE


@dataclass(frozen=True)
class UnknownFrame:
    """Unassigned type code with its raw body, preserved losslessly."""

    KIND = FrameKind.UNKNOWN

    type_code: int
    body: bytes = b""


Frame = (
    PaddingFrame
    | PingFrame
    | AckFrame
    | ResetStreamFrame
    | StopSendingFrame
    | CryptoFrame
    | NewTokenFrame
    | StreamFrame
    | MaxDataFrame
    | MaxStreamDataFrame
    | MaxStreamsFrame
    | DataBlockedFrame
    | StreamDataBlockedFrame
    | StreamsBlockedFrame
    | NewConnectionIdFrame
    | RetireConnectionIdFrame
    | PathChallengeFrame
    | PathResponseFrame
    | ConnectionCloseFrame
    | HandshakeDoneFrame
    | UnknownFrame
)


def is_probing_frame(frame: Frame) -> bool:
    return frame.KIND in PROBING_FRAME_KINDS


class _Reader:
    """Cursor over a byte string; raises TruncationError with field names."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def varint(self, fieldname: str) -> int:
        value, used = decode_varint(self.data, self.pos, fieldname)
        self.pos += used
        return value

    def take(self, n: int, fieldname: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(fieldname, self.pos, n, len(self.data) - self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, fieldname: str) -> int:
        return self.take(1, fieldname)[0]


def _encode_ack(f: AckFrame) -> bytes:
    ranges = sorted(f.ranges, key=lambda r: r[1], reverse=True)
    if ranges[0][1] != f.largest:
        raise RangeError("ACK largest does not match first range")
    out = bytearray()
    out += encode_varint(FrameType.ACK_ECN if f.ecn_counts else FrameType.ACK)
    out += encode_varint(f.largest)
    out += encode_varint(f.delay)
    out += encode_varint(len(ranges) - 1)
    out += encode_varint(ranges[0][1] - ranges[0][0])
    prev_low = ranges[0][0]
    for low, high in ranges[1:]:
        if high >= prev_low:
            raise RangeError("ACK ranges overlap or are unsorted")
        out += encode_varint(prev_low - high - 2)
        out += encode_varint(high - low)
        prev_low = low
    if f.ecn_counts:
        for count in f.ecn_counts:
            out += encode_varint(count)
    return bytes(out)


def _decode_ack(r: _Reader, with_ecn: bool) -> AckFrame:
    largest = r.varint("ACK.largest")
    delay = r.varint("ACK.delay")
    count = r.varint("ACK.range_count")
    first = r.varint("ACK.first_range")
    if first > largest:
        raise RangeError("ACK first range larger than largest acknowledged")
    ranges = [(largest - first, largest)]
    low = largest - first
    for _ in range(count):
        gap = r.varint("ACK.gap")
        high = low - gap - 2
        length = r.varint("ACK.range_length")
        if high < 0 or length > high:
            raise RangeError("ACK range underflows packet number zero")
        ranges.append((high - length, high))
        low = high - length
    ecn = None
    if with_ecn:
        ecn = (r.varint("ACK.ect0"), r.varint("ACK.ect1"), r.varint("ACK.ecn_ce"))
    return AckFrame(largest=largest, delay=delay, ranges=tuple(ranges), ecn_counts=ecn)


def encode_frame(frame: Frame) -> bytes:
    """Serialize one frame; inverse of decode_frame on the result."""
    out = bytearray()
    if isinstance(frame, PaddingFrame):
        return b"\x00"
    if isinstance(frame, PingFrame):
        return b"\x01"
    if isinstance(frame, AckFrame):
        return _encode_ack(frame)
    if isinstance(frame, ResetStreamFrame):
        out += encode_varint(FrameType.RESET_STREAM)
        out += encode_varint(frame.stream_id)
        out += encode_varint(frame.error_code)
        out += encode_varint(frame.final_size)
    elif isinstance(frame, StopSendingFrame):
        out += encode_varint(FrameType.STOP_SENDING)
        out += encode_varint(frame.stream_id)
        out += encode_varint(frame.error_code)
    elif isinstance(frame, CryptoFrame):
        out += encode_varint(FrameType.CRYPTO)
        out += encode_varint(frame.offset)
        out += encode_varint(len(frame.data))
        out += frame.data
    elif isinstance(frame, NewTokenFrame):
        out += encode_varint(FrameType.NEW_TOKEN)
        out += encode_varint(len(frame.token))
        out += frame.token
    elif isinstance(frame, StreamFrame):
        if frame.offset + len(frame.data) > VARINT_MAX:
            raise RangeError("stream offset plus length exceeds 2^62 - 1")
        type_byte = FrameType.STREAM_BASE | 0x02  # LEN always, for packing
        if frame.offset:
            type_byte |= 0x04
        if frame.fin:
            type_byte |= 0x01
        out += encode_varint(type_byte)
        out += encode_varint(frame.stream_id)
        if frame.offset:
            out += encode_varint(frame.offset)
        out += encode_varint(len(frame.data))
        out += frame.data
    elif isinstance(frame, MaxDataFrame):
        out += encode_varint(FrameType.MAX_DATA)
        out += encode_varint(frame.maximum)
    elif isinstance(frame, MaxStreamDataFrame):
        out += encode_varint(FrameType.MAX_STREAM_DATA)
        out += encode_varint(frame.stream_id)
        out += encode_varint(frame.maximum)
    elif isinstance(frame, MaxStreamsFrame):
        out += encode_varint(
            FrameType.MAX_STREAMS_BIDI if frame.bidirectional else FrameType.MAX_STREAMS_UNI
        )
        out += encode_varint(frame.maximum)
    elif isinstance(frame, DataBlockedFrame):
        out += encode_varint(FrameType.DATA_BLOCKED)
        out += encode_varint(frame.limit)
    elif isinstance(frame, StreamDataBlockedFrame):
        out += encode_varint(FrameType.STREAM_DATA_BLOCKED)
        out += encode_varint(frame.stream_id)
        out += encode_varint(frame.limit)
    elif isinstance(frame, StreamsBlockedFrame):
        out += encode_varint(
            FrameType.STREAMS_BLOCKED_BIDI if frame.bidirectional else FrameType.STREAMS_BLOCKED_UNI
        )
        out += encode_varint(frame.limit)
    elif isinstance(frame, NewConnectionIdFrame):
        if len(frame.connection_id) > 255:
            raise RangeError("connection id longer than one length byte allows")
        if len(frame.stateless_reset_token) != RESET_TOKEN_LEN:
            raise RangeError("stateless reset token must be 16 bytes")
        out += encode_varint(FrameType.NEW_CONNECTION_ID)
        out += encode_varint(frame.sequence_number)
        out += encode_varint(frame.retire_prior_to)
        out += bytes([len(frame.connection_id)])
        out += frame.connection_id
        out += frame.stateless_reset_token
    elif isinstance(frame, RetireConnectionIdFrame):
        out += encode_varint(FrameType.RETIRE_CONNECTION_ID)
        out += encode_varint(frame.sequence_number)
    elif isinstance(frame, PathChallengeFrame):
        if len(frame.data) != PATH_DATA_LEN:
            raise RangeError("path challenge data must be 8 bytes")
        out += encode_varint(FrameType.PATH_CHALLENGE)
        out += frame.data
    elif isinstance(frame, PathResponseFrame):
        if len(frame.data) != PATH_DATA_LEN:
            raise RangeError("path response data must be 8 bytes")
        out += encode_varint(FrameType.PATH_RESPONSE)
        out += frame.data
    elif isinstance(frame, ConnectionCloseFrame):
        if frame.is_application:
            out += encode_varint(FrameType.APPLICATION_CLOSE)
            out += encode_varint(frame.error_code)
        else:
            out += encode_varint(FrameType.TRANSPORT_CLOSE)
            out += encode_varint(frame.error_code)
            out += encode_varint(frame.frame_type)
        out += encode_varint(len(frame.reason))
        out += frame.reason
    elif isinstance(frame, HandshakeDoneFrame):
        out += encode_varint(FrameType.HANDSHAKE_DONE)
    elif isinstance(frame, UnknownFrame):
        if frame.type_code <= HIGHEST_KNOWN_FRAME_TYPE:
            raise RangeError(f"type code 0x{frame.type_code:x} is assigned, not unknown")
        out += encode_varint(frame.type_code)
        out += encode_varint(len(frame.body))
        out += frame.body
    else:
        raise TypeError(f"not a frame: {frame!r}")
    return bytes(out)


def decode_frame(data: bytes, offset: int = 0) -> tuple[Frame, int]:
    """Decode one frame at `offset`; returns (frame, bytes consumed)."""
    r = _Reader(data, offset)
    type_code = r.varint("frame type")

    if type_code == FrameType.PADDING:
        return PaddingFrame(), r.pos - offset
    if type_code == FrameType.PING:
        return PingFrame(), r.pos - offset
    if type_code in (FrameType.ACK, FrameType.ACK_ECN):
        return _decode_ack(r, type_code == FrameType.ACK_ECN), r.pos - offset
    if type_code == FrameType.RESET_STREAM:
        f = ResetStreamFrame(
            stream_id=r.varint("RESET_STREAM.stream_id"),
            error_code=r.varint("RESET_STREAM.error_code"),
            final_size=r.varint("RESET_STREAM.final_size"),
        )
        return f, r.pos - offset
    if type_code == FrameType.STOP_SENDING:
        f = StopSendingFrame(
            stream_id=r.varint("STOP_SENDING.stream_id"),
            error_code=r.varint("STOP_SENDING.error_code"),
        )
        return f, r.pos - offset
    if type_code == FrameType.CRYPTO:
        crypto_offset = r.varint("CRYPTO.offset")
        length = r.varint("CRYPTO.length")
        return CryptoFrame(offset=crypto_offset, data=r.take(length, "CRYPTO.data")), r.pos - offset
    if type_code == FrameType.NEW_TOKEN:
        length = r.varint("NEW_TOKEN.length")
        return NewTokenFrame(token=r.take(length, "NEW_TOKEN.token")), r.pos - offset
    if FrameType.STREAM_BASE <= type_code <= FrameType.STREAM_BASE | 0x07:
        stream_id = r.varint("STREAM.stream_id")
        stream_offset = r.varint("STREAM.offset") if type_code & 0x04 else 0
        if type_code & 0x02:
            length = r.varint("STREAM.length")
            data_bytes = r.take(length, "STREAM.data")
        else:
            data_bytes = r.data[r.pos :]
            r.pos = len(r.data)
        if stream_offset + len(data_bytes) > VARINT_MAX:
            raise RangeError("stream offset plus length exceeds 2^62 - 1")
        f = StreamFrame(
            stream_id=stream_id,
            offset=stream_offset,
            data=data_bytes,
            fin=bool(type_code & 0x01),
        )
        return f, r.pos - offset
    if type_code == FrameType.MAX_DATA:
        return MaxDataFrame(maximum=r.varint("MAX_DATA.maximum")), r.pos - offset
    if type_code == FrameType.MAX_STREAM_DATA:
        f = MaxStreamDataFrame(
            stream_id=r.varint("MAX_STREAM_DATA.stream_id"),
            maximum=r.varint("MAX_STREAM_DATA.maximum"),
        )
        return f, r.pos - offset
    if type_code in (FrameType.MAX_STREAMS_BIDI, FrameType.MAX_STREAMS_UNI):
        f = MaxStreamsFrame(
            maximum=r.varint("MAX_STREAMS.maximum"),
            bidirectional=type_code == FrameType.MAX_STREAMS_BIDI,
        )
        return f, r.pos - offset
    if type_code == FrameType.DATA_BLOCKED:
        return DataBlockedFrame(limit=r.varint("DATA_BLOCKED.limit")), r.pos - offset
    if type_code == FrameType.STREAM_DATA_BLOCKED:
        f = StreamDataBlockedFrame(
            stream_id=r.varint("STREAM_DATA_BLOCKED.stream_id"),
            limit=r.varint("STREAM_DATA_BLOCKED.limit"),
        )
        return f, r.pos - offset
    if type_code in (FrameType.STREAMS_BLOCKED_BIDI, FrameType.STREAMS_BLOCKED_UNI):
        f = StreamsBlockedFrame(
            limit=r.varint("STREAMS_BLOCKED.limit"),
            bidirectional=type_code == FrameType.STREAMS_BLOCKED_BIDI,
        )
        return f, r.pos - offset
    if type_code == FrameType.NEW_CONNECTION_ID:
        seq = r.varint("NEW_CONNECTION_ID.sequence_number")
        retire = r.varint("NEW_CONNECTION_ID.retire_prior_to")
        cid_len = r.u8("NEW_CONNECTION_ID.length")
        f = NewConnectionIdFrame(
            sequence_number=seq,
            retire_prior_to=retire,
            connection_id=r.take(cid_len, "NEW_CONNECTION_ID.connection_id"),
            stateless_reset_token=r.take(RESET_TOKEN_LEN, "NEW_CONNECTION_ID.reset_token"),
        )
        return f, r.pos - offset
    if type_code == FrameType.RETIRE_CONNECTION_ID:
        f = RetireConnectionIdFrame(sequence_number=r.varint("RETIRE_CONNECTION_ID.sequence_number"))
        return f, r.pos - offset
    if type_code == FrameType.PATH_CHALLENGE:
        return PathChallengeFrame(data=r.take(PATH_DATA_LEN, "PATH_CHALLENGE.data")), r.pos - offset
    if type_code == FrameType.PATH_RESPONSE:
        return PathResponseFrame(data=r.take(PATH_DATA_LEN, "PATH_RESPONSE.data")), r.pos - offset
    if type_code in (FrameType.TRANSPORT_CLOSE, FrameType.APPLICATION_CLOSE):
        error_code = r.varint("CONNECTION_CLOSE.error_code")
        frame_type = (
            r.varint("CONNECTION_CLOSE.frame_type")
            if type_code == FrameType.TRANSPORT_CLOSE
            else None
        )
        reason_len = r.varint("CONNECTION_CLOSE.reason_length")
        f = ConnectionCloseFrame(
            error_code=error_code,
            frame_type=frame_type,
            reason=r.take(reason_len, "CONNECTION_CLOSE.reason"),
        )
        return f, r.pos - offset
    if type_code == FrameType.HANDSHAKE_DONE:
        return HandshakeDoneFrame(), r.pos - offset

    # Unassigned code: length-prefixed body per the greased-frame convention.
    body_len = r.varint("UNKNOWN.length")
    return UnknownFrame(type_code=type_code, body=r.take(body_len, "UNKNOWN.body")), r.pos - offset


def decode_frames(payload: bytes) -> list[Frame]:
    """Split a packet payload into frames; a packet with none is malformed."""
    frames: list[Frame] = []
    pos = 0
    while pos < len(payload):
        frame, used = decode_frame(payload, pos)
        frames.append(frame)
        pos += used
    if not frames:
        raise MalformedPacketError("packet payload contains no frames")
    return frames
