"""Bit-exact QUIC draft-29 wire codec (null-cipher mode)."""

from .error_codes import TransportErrorCode, error_code_name
from .errors import MalformedPacketError, RangeError, TruncationError, WireError
from .frames import (
    AckFrame,
    ConnectionCloseFrame,
    CryptoFrame,
    DataBlockedFrame,
    Frame,
    FrameKind,
    FrameType,
    HandshakeDoneFrame,
    MaxDataFrame,
    MaxStreamDataFrame,
    MaxStreamsFrame,
    NewConnectionIdFrame,
    NewTokenFrame,
    PaddingFrame,
    PathChallengeFrame,
    PathResponseFrame,
    PingFrame,
    PROBING_FRAME_KINDS,
    ResetStreamFrame,
    RetireConnectionIdFrame,
    StopSendingFrame,
    StreamDataBlockedFrame,
    StreamFrame,
    StreamsBlockedFrame,
    UnknownFrame,
    decode_frame,
    decode_frames,
    encode_frame,
    is_probing_frame,
)
from .packet import (
    DecodeContext,
    MAX_CID_LEN,
    Packet,
    PacketType,
    PINNED_VERSION,
    PnSpace,
    decode_datagram,
    decode_packet,
    encode_datagram,
    encode_packet,
    pn_space,
    reconstruct_pn,
)
from .transport_params import (
    KNOWN_TP_IDS,
    PreferredAddress,
    SERVER_ONLY_TP_IDS,
    TpId,
    TransportParameterSet,
    decode_transport_params,
    default_params,
    encode_transport_params,
)
from .varint import VARINT_MAX, decode_varint, encode_varint, varint_size

__all__ = [
    "AckFrame",
    "ConnectionCloseFrame",
    "CryptoFrame",
    "DataBlockedFrame",
    "DecodeContext",
    "Frame",
    "FrameKind",
    "FrameType",
    "HandshakeDoneFrame",
    "KNOWN_TP_IDS",
    "MalformedPacketError",
    "MAX_CID_LEN",
    "MaxDataFrame",
    "MaxStreamDataFrame",
    "MaxStreamsFrame",
    "NewConnectionIdFrame",
    "NewTokenFrame",
    "Packet",
    "PacketType",
    "PaddingFrame",
    "PathChallengeFrame",
    "PathResponseFrame",
    "PingFrame",
    "PINNED_VERSION",
    "PnSpace",
    "PreferredAddress",
    "PROBING_FRAME_KINDS",
    "RangeError",
    "ResetStreamFrame",
    "RetireConnectionIdFrame",
    "SERVER_ONLY_TP_IDS",
    "StopSendingFrame",
    "StreamDataBlockedFrame",
    "StreamFrame",
    "StreamsBlockedFrame",
    "TpId",
    "TransportErrorCode",
    "TransportParameterSet",
    "TruncationError",
    "UnknownFrame",
    "VARINT_MAX",
    "WireError",
    "decode_datagram",
    "decode_frame",
    "decode_frames",
    "decode_packet",
    "decode_transport_params",
    "decode_varint",
    "default_params",
    "encode_datagram",
    "encode_frame",
    "encode_packet",
    "encode_transport_params",
    "encode_varint",
    "error_code_name",
    "is_probing_frame",
    "pn_space",
    "reconstruct_pn",
    "varint_size",
]
