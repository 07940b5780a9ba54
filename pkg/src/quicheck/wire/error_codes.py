"""Transport error codes (draft-29 section 20)."""

from enum import IntEnum


class TransportErrorCode(IntEnum):
    NO_ERROR = 0x0
    INTERNAL_ERROR = 0x1
    SERVER_BUSY = 0x2
    FLOW_CONTROL_ERROR = 0x3
    STREAM_LIMIT_ERROR = 0x4
    STREAM_STATE_ERROR = 0x5
    FINAL_SIZE_ERROR = 0x6
    FRAME_ENCODING_ERROR = 0x7
    TRANSPORT_PARAMETER_ERROR = 0x8
    CONNECTION_ID_LIMIT_ERROR = 0x9
    PROTOCOL_VIOLATION = 0xA
    INVALID_TOKEN = 0xB
    APPLICATION_ERROR = 0xC
    CRYPTO_BUFFER_EXCEEDED = 0xD


def error_code_name(code: int) -> str:
    try:
        return TransportErrorCode(code).name
    except ValueError:
        if 0x100 <= code <= 0x1FF:
            return f"CRYPTO_ERROR_{code - 0x100:02x}"
        return f"0x{code:x}"
