"""Codec error types. Decode errors carry byte offset and field name."""


class WireError(ValueError):
    """Base class for encode/decode failures."""


class RangeError(WireError):
    """A field value does not fit its wire representation."""


class TruncationError(WireError):
    """Input ended before a field was complete."""

    def __init__(self, field: str, offset: int, needed: int, available: int):
        super().__init__(
            f"truncated {field} at offset {offset}: need {needed} byte(s), have {available}"
        )
        self.field = field
        self.offset = offset
        self.needed = needed
        self.available = available


class MalformedPacketError(WireError):
    """A packet violates structural rules (e.g. contains no frames)."""
