"""Per-connection requirement monitor.

One `ConnectionState` lives for exactly one test iteration. The monitor
consumes datagrams in both directions — traffic the tester generated as well
as traffic received from the peer — decodes them, emits packet/frame events,
evaluates every applicable requirement check, and records verdicts. Verdict
order is fully determined by event order, so identical event sequences yield
identical verdict sequences.

Handshake state follows the null-cipher mock handshake: CRYPTO frames carry
tagged blobs (hello with transport parameters, then finished) instead of TLS.
"""

from dataclasses import dataclass, field
from enum import Enum

from .requirements import Direction, RequirementRegistry, Verdict, default_registry
from .wire import (
    AckFrame,
    ConnectionCloseFrame,
    CryptoFrame,
    DecodeContext,
    Frame,
    FrameKind,
    HandshakeDoneFrame,
    MAX_CID_LEN,
    MaxDataFrame,
    MaxStreamDataFrame,
    MaxStreamsFrame,
    NewConnectionIdFrame,
    NewTokenFrame,
    Packet,
    PacketType,
    PathChallengeFrame,
    PathResponseFrame,
    PINNED_VERSION,
    PnSpace,
    ResetStreamFrame,
    RetireConnectionIdFrame,
    StopSendingFrame,
    StreamFrame,
    StreamsBlockedFrame,
    TpId,
    TransportParameterSet,
    UnknownFrame,
    WireError,
    decode_datagram,
    decode_transport_params,
    decode_varint,
    encode_varint,
    is_probing_frame,
)

Address = tuple[str, int]

MAX_STREAM_COUNT = 1 << 60

# Mock-handshake CRYPTO blob tags (null-cipher stand-in for TLS messages).
CRYPTO_TAG_CLIENT_HELLO = 0x01
CRYPTO_TAG_SERVER_HELLO = 0x02
CRYPTO_TAG_FINISHED = 0x03


class Role(Enum):
    CLIENT = "client"
    SERVER = "server"

    @property
    def opposite(self) -> "Role":
        return Role.SERVER if self is Role.CLIENT else Role.CLIENT


class MigrationPolicy(Enum):
    """How to read "highest-numbered non-probing packet" across spaces."""

    ALL_LEVELS = "all-levels"
    APP_LEVEL_ONLY = "app-level"


class EventKind(Enum):
    DATAGRAM_RECEIVED = "datagram_received"
    DATAGRAM_SENT = "datagram_sent"
    PACKET = "packet_event"
    FRAME = "frame_event"
    TIMEOUT = "timeout"
    CLOSE = "close"


@dataclass(frozen=True)
class ProtocolEvent:
    kind: EventKind
    direction: Direction
    src: Address
    dst: Address
    time_ms: int
    summary: str


class UndefinedAddressError(Exception):
    """No non-probing packet has been received yet."""


@dataclass
class PacketRecord:
    packet_number: int
    space: PnSpace
    src: Address
    probing: bool
    ack_only: bool
    kinds: frozenset


@dataclass
class SpaceTracker:
    largest: int = -1
    records: dict[int, PacketRecord] = field(default_factory=dict)


def _fresh_spaces() -> dict[PnSpace, SpaceTracker]:
    return {space: SpaceTracker() for space in PnSpace}


@dataclass
class PnBook:
    """Packet-number bookkeeping; mutated only by packet events."""

    sent: dict[PnSpace, SpaceTracker] = field(default_factory=_fresh_spaces)
    received: dict[PnSpace, SpaceTracker] = field(default_factory=_fresh_spaces)

    def tracker(self, direction: Direction) -> dict[PnSpace, SpaceTracker]:
        return self.sent if direction is Direction.FROM_TESTER else self.received

    def largest_map(self, direction: Direction) -> dict[PnSpace, int]:
        return {space: t.largest for space, t in self.tracker(direction).items()}


@dataclass
class SideFlow:
    """Limits advertised by one side and the bytes its peer has consumed."""

    max_data: int = 0
    max_streams_bidi: int = 0
    max_streams_uni: int = 0
    stream_limits: dict[int, int] = field(default_factory=dict)  # overrides per stream
    consumed_toward: int = 0  # connection bytes the *other* side has sent


@dataclass
class StreamState:
    sent_high: int = 0
    sent_fin: bool = False
    recv_high: int = 0
    recv_fin: bool = False
    reset_sent: bool = False  # tester abandoned its sending side
    stop_sent: bool = False  # tester asked the peer to stop its side


@dataclass
class FlowLedger:
    """Flow-control bookkeeping; mutated only by frame events."""

    tester: SideFlow = field(default_factory=SideFlow)  # advertised by tester
    peer: SideFlow = field(default_factory=SideFlow)  # advertised by peer
    streams: dict[int, StreamState] = field(default_factory=dict)

    def advertiser(self, direction: Direction) -> SideFlow:
        return self.tester if direction is Direction.FROM_TESTER else self.peer

    def receiver_side(self, sender: Direction) -> SideFlow:
        # limits that constrain `sender` were advertised by the other side
        return self.peer if sender is Direction.FROM_TESTER else self.tester

    def stream(self, stream_id: int) -> StreamState:
        return self.streams.setdefault(stream_id, StreamState())


@dataclass
class HandshakeStatus:
    started: bool = False
    client_finished: bool = False
    server_finished: bool = False
    handshake_done_seen: bool = False  # observed by the client side

    @property
    def tls_finished_exchanged(self) -> bool:
        return self.client_finished and self.server_finished

    def confirmed_for(self, role: Role) -> bool:
        if role is Role.CLIENT:
            return self.handshake_done_seen
        return self.tls_finished_exchanged


@dataclass
class CidTable:
    issued: dict[int, bytes] = field(default_factory=dict)  # seq -> cid
    retire_prior_to: int = 0
    retired: set[int] = field(default_factory=set)

    def known_seqs(self) -> set[int]:
        return set(self.issued) | {0}


@dataclass
class AddressStat:
    highest_nonprobing: dict[PnSpace, int] = field(default_factory=dict)


@dataclass
class PathBook:
    """Per-direction address bookkeeping; mutated only by packet events."""

    stats: dict[Address, AddressStat] = field(default_factory=dict)
    current: Address | None = None  # address of the latest non-probing packet
    changes: list[tuple[int, Address]] = field(default_factory=list)  # (event idx, new addr)

    def record_nonprobing(self, addr: Address, space: PnSpace, pn: int, event_index: int) -> bool:
        stat = self.stats.setdefault(addr, AddressStat())
        stat.highest_nonprobing[space] = max(stat.highest_nonprobing.get(space, -1), pn)
        changed = self.current is not None and self.current != addr
        if self.current != addr:
            self.current = addr
            if changed:
                self.changes.append((event_index, addr))
        return changed


@dataclass
class ChallengeBook:
    pending_from_peer: list[bytes] = field(default_factory=list)  # awaiting tester response
    pending_from_tester: list[bytes] = field(default_factory=list)
    peer_challenges: list[tuple[int, Address]] = field(default_factory=list)  # (event idx, dst)
    validated_addresses: set[Address] = field(default_factory=set)


@dataclass
class CloseRecord:
    error_code: int
    frame_type: int | None
    space: PnSpace
    event_index: int
    handshake_complete: bool  # at the moment the close arrived

    @property
    def is_application(self) -> bool:
        return self.frame_type is None


@dataclass
class StimulusRecord:
    """Marks when deliberately non-conformant traffic was sent."""

    event_index: int
    time_ms: int
    description: str


@dataclass
class ConnectionState:
    role: Role  # role of the tester
    iteration_tag: int = 0

    tester_cid: bytes | None = None
    peer_cid: bytes | None = None
    original_dcid: bytes | None = None

    pn_book: PnBook = field(default_factory=PnBook)
    flow: FlowLedger = field(default_factory=FlowLedger)
    handshake: HandshakeStatus = field(default_factory=HandshakeStatus)
    crypto_offsets: dict[tuple[Direction, PnSpace], int] = field(default_factory=dict)

    tester_params: TransportParameterSet | None = None
    peer_params: TransportParameterSet | None = None

    cids_tester: CidTable = field(default_factory=CidTable)  # issued by tester
    cids_peer: CidTable = field(default_factory=CidTable)

    paths_from_tester: PathBook = field(default_factory=PathBook)
    paths_from_peer: PathBook = field(default_factory=PathBook)
    challenges: ChallengeBook = field(default_factory=ChallengeBook)

    tester_close: CloseRecord | None = None
    peer_close: CloseRecord | None = None
    stimulus: StimulusRecord | None = None
    token_sent_invalid: bool = False

    # Driver-side send state, read and consumed by the generator.
    request_streams: set[int] = field(default_factory=set)
    pending_stream_data: dict[int, bytes] = field(default_factory=dict)
    stream_write_cursor: dict[int, int] = field(default_factory=dict)
    pending_crypto: dict[PnSpace, bytes] = field(default_factory=dict)
    pending_token: bytes | None = None  # Initial token field to send
    app_crypto_cursor: int = 0

    events: list[ProtocolEvent] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def is_invalid_token_signalled(self) -> bool:
        return self.peer_close is not None and self.peer_close.error_code == 0x0B

    def sender_role(self, direction: Direction) -> Role:
        return self.role if direction is Direction.FROM_TESTER else self.role.opposite

    def params_of(self, direction: Direction) -> TransportParameterSet | None:
        return self.tester_params if direction is Direction.FROM_TESTER else self.peer_params

    def next_packet_number(self, space: PnSpace) -> int:
        return self.pn_book.sent[space].largest + 1

    def last_peer_activity_index(self) -> int:
        last = -1
        for i, ev in enumerate(self.events):
            if ev.direction is Direction.FROM_PEER and ev.kind is EventKind.PACKET:
                last = i
        return last


def classify_probing(frame: Frame) -> bool:
    """True when the frame is a probing frame."""
    return is_probing_frame(frame)


def classify_probing_packet(packet: Packet) -> bool:
    """A packet is probing only when every contained frame is probing."""
    return all(is_probing_frame(f) for f in packet.frames)


def expected_peer_address(state: ConnectionState, policy: MigrationPolicy) -> Address:
    """Address the peer must send non-probing packets to, under `policy`.

    Derived from the non-probing packets the peer has received (the tester's
    transmissions). Under ALL_LEVELS the raw packet numbers of all spaces
    compete, ties broken by space order initial < handshake < application;
    under APP_LEVEL_ONLY only application-space packets count.
    """
    book = state.paths_from_tester
    best: tuple[int, int] | None = None
    best_addr: Address | None = None
    for addr, stat in book.stats.items():
        for space, pn in stat.highest_nonprobing.items():
            if policy is MigrationPolicy.APP_LEVEL_ONLY and space is not PnSpace.APPLICATION:
                continue
            key = (pn, space.value)
            if best is None or key > best:
                best = key
                best_addr = addr
    if best_addr is None:
        raise UndefinedAddressError("no non-probing packet observed yet")
    return best_addr


def parse_crypto_blob(data: bytes) -> tuple[int, bytes] | None:
    """Split a mock-handshake CRYPTO blob into (tag, body); None if opaque."""
    if len(data) < 2:
        return None
    tag = data[0]
    if tag not in (CRYPTO_TAG_CLIENT_HELLO, CRYPTO_TAG_SERVER_HELLO, CRYPTO_TAG_FINISHED):
        return None
    try:
        length, used = decode_varint(data, 1, "crypto blob length")
    except WireError:
        return None
    if 1 + used + length != len(data):
        return None
    return tag, data[1 + used : 1 + used + length]


def build_crypto_blob(tag: int, body: bytes = b"") -> bytes:
    return bytes([tag]) + encode_varint(len(body)) + body


# Frame kinds permitted in initial/handshake packets; application packets
# allow everything (judging UNKNOWN is a separate check).
_HANDSHAKE_LEVEL_KINDS = frozenset(
    {FrameKind.PADDING, FrameKind.PING, FrameKind.ACK, FrameKind.CRYPTO, FrameKind.CONNECTION_CLOSE}
)


class Monitor:
    """Evaluates requirement checks over one connection's event stream."""

    def __init__(
        self,
        role: Role,
        policy: MigrationPolicy = MigrationPolicy.APP_LEVEL_ONLY,
        registry: RequirementRegistry | None = None,
    ):
        self.role = role
        self.policy = policy
        self.registry = registry or default_registry()

    def new_state(self, iteration_tag: int = 0) -> ConnectionState:
        return ConnectionState(role=self.role, iteration_tag=iteration_tag)

    # -- verdict helpers ---------------------------------------------------

    def _violation(
        self, state: ConnectionState, requirement: str, direction: Direction, detail: str
    ) -> Verdict:
        assert requirement in self.registry, f"unregistered requirement {requirement}"
        verdict = Verdict(
            requirement=requirement,
            status="violation",
            direction=direction,
            detail=detail,
            event_index=len(state.events) - 1,
        )
        state.verdicts.append(verdict)
        return verdict

    def _passed(
        self, state: ConnectionState, requirement: str, direction: Direction, detail: str
    ) -> Verdict:
        assert requirement in self.registry, f"unregistered requirement {requirement}"
        verdict = Verdict(
            requirement=requirement,
            status="pass",
            direction=direction,
            detail=detail,
            event_index=len(state.events) - 1,
        )
        state.verdicts.append(verdict)
        return verdict

    # -- ingestion ---------------------------------------------------------

    def decode_context(self, state: ConnectionState, direction: Direction) -> DecodeContext:
        if direction is Direction.FROM_PEER:
            dcid = state.tester_cid
        else:
            dcid = state.peer_cid
        return DecodeContext(
            dcid_length=len(dcid) if dcid is not None else 8,
            largest_pn=state.pn_book.largest_map(direction),
        )

    def ingest_datagram(
        self,
        state: ConnectionState,
        direction: Direction,
        src: Address,
        dst: Address,
        data: bytes,
        now_ms: int = 0,
    ) -> tuple[list[ProtocolEvent], list[Verdict]]:
        """Decode one datagram and run every applicable check, in order."""
        first_event = len(state.events)
        first_verdict = len(state.verdicts)
        dgram_kind = (
            EventKind.DATAGRAM_SENT
            if direction is Direction.FROM_TESTER
            else EventKind.DATAGRAM_RECEIVED
        )
        state.events.append(
            ProtocolEvent(dgram_kind, direction, src, dst, now_ms, f"{len(data)} bytes")
        )

        try:
            packets = decode_datagram(data, self.decode_context(state, direction))
        except WireError as exc:
            self._violation(state, "WIRE_DECODABLE", direction, f"undecodable datagram: {exc}")
            return state.events[first_event:], state.verdicts[first_verdict:]

        for packet in packets:
            state.events.append(
                ProtocolEvent(
                    EventKind.PACKET,
                    direction,
                    src,
                    dst,
                    now_ms,
                    f"{packet.packet_type.value} pn={packet.packet_number} "
                    f"frames={len(packet.frames)}",
                )
            )
            self.packet_event(state, packet, direction, src, dst)
            self.check_migration(state, packet, direction, src, dst)
            for frame in packet.frames:
                state.events.append(
                    ProtocolEvent(
                        EventKind.FRAME, direction, src, dst, now_ms, frame.KIND.value
                    )
                )
                self.frame_event(state, frame, packet, direction)
        return state.events[first_event:], state.verdicts[first_verdict:]

    # -- packet-level checks -------------------------------------------------

    def packet_event(
        self,
        state: ConnectionState,
        packet: Packet,
        direction: Direction,
        src: Address,
        dst: Address,
    ) -> list[Verdict]:
        before = len(state.verdicts)
        space = packet.space
        sender = state.sender_role(direction)

        if packet.is_long and packet.version != PINNED_VERSION:
            self._violation(
                state,
                "VERSION_PIN",
                direction,
                f"version 0x{packet.version:08x}, expected 0x{PINNED_VERSION:08x}",
            )

        for name, cid in (("DCID", packet.dcid), ("SCID", packet.scid)):
            if cid is not None and len(cid) > MAX_CID_LEN:
                self._violation(state, "CID_LEN_MAX", direction, f"{name} is {len(cid)} bytes")

        tracker = state.pn_book.tracker(direction)[space]
        if packet.packet_number in tracker.records:
            self._violation(
                state,
                "PKT_PN_DUPLICATE",
                direction,
                f"packet number {packet.packet_number} reused in {space.name} space",
            )
        elif packet.packet_number <= tracker.largest:
            self._violation(
                state,
                "PKT_PN_MONOTONIC",
                direction,
                f"packet number {packet.packet_number} after {tracker.largest} "
                f"in {space.name} space",
            )

        if packet.packet_type is PacketType.INITIAL and packet.token:
            # No Retry or NEW_TOKEN provisioning is modelled, so any token is
            # unexpected; servers must never send one.
            self._violation(
                state,
                "TOKEN_UNEXPECTED",
                direction,
                f"{sender.value} Initial carries a {len(packet.token)}-byte token",
            )
            if direction is Direction.FROM_TESTER:
                state.token_sent_invalid = True

        if space is not PnSpace.APPLICATION:
            for frame in packet.frames:
                if frame.KIND not in _HANDSHAKE_LEVEL_KINDS:
                    self._violation(
                        state,
                        "FRAME_ENC_LEVEL",
                        direction,
                        f"{frame.KIND.value} not permitted in {packet.packet_type.value} packets",
                    )
                elif (
                    isinstance(frame, ConnectionCloseFrame)
                    and frame.is_application
                ):
                    self._violation(
                        state,
                        "FRAME_ENC_LEVEL",
                        direction,
                        "application CONNECTION_CLOSE outside application space",
                    )

        # Bookkeeping (never touches flow ledgers).
        probing = classify_probing_packet(packet)
        kinds = frozenset(f.KIND for f in packet.frames)
        tracker.records[packet.packet_number] = PacketRecord(
            packet_number=packet.packet_number,
            space=space,
            src=src,
            probing=probing,
            ack_only=kinds <= {FrameKind.ACK, FrameKind.PADDING},
            kinds=kinds,
        )
        tracker.largest = max(tracker.largest, packet.packet_number)

        if packet.packet_type is PacketType.INITIAL:
            if direction is Direction.FROM_TESTER and state.tester_cid is None:
                state.tester_cid = packet.scid
                state.original_dcid = packet.dcid if state.role is Role.CLIENT else None
                state.cids_tester.issued.setdefault(0, packet.scid)
            if direction is Direction.FROM_PEER and state.peer_cid is None:
                state.peer_cid = packet.scid
                if state.role is Role.SERVER:
                    state.original_dcid = packet.dcid
                state.cids_peer.issued.setdefault(0, packet.scid)
            state.handshake.started = True

        if not probing:
            book = (
                state.paths_from_tester
                if direction is Direction.FROM_TESTER
                else state.paths_from_peer
            )
            book.record_nonprobing(src, space, packet.packet_number, len(state.events) - 1)

        return state.verdicts[before:]

    # -- migration checks ----------------------------------------------------

    def check_migration(
        self,
        state: ConnectionState,
        packet: Packet,
        direction: Direction,
        src: Address,
        dst: Address,
    ) -> list[Verdict]:
        before = len(state.verdicts)
        probing = classify_probing_packet(packet)
        sender = state.sender_role(direction)
        book = (
            state.paths_from_tester
            if direction is Direction.FROM_TESTER
            else state.paths_from_peer
        )

        # Address change by the sender (only non-probing packets migrate).
        if not probing and book.changes and book.changes[-1][0] == len(state.events) - 1:
            if not state.handshake.confirmed_for(sender):
                self._violation(
                    state,
                    "MIG_BEFORE_CONFIRMED",
                    direction,
                    f"{sender.value} changed address to {src} before handshake confirmation",
                )
            receiver_params = state.params_of(
                Direction.FROM_PEER if direction is Direction.FROM_TESTER else Direction.FROM_TESTER
            )
            if receiver_params is not None and receiver_params.has(TpId.DISABLE_ACTIVE_MIGRATION):
                self._violation(
                    state,
                    "MIG_DISABLED",
                    direction,
                    f"{sender.value} migrated while disable_active_migration is in effect",
                )

        # The peer's choice of destination for non-probing traffic.
        if direction is Direction.FROM_PEER and not probing:
            try:
                expected = expected_peer_address(state, self.policy)
            except UndefinedAddressError:
                expected = None
            if expected is not None and dst != expected:
                self._violation(
                    state,
                    "MIG_ADDR_TARGET",
                    direction,
                    f"peer sent non-probing traffic to {dst}, expected {expected} "
                    f"under {self.policy.value}",
                )
        return state.verdicts[before:]

    def check_path_validation(self, state: ConnectionState) -> list[Verdict]:
        """End-of-iteration check: each tester migration the peer had a chance
        to see must be followed by a peer PATH_CHALLENGE to the new address."""
        before = len(state.verdicts)
        for change_index, new_addr in state.paths_from_tester.changes:
            peer_saw_it = any(
                ev.kind is EventKind.PACKET and ev.direction is Direction.FROM_PEER
                for ev in state.events[change_index:]
            )
            if not peer_saw_it:
                continue
            challenged = any(
                idx > change_index and dst == new_addr
                for idx, dst in state.challenges.peer_challenges
            )
            if not challenged:
                self._violation(
                    state,
                    "MIG_NO_PATH_VALIDATION",
                    Direction.FROM_PEER,
                    f"no PATH_CHALLENGE to {new_addr} after migration at event {change_index}",
                )
        return state.verdicts[before:]

    # -- frame-level checks ----------------------------------------------------

    def frame_event(
        self, state: ConnectionState, frame: Frame, packet: Packet, direction: Direction
    ) -> list[Verdict]:
        before = len(state.verdicts)
        sender = state.sender_role(direction)
        space = packet.space
        event_index = len(state.events) - 1

        if isinstance(frame, UnknownFrame):
            self._violation(
                state,
                "FRAME_UNKNOWN",
                direction,
                f"frame with unassigned type 0x{frame.type_code:x}",
            )
        elif isinstance(frame, (NewTokenFrame, HandshakeDoneFrame)) and sender is Role.CLIENT:
            self._violation(
                state, "ROLE_ILLEGAL_FRAME", direction, f"client sent {frame.KIND.value}"
            )

        if isinstance(frame, NewTokenFrame) and not frame.token:
            self._violation(state, "NEWTOKEN_EMPTY", direction, "NEW_TOKEN with empty token")

        if isinstance(frame, StreamFrame):
            self._check_stream(state, frame, direction)
        elif isinstance(frame, ResetStreamFrame):
            if direction is Direction.FROM_TESTER:
                state.flow.stream(frame.stream_id).reset_sent = True
        elif isinstance(frame, StopSendingFrame):
            if direction is Direction.FROM_TESTER:
                state.flow.stream(frame.stream_id).stop_sent = True
        elif isinstance(frame, AckFrame):
            self._check_ack(state, frame, packet, direction)
        elif isinstance(frame, MaxDataFrame):
            side = state.flow.advertiser(direction)
            side.max_data = max(side.max_data, frame.maximum)
        elif isinstance(frame, MaxStreamDataFrame):
            self._check_max_stream_data(state, frame, direction)
        elif isinstance(frame, MaxStreamsFrame):
            if frame.maximum > MAX_STREAM_COUNT:
                self._violation(
                    state,
                    "MAX_STREAMS_LIMIT",
                    direction,
                    f"MAX_STREAMS permits {frame.maximum} > 2^60 streams",
                )
            side = state.flow.advertiser(direction)
            if frame.bidirectional:
                side.max_streams_bidi = max(side.max_streams_bidi, frame.maximum)
            else:
                side.max_streams_uni = max(side.max_streams_uni, frame.maximum)
        elif isinstance(frame, StreamsBlockedFrame):
            if frame.limit > MAX_STREAM_COUNT:
                self._violation(
                    state,
                    "STREAMS_BLOCKED_LIMIT",
                    direction,
                    f"STREAMS_BLOCKED carries limit {frame.limit} > 2^60",
                )
        elif isinstance(frame, NewConnectionIdFrame):
            self._check_new_cid(state, frame, direction)
        elif isinstance(frame, RetireConnectionIdFrame):
            issuer = (
                state.cids_peer if direction is Direction.FROM_TESTER else state.cids_tester
            )
            if frame.sequence_number not in issuer.known_seqs():
                self._violation(
                    state,
                    "RETIRE_UNKNOWN_SEQ",
                    direction,
                    f"retired sequence {frame.sequence_number} was never issued",
                )
        elif isinstance(frame, CryptoFrame):
            self._handle_crypto(state, frame, space, direction)
        elif isinstance(frame, HandshakeDoneFrame):
            if sender is Role.SERVER:
                state.handshake.handshake_done_seen = True
        elif isinstance(frame, PathChallengeFrame):
            if direction is Direction.FROM_PEER:
                state.challenges.pending_from_peer.append(frame.data)
                state.challenges.peer_challenges.append(
                    (event_index, state.events[event_index].dst)
                )
            else:
                state.challenges.pending_from_tester.append(frame.data)
        elif isinstance(frame, PathResponseFrame):
            pending = (
                state.challenges.pending_from_tester
                if direction is Direction.FROM_PEER
                else state.challenges.pending_from_peer
            )
            if frame.data in pending:
                pending.remove(frame.data)
                if direction is Direction.FROM_PEER:
                    state.challenges.validated_addresses.add(state.events[event_index].src)
        elif isinstance(frame, ConnectionCloseFrame):
            record = CloseRecord(
                error_code=frame.error_code,
                frame_type=frame.frame_type,
                space=space,
                event_index=event_index,
                handshake_complete=state.handshake.tls_finished_exchanged,
            )
            if direction is Direction.FROM_PEER and state.peer_close is None:
                state.peer_close = record
            if direction is Direction.FROM_TESTER and state.tester_close is None:
                state.tester_close = record

        # Draining: after the tester closed, the peer must not keep talking.
        if (
            direction is Direction.FROM_PEER
            and state.tester_close is not None
            and frame.KIND
            not in (FrameKind.CONNECTION_CLOSE, FrameKind.ACK, FrameKind.PADDING, FrameKind.PING)
        ):
            self._violation(
                state,
                "CLOSE_DRAINING",
                direction,
                f"peer sent {frame.KIND.value} after the connection was closed",
            )

        return state.verdicts[before:]

    def _check_stream(self, state: ConnectionState, frame: StreamFrame, direction: Direction):
        limits = state.flow.receiver_side(direction)
        st = state.flow.stream(frame.stream_id)
        end = frame.offset + len(frame.data)

        limit = limits.stream_limits.get(
            frame.stream_id, self._initial_stream_limit(state, frame.stream_id, direction)
        )
        if end > limit:
            self._violation(
                state,
                "FLOW_MAX_STREAM_DATA",
                direction,
                f"stream {frame.stream_id} data up to byte {end} exceeds limit {limit}",
            )

        high = st.sent_high if direction is Direction.FROM_TESTER else st.recv_high
        delta = max(0, end - high)
        limits.consumed_toward += delta
        if limits.consumed_toward > limits.max_data:
            self._violation(
                state,
                "FLOW_MAX_DATA",
                direction,
                f"connection data {limits.consumed_toward} exceeds max_data {limits.max_data}",
            )

        if direction is Direction.FROM_TESTER:
            st.sent_high = max(st.sent_high, end)
            st.sent_fin = st.sent_fin or frame.fin
        else:
            st.recv_high = max(st.recv_high, end)
            st.recv_fin = st.recv_fin or frame.fin

        if self._initiated_by(frame.stream_id) == state.sender_role(direction):
            bidi = frame.stream_id % 4 < 2
            allowed = limits.max_streams_bidi if bidi else limits.max_streams_uni
            count = (frame.stream_id >> 2) + 1
            if count > allowed:
                self._violation(
                    state,
                    "STREAM_LIMIT",
                    direction,
                    f"stream {frame.stream_id} implies {count} streams, limit {allowed}",
                )

    def _initial_stream_limit(
        self, state: ConnectionState, stream_id: int, sender: Direction
    ) -> int:
        receiver = (
            Direction.FROM_PEER if sender is Direction.FROM_TESTER else Direction.FROM_TESTER
        )
        params = state.params_of(receiver)
        if params is None:
            return 0
        bidi = stream_id % 4 < 2
        if not bidi:
            return params.get_varint(TpId.INITIAL_MAX_STREAM_DATA_UNI) or 0
        opener = self._initiated_by(stream_id)
        receiver_role = state.sender_role(receiver)
        if opener is receiver_role:
            return params.get_varint(TpId.INITIAL_MAX_STREAM_DATA_BIDI_LOCAL) or 0
        return params.get_varint(TpId.INITIAL_MAX_STREAM_DATA_BIDI_REMOTE) or 0

    @staticmethod
    def _initiated_by(stream_id: int) -> Role:
        return Role.CLIENT if stream_id % 2 == 0 else Role.SERVER

    def _check_ack(
        self, state: ConnectionState, frame: AckFrame, packet: Packet, direction: Direction
    ):
        # An ACK from X acknowledges packets sent by the other side.
        other = (
            Direction.FROM_PEER if direction is Direction.FROM_TESTER else Direction.FROM_TESTER
        )
        tracker = state.pn_book.tracker(other)[packet.space]
        acked = frame.acknowledged()
        unsent = sorted(pn for pn in acked if pn not in tracker.records)
        if unsent:
            self._violation(
                state,
                "ACK_UNSENT_PN",
                direction,
                f"acknowledged never-sent packet number(s) {unsent[:4]} in {packet.space.name}",
            )
        acking_record = state.pn_book.tracker(direction)[packet.space].records.get(
            packet.packet_number
        )
        if acking_record is not None and acking_record.ack_only:
            ack_only_targets = [
                pn for pn in acked if pn in tracker.records and tracker.records[pn].ack_only
            ]
            if ack_only_targets:
                self._violation(
                    state,
                    "ACK_OF_ACK",
                    direction,
                    f"ACK-only packet acknowledges ACK-only packet(s) {ack_only_targets[:4]}",
                )

    def _check_max_stream_data(
        self, state: ConnectionState, frame: MaxStreamDataFrame, direction: Direction
    ):
        sender = state.sender_role(direction)
        opener = self._initiated_by(frame.stream_id)
        bidi = frame.stream_id % 4 < 2
        opened = frame.stream_id in state.flow.streams
        # Credit for a stream the sender cannot receive on, or that nobody opened.
        receive_only_for_sender = not bidi and opener is sender
        if receive_only_for_sender or (not opened and opener is not sender):
            self._violation(
                state,
                "MAX_STREAM_DATA_STATE",
                direction,
                f"MAX_STREAM_DATA for {'receive-only' if receive_only_for_sender else 'unopened'} "
                f"stream {frame.stream_id}",
            )
        side = state.flow.advertiser(direction)
        current = side.stream_limits.get(frame.stream_id, 0)
        side.stream_limits[frame.stream_id] = max(current, frame.maximum)

    def _check_new_cid(
        self, state: ConnectionState, frame: NewConnectionIdFrame, direction: Direction
    ):
        if not 1 <= len(frame.connection_id) <= MAX_CID_LEN:
            self._violation(
                state,
                "NCID_LEN",
                direction,
                f"NEW_CONNECTION_ID with {len(frame.connection_id)}-byte CID",
            )
        if frame.retire_prior_to > frame.sequence_number:
            self._violation(
                state,
                "NCID_RETIRE_ORDER",
                direction,
                f"retire_prior_to {frame.retire_prior_to} exceeds "
                f"sequence number {frame.sequence_number}",
            )
        table = state.cids_tester if direction is Direction.FROM_TESTER else state.cids_peer
        existing = table.issued.get(frame.sequence_number)
        if existing is not None and existing != frame.connection_id:
            self._violation(
                state,
                "NCID_SEQ_REUSE",
                direction,
                f"sequence {frame.sequence_number} reissued with a different CID",
            )
        else:
            table.issued[frame.sequence_number] = frame.connection_id
        table.retire_prior_to = max(table.retire_prior_to, frame.retire_prior_to)

    def _handle_crypto(
        self, state: ConnectionState, frame: CryptoFrame, space: PnSpace, direction: Direction
    ):
        key = (direction, space)
        state.crypto_offsets[key] = max(
            state.crypto_offsets.get(key, 0), frame.offset + len(frame.data)
        )
        parsed = parse_crypto_blob(frame.data)
        if parsed is None:
            return
        tag, body = parsed
        sender = state.sender_role(direction)
        if space is PnSpace.INITIAL and tag in (CRYPTO_TAG_CLIENT_HELLO, CRYPTO_TAG_SERVER_HELLO):
            try:
                params = decode_transport_params(body)
            except WireError as exc:
                self._violation(state, "WIRE_DECODABLE", direction, f"bad parameter block: {exc}")
                return
            if direction is Direction.FROM_TESTER:
                state.tester_params = params
            else:
                state.peer_params = params
            self.check_transport_params(state, params, direction)
            self._apply_flow_limits(state, params, direction)
        elif space is PnSpace.HANDSHAKE and tag == CRYPTO_TAG_FINISHED:
            if sender is Role.CLIENT:
                state.handshake.client_finished = True
            else:
                state.handshake.server_finished = True

    def _apply_flow_limits(
        self, state: ConnectionState, params: TransportParameterSet, direction: Direction
    ):
        side = state.flow.advertiser(direction)
        side.max_data = max(side.max_data, params.get_varint(TpId.INITIAL_MAX_DATA) or 0)
        side.max_streams_bidi = max(
            side.max_streams_bidi, params.get_varint(TpId.INITIAL_MAX_STREAMS_BIDI) or 0
        )
        side.max_streams_uni = max(
            side.max_streams_uni, params.get_varint(TpId.INITIAL_MAX_STREAMS_UNI) or 0
        )

    # -- transport parameter checks ---------------------------------------

    def check_transport_params(
        self, state: ConnectionState, params: TransportParameterSet, direction: Direction
    ) -> list[Verdict]:
        before = len(state.verdicts)
        sender = state.sender_role(direction)

        for dup in params.duplicate_ids():
            self._violation(
                state, "TP_DUP", direction, f"transport parameter 0x{dup:x} appears twice"
            )

        exponent = params.get_varint(TpId.ACK_DELAY_EXPONENT)
        if exponent is not None and exponent > 20:
            self._violation(
                state, "TP_INVALID_VALUE", direction, f"ack_delay_exponent {exponent} > 20"
            )

        cid_limit = params.get_varint(TpId.ACTIVE_CONNECTION_ID_LIMIT)
        if cid_limit is not None and cid_limit < 2:
            self._violation(
                state, "TP_INVALID_VALUE", direction, f"active_connection_id_limit {cid_limit} < 2"
            )

        if not params.has(TpId.INITIAL_SOURCE_CONNECTION_ID):
            self._violation(
                state, "TP_MISSING_ICID", direction, "initial_source_connection_id absent"
            )

        if sender is Role.SERVER and not params.has(TpId.ORIGINAL_DESTINATION_CONNECTION_ID):
            self._violation(
                state,
                "TP_MISSING_ODCID",
                direction,
                "server omitted original_destination_connection_id",
            )

        if sender is Role.CLIENT:
            for tp_id, _ in params.entries:
                if tp_id in (
                    TpId.ORIGINAL_DESTINATION_CONNECTION_ID,
                    TpId.STATELESS_RESET_TOKEN,
                    TpId.PREFERRED_ADDRESS,
                ):
                    self._violation(
                        state,
                        "TP_ROLE",
                        direction,
                        f"client sent server-only parameter 0x{tp_id:x}",
                    )

        if params.has(TpId.PREFERRED_ADDRESS):
            try:
                pref = params.preferred_address()
            except WireError as exc:
                self._violation(state, "WIRE_DECODABLE", direction, f"bad preferred_address: {exc}")
                pref = None
            if pref is not None and len(pref.connection_id) == 0:
                self._violation(
                    state, "TP_PREFADD_CID", direction, "preferred_address has a zero-length CID"
                )
        return state.verdicts[before:]

    # -- end-of-iteration classification ------------------------------------

    def check_error_response(self, state: ConnectionState, expected) -> Verdict:
        """Classify the peer's reaction against the expected outcome.

        The reaction is one of: correct code, wrong code, wrong encryption
        level, silent local handling (closed or stopped without reporting),
        or no reaction at all.
        """
        close = state.peer_close
        kind = expected.kind

        if kind is OutcomeKind.CLEAN_CLOSE or kind is OutcomeKind.IGNORED:
            if close is None or close.error_code == 0x00 or close.is_application:
                return self._passed(
                    state, "ERR_UNEXPECTED_CLOSE", Direction.FROM_PEER, "no unexpected error close"
                )
            return self._violation(
                state,
                "ERR_UNEXPECTED_CLOSE",
                Direction.FROM_PEER,
                f"peer closed with transport error 0x{close.error_code:x}",
            )

        # An error (or, for handshake-phase stimuli, a refused handshake) is required.
        if close is not None:
            if not close.is_application and close.error_code in expected.codes:
                if close.handshake_complete or close.space is not PnSpace.APPLICATION:
                    note = (
                        "matched primary code"
                        if close.error_code == expected.primary_code
                        else "matched acceptable alternative"
                    )
                    return self._passed(
                        state,
                        "ERR_CODE_EXPECTED",
                        Direction.FROM_PEER,
                        f"0x{close.error_code:x} ({note})",
                    )
                return self._violation(
                    state,
                    "ERR_WRONG_LEVEL",
                    Direction.FROM_PEER,
                    "correct error code but closed in the application space "
                    "before the handshake completed",
                )
            if close.error_code == 0x00:
                return self._violation(
                    state,
                    "ERR_SILENT",
                    Direction.FROM_PEER,
                    "peer closed cleanly instead of reporting the error",
                )
            return self._violation(
                state,
                "ERR_WRONG_CODE",
                Direction.FROM_PEER,
                f"peer reported 0x{close.error_code:x}, expected one of "
                f"{sorted(hex(c) for c in expected.codes)}",
            )

        if kind is OutcomeKind.HANDSHAKE_FAILURE_OR_ERROR:
            if not state.handshake.handshake_done_seen:
                return self._passed(
                    state,
                    "ERR_CODE_EXPECTED",
                    Direction.FROM_PEER,
                    "handshake never completed (rejection accepted)",
                )

        stimulus_index = state.stimulus.event_index if state.stimulus else -1
        if _peer_active_after(state, stimulus_index):
            return self._violation(
                state,
                "ERR_NO_RESPONSE",
                Direction.FROM_PEER,
                "peer carried on as if the stimulus were conformant",
            )
        return self._violation(
            state,
            "ERR_SILENT",
            Direction.FROM_PEER,
            "peer went silent after the stimulus without reporting an error",
        )

    def finalize_check(self, state: ConnectionState, spec) -> list[Verdict]:
        """Evaluate the test's end-of-run predicate over the final state."""
        before = len(state.verdicts)
        self.check_path_validation(state)
        self.check_error_response(state, spec.expected)

        if spec.goal == "deliver":
            pending = [
                sid
                for sid in sorted(state.request_streams)
                if sid not in state.flow.streams
                or not (state.flow.streams[sid].sent_fin and state.flow.streams[sid].recv_fin)
            ]
            if pending:
                self._violation(
                    state,
                    "GOAL_COMPLETION",
                    Direction.FROM_PEER,
                    f"request stream(s) {pending} still incomplete",
                )
            else:
                self._passed(
                    state,
                    "GOAL_COMPLETION",
                    Direction.FROM_PEER,
                    f"all {len(state.request_streams)} requests completed",
                )
        elif spec.goal == "serve":
            served = [
                sid
                for sid, st in state.flow.streams.items()
                if sid % 4 < 2 and st.recv_fin and st.sent_fin
            ]
            if len(served) >= spec.goal_requests:
                self._passed(
                    state,
                    "GOAL_COMPLETION",
                    Direction.FROM_PEER,
                    f"served {len(served)} requests",
                )
            else:
                self._violation(
                    state,
                    "GOAL_COMPLETION",
                    Direction.FROM_PEER,
                    f"served only {len(served)} of {spec.goal_requests} requests",
                )
        elif spec.goal == "close":
            if state.tester_close is not None:
                self._passed(
                    state, "GOAL_COMPLETION", Direction.FROM_TESTER, "close delivered"
                )
            else:
                self._violation(
                    state, "GOAL_COMPLETION", Direction.FROM_TESTER, "close never sent"
                )
        # goal "reaction": the error classification above is the whole predicate
        return state.verdicts[before:]


class OutcomeKind(Enum):
    CLEAN_CLOSE = "clean_close"
    TRANSPORT_ERROR = "transport_error"
    HANDSHAKE_FAILURE_OR_ERROR = "handshake_failure_or_error"
    IGNORED = "ignored"


@dataclass(frozen=True)
class ExpectedOutcome:
    """What the peer's reaction to a test must look like."""

    kind: OutcomeKind
    codes: frozenset = frozenset()
    primary_code: int | None = None

    def __post_init__(self):
        if self.kind in (OutcomeKind.TRANSPORT_ERROR, OutcomeKind.HANDSHAKE_FAILURE_OR_ERROR):
            if not self.codes:
                raise ValueError(f"{self.kind.value} outcome requires at least one error code")

    @classmethod
    def clean_close(cls) -> "ExpectedOutcome":
        return cls(kind=OutcomeKind.CLEAN_CLOSE)

    @classmethod
    def ignored(cls) -> "ExpectedOutcome":
        return cls(kind=OutcomeKind.IGNORED)

    @classmethod
    def transport_error(cls, primary: int, *also_acceptable: int) -> "ExpectedOutcome":
        return cls(
            kind=OutcomeKind.TRANSPORT_ERROR,
            codes=frozenset({primary, *also_acceptable}),
            primary_code=primary,
        )

    @classmethod
    def handshake_failure_or_error(cls, primary: int, *also_acceptable: int) -> "ExpectedOutcome":
        return cls(
            kind=OutcomeKind.HANDSHAKE_FAILURE_OR_ERROR,
            codes=frozenset({primary, *also_acceptable}),
            primary_code=primary,
        )


NO_ERROR_CODE = 0x00


def _peer_active_after(state: ConnectionState, event_index: int) -> bool:
    return any(
        ev.kind is EventKind.PACKET and ev.direction is Direction.FROM_PEER
        for ev in state.events[event_index + 1 :]
    )

