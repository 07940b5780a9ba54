"""Constraint-driven randomized traffic generation.

Frame kinds are drawn by weight over the kinds currently legal in the
connection state (weights renormalize over the legal set), field values are
drawn from the state-legal domain, and named mutations force exactly one field
of one frame or packet outside its legal domain so the targeted requirement,
and only that requirement, is violated.

Everything is a pure function of (state snapshot, plan, rng); the rng is
always passed in, never global, so (plan, seed) determines the byte stream.
"""

import random
from dataclasses import dataclass, field, replace

from .engine import ConnectionState, Role
from .wire import (
    AckFrame,
    CryptoFrame,
    DataBlockedFrame,
    Frame,
    FrameKind,
    HandshakeDoneFrame,
    MaxDataFrame,
    MaxStreamDataFrame,
    MaxStreamsFrame,
    NewConnectionIdFrame,
    NewTokenFrame,
    Packet,
    PacketType,
    PathChallengeFrame,
    PathResponseFrame,
    PaddingFrame,
    PingFrame,
    PINNED_VERSION,
    PnSpace,
    PreferredAddress,
    ResetStreamFrame,
    RetireConnectionIdFrame,
    StopSendingFrame,
    StreamDataBlockedFrame,
    StreamFrame,
    StreamsBlockedFrame,
    TpId,
    UnknownFrame,
    encode_frame,
)

MAX_STREAM_COUNT = 1 << 60
DATAGRAM_BUDGET = 1200
MAX_FRAMES_PER_PACKET = 4


class ExhaustionError(Exception):
    """No legal frame kind, or rejection sampling ran out of retries."""


class MutationNotApplicable(Exception):
    """Skip signal: this packet cannot carry the mutation; try a later one."""


@dataclass(frozen=True)
class GenerationPlan:
    """Which frame kinds a test may generate, with what relative weights."""

    allowed_kinds: frozenset
    weights: dict = field(default_factory=dict)  # kind -> non-negative weight, default 1
    mutations: tuple = ()  # mutation ids, applied once each
    max_retries: int = 64

    def __post_init__(self):
        if not any(self.weight(k) > 0 for k in self.allowed_kinds):
            raise ValueError("plan needs at least one allowed kind with positive weight")
        for kind in self.weights:
            if kind not in self.allowed_kinds:
                raise ValueError(f"weight given for disallowed kind {kind}")

    def weight(self, kind) -> float:
        return self.weights.get(kind, 1)


@dataclass(frozen=True)
class Mutation:
    """A named, single-target corruption of otherwise conformant traffic."""

    id: str
    target_requirement: str
    phase: str  # "initial" | "app" | "params"
    description: str


def _kind_legal(kind: FrameKind, state: ConnectionState) -> bool:
    flow = state.flow
    if kind in (
        FrameKind.PADDING,
        FrameKind.PING,
        FrameKind.CRYPTO,
        FrameKind.PATH_CHALLENGE,
        FrameKind.NEW_CONNECTION_ID,
        FrameKind.UNKNOWN,
        FrameKind.MAX_DATA,
        FrameKind.MAX_STREAMS,
        FrameKind.DATA_BLOCKED,
        FrameKind.STREAMS_BLOCKED,
    ):
        return True
    if kind is FrameKind.ACK:
        return state.pn_book.received[PnSpace.APPLICATION].largest >= 0
    if kind is FrameKind.STREAM:
        return any(chunk for chunk in state.pending_stream_data.values())
    if kind is FrameKind.PATH_RESPONSE:
        return bool(state.challenges.pending_from_peer)
    if kind in (FrameKind.NEW_TOKEN, FrameKind.HANDSHAKE_DONE):
        return state.role is Role.SERVER
    if kind is FrameKind.RETIRE_CONNECTION_ID:
        return any(
            seq != 0 and seq not in state.cids_peer.retired for seq in state.cids_peer.issued
        )
    if kind is FrameKind.MAX_STREAM_DATA:
        return any(sid % 4 < 2 for sid in flow.streams)
    if kind is FrameKind.STREAM_DATA_BLOCKED:
        return bool(flow.streams)
    if kind in (FrameKind.RESET_STREAM, FrameKind.STOP_SENDING):
        return any(
            sid in flow.streams and not flow.streams[sid].reset_sent and not flow.streams[sid].stop_sent
            for sid in state.request_streams
        )
    return False


def sample_frame_kind(
    plan: GenerationPlan, rng: random.Random, state: ConnectionState
) -> FrameKind:
    """Draw a kind with probability weight(k) / sum of weights over legal kinds."""
    legal = sorted(
        (k for k in plan.allowed_kinds if plan.weight(k) > 0 and _kind_legal(k, state)),
        key=lambda k: k.value,
    )
    if not legal:
        raise ExhaustionError("no legal frame kind under the current state")
    weights = [plan.weight(k) for k in legal]
    return rng.choices(legal, weights=weights, k=1)[0]


def _stream_send_limit(state: ConnectionState, stream_id: int) -> int:
    """How far the tester may write on `stream_id` (peer-advertised)."""
    explicit = state.flow.peer.stream_limits.get(stream_id)
    if explicit is not None:
        return explicit
    params = state.peer_params
    if params is None:
        return 0
    if stream_id % 4 >= 2:
        return params.get_varint(TpId.INITIAL_MAX_STREAM_DATA_UNI) or 0
    opener_is_tester = (stream_id % 2 == 0) == (state.role is Role.CLIENT)
    key = (
        TpId.INITIAL_MAX_STREAM_DATA_BIDI_REMOTE
        if opener_is_tester
        else TpId.INITIAL_MAX_STREAM_DATA_BIDI_LOCAL
    )
    return params.get_varint(key) or 0


def synthesize_frame(kind: FrameKind, state: ConnectionState, rng: random.Random) -> Frame:
    """Build one conformant frame of `kind` from the state-legal domain."""
    if kind is FrameKind.PADDING:
        return PaddingFrame()
    if kind is FrameKind.PING:
        return PingFrame()

    if kind is FrameKind.ACK:
        tracker = state.pn_book.received[PnSpace.APPLICATION]
        pns = {tracker.largest}
        pns.update(pn for pn in tracker.records if rng.random() < 0.8)
        return AckFrame.from_packet_numbers(pns, delay=rng.randrange(0, 64))

    if kind is FrameKind.CRYPTO:
        offset = state.app_crypto_cursor
        data = bytes(rng.randrange(0x10, 0x100) for _ in range(rng.randrange(4, 25)))
        state.app_crypto_cursor = offset + len(data)
        return CryptoFrame(offset=offset, data=data)

    if kind is FrameKind.STREAM:
        sid = rng.choice(sorted(s for s, d in state.pending_stream_data.items() if d))
        pending = state.pending_stream_data[sid]
        offset = state.stream_write_cursor.get(sid, 0)
        room = max(0, _stream_send_limit(state, sid) - offset)
        window = max(0, state.flow.peer.max_data - state.flow.peer.consumed_toward)
        size = min(len(pending), rng.randrange(8, 301), room, window)
        if size <= 0:
            raise ExhaustionError(f"flow-control window closed for stream {sid}")
        chunk, rest = pending[:size], pending[size:]
        state.pending_stream_data[sid] = rest
        state.stream_write_cursor[sid] = offset + size
        fin = not rest and sid in state.request_streams
        return StreamFrame(stream_id=sid, offset=offset, data=chunk, fin=fin)

    if kind is FrameKind.MAX_DATA:
        return MaxDataFrame(maximum=state.flow.tester.max_data + rng.randrange(1024, 65536))

    if kind is FrameKind.MAX_STREAM_DATA:
        sid = rng.choice(sorted(s for s in state.flow.streams if s % 4 < 2))
        current = state.flow.tester.stream_limits.get(sid, 0)
        return MaxStreamDataFrame(stream_id=sid, maximum=current + rng.randrange(1024, 65536))

    if kind is FrameKind.MAX_STREAMS:
        bidi = rng.random() < 0.5
        current = (
            state.flow.tester.max_streams_bidi if bidi else state.flow.tester.max_streams_uni
        )
        return MaxStreamsFrame(
            maximum=min(current + rng.randrange(1, 17), MAX_STREAM_COUNT), bidirectional=bidi
        )

    if kind is FrameKind.DATA_BLOCKED:
        return DataBlockedFrame(limit=state.flow.peer.max_data)

    if kind is FrameKind.STREAM_DATA_BLOCKED:
        sid = rng.choice(sorted(state.flow.streams))
        return StreamDataBlockedFrame(stream_id=sid, limit=_stream_send_limit(state, sid))

    if kind is FrameKind.STREAMS_BLOCKED:
        return StreamsBlockedFrame(limit=state.flow.peer.max_streams_bidi, bidirectional=True)

    if kind is FrameKind.NEW_CONNECTION_ID:
        seq = max(state.cids_tester.issued, default=0) + 1
        return NewConnectionIdFrame(
            sequence_number=seq,
            retire_prior_to=min(state.cids_tester.retire_prior_to, seq),
            connection_id=rng.randbytes(8),
            stateless_reset_token=rng.randbytes(16),
        )

    if kind is FrameKind.RETIRE_CONNECTION_ID:
        candidates = sorted(
            seq
            for seq in state.cids_peer.issued
            if seq != 0 and seq not in state.cids_peer.retired
        )
        seq = rng.choice(candidates)
        state.cids_peer.retired.add(seq)
        return RetireConnectionIdFrame(sequence_number=seq)

    if kind is FrameKind.PATH_CHALLENGE:
        return PathChallengeFrame(data=rng.randbytes(8))

    if kind is FrameKind.PATH_RESPONSE:
        data = state.challenges.pending_from_peer.pop(0)
        return PathResponseFrame(data=data)

    if kind is FrameKind.NEW_TOKEN:
        return NewTokenFrame(token=rng.randbytes(rng.randrange(8, 25)))

    if kind is FrameKind.HANDSHAKE_DONE:
        return HandshakeDoneFrame()

    if kind is FrameKind.UNKNOWN:
        return UnknownFrame(
            type_code=rng.randrange(0x1F, 0x40), body=rng.randbytes(rng.randrange(0, 17))
        )

    if kind in (FrameKind.RESET_STREAM, FrameKind.STOP_SENDING):
        candidates = sorted(
            sid
            for sid in state.request_streams
            if sid in state.flow.streams
            and not state.flow.streams[sid].reset_sent
            and not state.flow.streams[sid].stop_sent
        )
        sid = rng.choice(candidates)
        state.pending_stream_data[sid] = b""
        if kind is FrameKind.RESET_STREAM:
            return ResetStreamFrame(
                stream_id=sid,
                error_code=rng.randrange(0, 16),
                final_size=state.stream_write_cursor.get(sid, 0),
            )
        return StopSendingFrame(stream_id=sid, error_code=rng.randrange(0, 16))

    raise ExhaustionError(f"cannot synthesize frame kind {kind}")


def build_packet(
    state: ConnectionState,
    plan: GenerationPlan,
    rng: random.Random,
    mutation: Mutation | None = None,
) -> Packet:
    """Assemble the next packet for the current handshake phase.

    Packet types are never selected directly: the phase alone dictates whether
    an Initial, a Handshake, or a short-header packet is produced. A mutation,
    when armed, is applied last so every other field stays self-check clean.
    """
    phase = _phase(state)
    if phase == "initial":
        packet = _build_initial(state)
    elif phase == "handshake":
        packet = _build_handshake(state)
    else:
        packet = _build_app(state, plan, rng)
    if mutation is not None:
        packet = apply_mutation(mutation, packet, rng, state)
    return packet


def _phase(state: ConnectionState) -> str:
    if state.pending_crypto.get(PnSpace.INITIAL):
        return "initial"
    if state.pending_crypto.get(PnSpace.HANDSHAKE):
        return "handshake"
    return "app"


def _ack_frame_for(state: ConnectionState, space: PnSpace) -> AckFrame | None:
    tracker = state.pn_book.received[space]
    if tracker.largest < 0:
        return None
    return AckFrame.from_packet_numbers(set(tracker.records), delay=0)


def _build_initial(state: ConnectionState) -> Packet:
    frames: list[Frame] = []
    ack = _ack_frame_for(state, PnSpace.INITIAL)
    if ack is not None:
        frames.append(ack)
    blob = state.pending_crypto.pop(PnSpace.INITIAL)
    frames.append(CryptoFrame(offset=0, data=blob))
    return Packet(
        packet_type=PacketType.INITIAL,
        dcid=state.peer_cid if state.peer_cid is not None else state.original_dcid,
        scid=state.tester_cid,
        version=PINNED_VERSION,
        token=state.pending_token,
        packet_number=state.next_packet_number(PnSpace.INITIAL),
        frames=tuple(frames),
    )


def _build_handshake(state: ConnectionState) -> Packet:
    frames: list[Frame] = []
    ack = _ack_frame_for(state, PnSpace.HANDSHAKE)
    if ack is not None:
        frames.append(ack)
    blob = state.pending_crypto.pop(PnSpace.HANDSHAKE)
    frames.append(CryptoFrame(offset=0, data=blob))
    return Packet(
        packet_type=PacketType.HANDSHAKE,
        dcid=state.peer_cid,
        scid=state.tester_cid,
        version=PINNED_VERSION,
        packet_number=state.next_packet_number(PnSpace.HANDSHAKE),
        frames=tuple(frames),
    )


# -- mutations ---------------------------------------------------------------

MUTATIONS: dict[str, Mutation] = {
    m.id: m
    for m in [
        Mutation(
            "nonzero_initial_token",
            "TOKEN_UNEXPECTED",
            "initial",
            "Initial packet carries a token although none was provided",
        ),
        Mutation(
            "inject_new_token",
            "ROLE_ILLEGAL_FRAME",
            "app",
            "a NEW_TOKEN frame is sent by the client",
        ),
        Mutation(
            "inject_handshake_done",
            "ROLE_ILLEGAL_FRAME",
            "app",
            "a HANDSHAKE_DONE frame is sent by the client",
        ),
        Mutation(
            "zero_length_new_token",
            "NEWTOKEN_EMPTY",
            "app",
            "NEW_TOKEN frame with its length field set to 0",
        ),
        Mutation(
            "newcid_zero_length",
            "NCID_LEN",
            "app",
            "NEW_CONNECTION_ID carrying a zero-length connection ID",
        ),
        Mutation(
            "newcid_retire_greater",
            "NCID_RETIRE_ORDER",
            "app",
            "NEW_CONNECTION_ID with retire_prior_to above its sequence number",
        ),
        Mutation(
            "newcid_seq_reuse",
            "NCID_SEQ_REUSE",
            "app",
            "the same sequence number is issued twice with different CIDs",
        ),
        Mutation(
            "retire_unknown_seq",
            "RETIRE_UNKNOWN_SEQ",
            "app",
            "RETIRE_CONNECTION_ID for a sequence number never issued",
        ),
        Mutation(
            "max_streams_over_limit",
            "MAX_STREAMS_LIMIT",
            "app",
            "MAX_STREAMS permitting more than 2^60 streams",
        ),
        Mutation(
            "streams_blocked_over_limit",
            "STREAMS_BLOCKED_LIMIT",
            "app",
            "STREAMS_BLOCKED with a limit above 2^60",
        ),
        Mutation(
            "stream_over_limit",
            "STREAM_LIMIT",
            "app",
            "STREAM frame on a stream id beyond the advertised limit",
        ),
        Mutation(
            "max_stream_data_unopened",
            "MAX_STREAM_DATA_STATE",
            "app",
            "MAX_STREAM_DATA for a stream the peer never opened",
        ),
        Mutation(
            "dup_tp",
            "TP_DUP",
            "params",
            "ack_delay_exponent transport parameter sent twice",
        ),
        Mutation(
            "invalid_tp_value",
            "TP_INVALID_VALUE",
            "params",
            "ack_delay_exponent above 20",
        ),
        Mutation(
            "acticoid_low",
            "TP_INVALID_VALUE",
            "params",
            "active_connection_id_limit below 2",
        ),
        Mutation(
            "missing_icid",
            "TP_MISSING_ICID",
            "params",
            "initial_source_connection_id omitted",
        ),
        Mutation(
            "missing_ocid",
            "TP_MISSING_ODCID",
            "params",
            "original_destination_connection_id omitted by the server",
        ),
        Mutation(
            "prefadd_zero_cid",
            "TP_PREFADD_CID",
            "params",
            "preferred_address with a zero-length connection ID",
        ),
    ]
}


def _with_frames(packet: Packet, extra: list[Frame]) -> Packet:
    return replace(packet, frames=packet.frames + tuple(extra))


def apply_mutation(
    mutation: Mutation, packet: Packet, rng: random.Random, state: ConnectionState
) -> Packet:
    """Force exactly the mutation's target field illegal on `packet`.

    Raises MutationNotApplicable when the packet's kind or phase does not
    match, so the caller can retry on a later packet.
    """
    if mutation.phase == "params":
        raise MutationNotApplicable("parameter mutations apply to the hello, not packets")

    if mutation.id == "nonzero_initial_token":
        if packet.packet_type is not PacketType.INITIAL:
            raise MutationNotApplicable("needs an Initial packet")
        return replace(packet, token=rng.randbytes(rng.randrange(7, 17)))

    if packet.packet_type is not PacketType.ONE_RTT:
        raise MutationNotApplicable("needs a short-header packet")

    if mutation.id == "inject_new_token":
        return _with_frames(packet, [NewTokenFrame(token=rng.randbytes(16))])
    if mutation.id == "inject_handshake_done":
        return _with_frames(packet, [HandshakeDoneFrame()])
    if mutation.id == "zero_length_new_token":
        return _with_frames(packet, [NewTokenFrame(token=b"")])
    if mutation.id == "newcid_zero_length":
        seq = max(state.cids_tester.issued, default=0) + 1
        return _with_frames(
            packet,
            [
                NewConnectionIdFrame(
                    sequence_number=seq,
                    retire_prior_to=0,
                    connection_id=b"",
                    stateless_reset_token=rng.randbytes(16),
                )
            ],
        )
    if mutation.id == "newcid_retire_greater":
        seq = max(state.cids_tester.issued, default=0) + 1
        return _with_frames(
            packet,
            [
                NewConnectionIdFrame(
                    sequence_number=seq,
                    retire_prior_to=seq + 1 + rng.randrange(0, 4),
                    connection_id=rng.randbytes(8),
                    stateless_reset_token=rng.randbytes(16),
                )
            ],
        )
    if mutation.id == "newcid_seq_reuse":
        seq = max(state.cids_tester.issued, default=0) + 1
        first = rng.randbytes(8)
        second = rng.randbytes(8)
        while second == first:
            second = rng.randbytes(8)
        return _with_frames(
            packet,
            [
                NewConnectionIdFrame(
                    sequence_number=seq,
                    retire_prior_to=0,
                    connection_id=first,
                    stateless_reset_token=rng.randbytes(16),
                ),
                NewConnectionIdFrame(
                    sequence_number=seq,
                    retire_prior_to=0,
                    connection_id=second,
                    stateless_reset_token=rng.randbytes(16),
                ),
            ],
        )
    if mutation.id == "retire_unknown_seq":
        seq = max(state.cids_peer.issued, default=0) + 50 + rng.randrange(0, 50)
        return _with_frames(packet, [RetireConnectionIdFrame(sequence_number=seq)])
    if mutation.id == "max_streams_over_limit":
        return _with_frames(
            packet,
            [MaxStreamsFrame(maximum=MAX_STREAM_COUNT + 1 + rng.randrange(0, 1024))],
        )
    if mutation.id == "streams_blocked_over_limit":
        return _with_frames(
            packet,
            [StreamsBlockedFrame(limit=MAX_STREAM_COUNT + 1 + rng.randrange(0, 1024))],
        )
    if mutation.id == "stream_over_limit":
        limit = state.flow.peer.max_streams_bidi
        index = limit + rng.randrange(0, 8)  # zero-based stream index past the limit
        sid = index * 4 + (0 if state.role is Role.CLIENT else 1)
        return _with_frames(
            packet,
            [StreamFrame(stream_id=sid, offset=0, data=b"over the line", fin=True)],
        )
    if mutation.id == "max_stream_data_unopened":
        if state.role is Role.CLIENT:
            sid = 1  # server-initiated bidi stream the server never opened
        else:
            opened = {s for s in state.flow.streams}
            sid = 60
            while sid in opened:
                sid += 4
        return _with_frames(
            packet, [MaxStreamDataFrame(stream_id=sid, maximum=rng.randrange(1024, 65536))]
        )
    raise MutationNotApplicable(f"unhandled mutation {mutation.id}")


def apply_params_mutation(mutation: Mutation, params, rng: random.Random):
    """Corrupt a transport parameter set in place (hello-time mutations)."""
    if mutation.phase != "params":
        raise MutationNotApplicable("not a parameter mutation")
    if mutation.id == "dup_tp":
        params.add_varint(TpId.ACK_DELAY_EXPONENT, 3)
    elif mutation.id == "invalid_tp_value":
        params.entries = [(i, v) for i, v in params.entries if i != TpId.ACK_DELAY_EXPONENT]
        params.add_varint(TpId.ACK_DELAY_EXPONENT, 21 + rng.randrange(0, 21))
    elif mutation.id == "acticoid_low":
        params.entries = [
            (i, v) for i, v in params.entries if i != TpId.ACTIVE_CONNECTION_ID_LIMIT
        ]
        params.add_varint(TpId.ACTIVE_CONNECTION_ID_LIMIT, rng.randrange(0, 2))
    elif mutation.id == "missing_icid":
        params.entries = [
            (i, v) for i, v in params.entries if i != TpId.INITIAL_SOURCE_CONNECTION_ID
        ]
    elif mutation.id == "missing_ocid":
        params.entries = [
            (i, v)
            for i, v in params.entries
            if i != TpId.ORIGINAL_DESTINATION_CONNECTION_ID
        ]
    elif mutation.id == "prefadd_zero_cid":
        pref = PreferredAddress(
            ipv4=bytes([127, 0, 0, 1]),
            port4=4443,
            ipv6=bytes(16),
            port6=4443,
            connection_id=b"",
            reset_token=rng.randbytes(16),
        )
        params.add(TpId.PREFERRED_ADDRESS, pref.encode())
    else:
        raise MutationNotApplicable(f"unhandled parameter mutation {mutation.id}")
    return params


def _build_app(state: ConnectionState, plan: GenerationPlan, rng: random.Random) -> Packet:
    frames: list[Frame] = []
    size = 0
    budget = rng.randrange(1, MAX_FRAMES_PER_PACKET + 1)
    attempts = 0
    while len(frames) < budget:
        if attempts >= plan.max_retries:
            break
        attempts += 1
        try:
            kind = sample_frame_kind(plan, rng, state)
            frame = synthesize_frame(kind, state, rng)
        except ExhaustionError:
            break
        encoded = len(encode_frame(frame))
        if size + encoded > DATAGRAM_BUDGET:
            break
        frames.append(frame)
        size += encoded
    if not frames:
        raise ExhaustionError("no frames could be generated for this packet")
    return Packet(
        packet_type=PacketType.ONE_RTT,
        dcid=state.peer_cid,
        packet_number=state.next_packet_number(PnSpace.APPLICATION),
        frames=tuple(frames),
    )
