"""The data-defined test suite: 23 server-facing and 14 client-facing specs.

Test names are the historical row tokens (including the spellings "unkown"
and "no_ocid"); corrected spellings are accepted as aliases. Specs whose
behaviour is reconstructed from the name plus draft-29 semantics, rather than
described in prose, carry ``reconstructed=True``.

The embedded catalog can be overridden or extended with a user-supplied file
(see ``load_catalog_file``), the same pipe-separated structured-text format as
the requirement registry.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .engine import ExpectedOutcome, OutcomeKind, Role
from .gen import GenerationPlan, MUTATIONS
from .requirements import default_registry
from .wire import FrameKind, PINNED_VERSION, TransportErrorCode

Addr = tuple[str, int]

# Fixed input parameters every test starts from.
DEFAULT_CLIENT_ADDR: Addr = ("127.0.0.1", 4987)
DEFAULT_SERVER_ADDR: Addr = ("127.0.0.1", 4443)

# A reserved-for-greasing parameter id (31 * N + 27): must be ignored.
UNKNOWN_TP_ID = 0x1F3A
UNKNOWN_TP_VALUE = b"\xde\xad\xbe\xef"

_E = TransportErrorCode


@dataclass(frozen=True)
class FixedParams:
    client_addr: Addr = DEFAULT_CLIENT_ADDR
    server_addr: Addr = DEFAULT_SERVER_ADDR
    version: int = PINNED_VERSION
    extra_tp_entries: tuple[tuple[int, bytes], ...] = ()


@dataclass(frozen=True)
class TestSpec:
    name: str
    role_under_test: Role
    plan: GenerationPlan
    expected: ExpectedOutcome
    goal: str = "deliver"  # deliver | serve | close | reaction
    goal_requests: int = 10
    migration_allowed: bool = False
    fixed: FixedParams = field(default_factory=FixedParams)
    reconstructed: bool = True

    @property
    def tester_role(self) -> Role:
        return self.role_under_test.opposite

    def expected_tester_violations(self) -> frozenset:
        """Requirement ids the tester will deliberately violate."""
        targets = {MUTATIONS[m].target_requirement for m in self.plan.mutations}
        if FrameKind.UNKNOWN in self.plan.allowed_kinds:
            targets.add("FRAME_UNKNOWN")
        return frozenset(targets)

    @property
    def is_adversarial(self) -> bool:
        return self.expected.kind in (
            OutcomeKind.TRANSPORT_ERROR,
            OutcomeKind.HANDSHAKE_FAILURE_OR_ERROR,
        )


_SERVER_BASE_KINDS = frozenset(
    {FrameKind.STREAM, FrameKind.ACK, FrameKind.PATH_RESPONSE, FrameKind.CRYPTO}
)
_CLIENT_BASE_KINDS = frozenset(
    {FrameKind.STREAM, FrameKind.ACK, FrameKind.HANDSHAKE_DONE, FrameKind.CRYPTO}
)


def _plan(kinds: frozenset, weights=None, mutations: tuple = ()) -> GenerationPlan:
    return GenerationPlan(allowed_kinds=kinds, weights=weights or {}, mutations=mutations)


def _server(name: str, **kwargs) -> TestSpec:
    return TestSpec(name=name, role_under_test=Role.SERVER, **kwargs)


def _client(name: str, **kwargs) -> TestSpec:
    return TestSpec(name=name, role_under_test=Role.CLIENT, **kwargs)


def _adversarial_server(name: str, mutation: str, expected: ExpectedOutcome) -> TestSpec:
    return _server(
        name,
        plan=_plan(_SERVER_BASE_KINDS, weights={FrameKind.PATH_RESPONSE: 5}, mutations=(mutation,)),
        expected=expected,
        goal="reaction",
    )


def _adversarial_client(
    name: str, mutation: str, expected: ExpectedOutcome, kinds: frozenset = _CLIENT_BASE_KINDS
) -> TestSpec:
    return _client(
        name, plan=_plan(kinds, mutations=(mutation,)), expected=expected, goal="reaction"
    )


def _build_server_specs() -> list[TestSpec]:
    base_weights = {FrameKind.PATH_RESPONSE: 5}
    return [
        _server(
            "stream",
            plan=_plan(_SERVER_BASE_KINDS, weights=base_weights),
            expected=ExpectedOutcome.clean_close(),
            migration_allowed=True,
            reconstructed=False,
        ),
        _server(
            "max",
            plan=_plan(
                _SERVER_BASE_KINDS
                | {FrameKind.MAX_DATA, FrameKind.MAX_STREAM_DATA, FrameKind.MAX_STREAMS},
                weights=base_weights,
            ),
            expected=ExpectedOutcome.clean_close(),
            migration_allowed=True,
        ),
        _server(
            "reset_stream",
            plan=_plan(_SERVER_BASE_KINDS | {FrameKind.RESET_STREAM}, weights=base_weights),
            expected=ExpectedOutcome.clean_close(),
        ),
        _server(
            "connection_close",
            plan=_plan(_SERVER_BASE_KINDS, weights=base_weights),
            expected=ExpectedOutcome.clean_close(),
            goal="close",
        ),
        _server(
            "stop_sending",
            plan=_plan(_SERVER_BASE_KINDS | {FrameKind.STOP_SENDING}, weights=base_weights),
            expected=ExpectedOutcome.clean_close(),
        ),
        _server(
            "accept_maxdata",
            plan=_plan(_SERVER_BASE_KINDS | {FrameKind.MAX_DATA}, weights=base_weights),
            expected=ExpectedOutcome.clean_close(),
            migration_allowed=True,
        ),
        _server(
            "unknown",
            plan=_plan(_SERVER_BASE_KINDS | {FrameKind.UNKNOWN}, weights=base_weights),
            expected=ExpectedOutcome.transport_error(_E.FRAME_ENCODING_ERROR),
            goal="reaction",
            reconstructed=False,
        ),
        _server(
            "unkown_tp",
            plan=_plan(_SERVER_BASE_KINDS, weights=base_weights),
            expected=ExpectedOutcome.ignored(),
            fixed=FixedParams(extra_tp_entries=((UNKNOWN_TP_ID, UNKNOWN_TP_VALUE),)),
            reconstructed=False,
        ),
        _adversarial_server(
            "double_tp_err", "dup_tp", ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR)
        ),
        _adversarial_server(
            "tp_err",
            "invalid_tp_value",
            ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR),
        ),
        _adversarial_server(
            "tp_acticoid_err",
            "acticoid_low",
            ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR),
        ),
        _adversarial_server(
            "no_icid_err",
            "missing_icid",
            ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR),
        ),
        replace(
            _adversarial_server(
                "token_err",
                "nonzero_initial_token",
                ExpectedOutcome.handshake_failure_or_error(
                    _E.INVALID_TOKEN, _E.PROTOCOL_VIOLATION
                ),
            ),
            reconstructed=False,
        ),
        _adversarial_server(
            "new_token_err",
            "inject_new_token",
            ExpectedOutcome.transport_error(_E.PROTOCOL_VIOLATION),
        ),
        _adversarial_server(
            "handshake_done_err",
            "inject_handshake_done",
            ExpectedOutcome.transport_error(_E.PROTOCOL_VIOLATION),
        ),
        _adversarial_server(
            "newcid_err",
            "newcid_seq_reuse",
            ExpectedOutcome.transport_error(_E.PROTOCOL_VIOLATION, _E.FRAME_ENCODING_ERROR),
        ),
        _adversarial_server(
            "max_limit_err",
            "max_streams_over_limit",
            ExpectedOutcome.transport_error(_E.FRAME_ENCODING_ERROR, _E.STREAM_LIMIT_ERROR),
        ),
        _adversarial_server(
            "blocked_err",
            "streams_blocked_over_limit",
            ExpectedOutcome.transport_error(_E.STREAM_LIMIT_ERROR, _E.FRAME_ENCODING_ERROR),
        ),
        _adversarial_server(
            "retirecid_err",
            "retire_unknown_seq",
            ExpectedOutcome.transport_error(_E.PROTOCOL_VIOLATION),
        ),
        _adversarial_server(
            "stream_limit_err",
            "stream_over_limit",
            ExpectedOutcome.transport_error(_E.STREAM_LIMIT_ERROR),
        ),
        _adversarial_server(
            "newcid_length_err",
            "newcid_zero_length",
            ExpectedOutcome.transport_error(_E.FRAME_ENCODING_ERROR, _E.PROTOCOL_VIOLATION),
        ),
        _adversarial_server(
            "newcid_rtp_err",
            "newcid_retire_greater",
            ExpectedOutcome.transport_error(_E.FRAME_ENCODING_ERROR),
        ),
        _adversarial_server(
            "max_err",
            "max_stream_data_unopened",
            ExpectedOutcome.transport_error(_E.STREAM_STATE_ERROR),
        ),
    ]


def _build_client_specs() -> list[TestSpec]:
    return [
        _client(
            "stream",
            plan=_plan(_CLIENT_BASE_KINDS),
            expected=ExpectedOutcome.clean_close(),
            goal="serve",
        ),
        _client(
            "max",
            plan=_plan(
                _CLIENT_BASE_KINDS
                | {FrameKind.MAX_DATA, FrameKind.MAX_STREAM_DATA, FrameKind.MAX_STREAMS}
            ),
            expected=ExpectedOutcome.clean_close(),
            goal="serve",
        ),
        _client(
            "accept_maxdata",
            plan=_plan(_CLIENT_BASE_KINDS | {FrameKind.MAX_DATA}),
            expected=ExpectedOutcome.clean_close(),
            goal="serve",
        ),
        _client(
            "unkown",
            plan=_plan(_CLIENT_BASE_KINDS | {FrameKind.UNKNOWN}),
            expected=ExpectedOutcome.transport_error(_E.FRAME_ENCODING_ERROR),
            goal="reaction",
        ),
        _client(
            "tp_unkown",
            plan=_plan(_CLIENT_BASE_KINDS),
            expected=ExpectedOutcome.ignored(),
            goal="serve",
            fixed=FixedParams(extra_tp_entries=((UNKNOWN_TP_ID, UNKNOWN_TP_VALUE),)),
        ),
        _adversarial_client(
            "double_tp_error",
            "dup_tp",
            ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR),
        ),
        _adversarial_client(
            "tp_error",
            "invalid_tp_value",
            ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR),
        ),
        _adversarial_client(
            "tp_acticoid_error",
            "acticoid_low",
            ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR),
        ),
        _adversarial_client(
            "no_ocid",
            "missing_ocid",
            ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR),
        ),
        replace(
            _adversarial_client(
                "tp_prefadd_error",
                "prefadd_zero_cid",
                ExpectedOutcome.transport_error(_E.TRANSPORT_PARAMETER_ERROR),
            ),
            reconstructed=False,
        ),
        _adversarial_client(
            "blocked_error",
            "streams_blocked_over_limit",
            ExpectedOutcome.transport_error(_E.STREAM_LIMIT_ERROR, _E.FRAME_ENCODING_ERROR),
        ),
        _adversarial_client(
            "retirecoid_error",
            "retire_unknown_seq",
            ExpectedOutcome.transport_error(_E.PROTOCOL_VIOLATION),
        ),
        replace(
            _adversarial_client(
                "new_token_error",
                "zero_length_new_token",
                ExpectedOutcome.transport_error(_E.PROTOCOL_VIOLATION, _E.FRAME_ENCODING_ERROR),
                kinds=_CLIENT_BASE_KINDS | {FrameKind.NEW_TOKEN},
            ),
            reconstructed=False,
        ),
        _adversarial_client(
            "limit_max_error",
            "max_streams_over_limit",
            ExpectedOutcome.transport_error(_E.STREAM_LIMIT_ERROR, _E.FRAME_ENCODING_ERROR),
        ),
    ]


_ALIASES = {
    (Role.SERVER, "unknown_tp"): "unkown_tp",
    (Role.CLIENT, "unknown"): "unkown",
    (Role.CLIENT, "tp_unknown"): "tp_unkown",
    (Role.CLIENT, "no_odcid"): "no_ocid",
    (Role.CLIENT, "retirecid_error"): "retirecoid_error",
}

EXPECTED_SERVER_TEST_COUNT = 23
EXPECTED_CLIENT_TEST_COUNT = 14


class Catalog:
    """Immutable after load; safe for concurrent readers."""

    def __init__(self, specs: list[TestSpec]):
        self._specs: dict[tuple[Role, str], TestSpec] = {}
        for spec in specs:
            key = (spec.role_under_test, spec.name)
            if key in self._specs:
                raise ValueError(f"duplicate test {spec.name} for role {spec.role_under_test}")
            self._specs[key] = spec

    def list_tests(self, role: Role | str) -> list[str]:
        role = _coerce_role(role)
        return [name for (r, name) in self._specs if r is role]

    def get_test(self, name: str, role: Role | str) -> TestSpec:
        role = _coerce_role(role)
        name = _ALIASES.get((role, name), name)
        try:
            return self._specs[(role, name)]
        except KeyError:
            raise KeyError(f"no {role.value} test named {name!r}") from None

    def all_specs(self) -> list[TestSpec]:
        return list(self._specs.values())

    def merged_with(self, overrides: list[TestSpec]) -> "Catalog":
        merged = dict(self._specs)
        for spec in overrides:
            merged[(spec.role_under_test, spec.name)] = spec
        return Catalog(list(merged.values()))


def _coerce_role(role: Role | str) -> Role:
    if isinstance(role, Role):
        return role
    try:
        return Role(role)
    except ValueError:
        raise ValueError(f"unknown role {role!r}; expected 'client' or 'server'") from None


def default_catalog() -> Catalog:
    return Catalog(_build_server_specs() + _build_client_specs())


def list_tests(role: Role | str) -> list[str]:
    return default_catalog().list_tests(role)


def get_test(name: str, role: Role | str) -> TestSpec:
    return default_catalog().get_test(name, role)


def validate_catalog(catalog: Catalog | None = None) -> list[str]:
    """Returns defects (empty list = release-ready); never raises."""
    catalog = catalog or default_catalog()
    registry = default_registry()
    known_codes = {int(c) for c in TransportErrorCode}
    defects: list[str] = []

    for spec in catalog.all_specs():
        where = f"{spec.role_under_test.value}/{spec.name}"
        for mutation_id in spec.plan.mutations:
            if mutation_id not in MUTATIONS:
                defects.append(f"{where}: unknown mutation {mutation_id!r}")
            elif MUTATIONS[mutation_id].target_requirement not in registry:
                defects.append(
                    f"{where}: mutation {mutation_id!r} targets unregistered requirement "
                    f"{MUTATIONS[mutation_id].target_requirement!r}"
                )
        for code in spec.expected.codes:
            if int(code) not in known_codes:
                defects.append(f"{where}: expected error code 0x{int(code):x} is not registered")
        for kind in spec.plan.weights:
            if kind not in spec.plan.allowed_kinds:
                defects.append(f"{where}: weight on disallowed kind {kind}")
        if not any(spec.plan.weight(k) > 0 for k in spec.plan.allowed_kinds):
            defects.append(f"{where}: all frame weights are zero")
        if spec.is_adversarial and not spec.expected.codes:
            defects.append(f"{where}: adversarial spec without acceptable error codes")
        if spec.role_under_test is Role.CLIENT and spec.migration_allowed:
            defects.append(f"{where}: client-facing specs must not enable migration")
        if spec.role_under_test is Role.SERVER:
            illegal = spec.plan.allowed_kinds & {FrameKind.NEW_TOKEN, FrameKind.HANDSHAKE_DONE}
            if illegal:
                defects.append(f"{where}: client-role tester must not generate {illegal}")
    return defects


# -- user-supplied catalog files ----------------------------------------------


def parse_expected(token: str) -> ExpectedOutcome:
    if token == "clean_close":
        return ExpectedOutcome.clean_close()
    if token == "ignored":
        return ExpectedOutcome.ignored()
    for prefix, factory in (
        ("error:", ExpectedOutcome.transport_error),
        ("handshake_or_error:", ExpectedOutcome.handshake_failure_or_error),
    ):
        if token.startswith(prefix):
            names = token[len(prefix) :].split(",")
            codes = [TransportErrorCode[n.strip()] for n in names]
            return factory(*codes)
    raise ValueError(f"bad expected outcome {token!r}")


def parse_catalog_line(line: str) -> TestSpec:
    parts = [p.strip() for p in line.split("|")]
    if len(parts) != 9:
        raise ValueError(f"expected 9 fields, got {len(parts)}")
    name, role, kinds_s, weights_s, mutations_s, expected_s, goal, migration, requests = parts
    kinds = frozenset(FrameKind[k.strip()] for k in kinds_s.split(",") if k.strip())
    weights = {}
    if weights_s not in ("", "-"):
        for item in weights_s.split(","):
            kind_name, value = item.split(":")
            weights[FrameKind[kind_name.strip()]] = float(value)
    mutations = tuple(
        m.strip() for m in mutations_s.split(",") if m.strip() and mutations_s != "-"
    )
    return TestSpec(
        name=name,
        role_under_test=_coerce_role(role),
        plan=GenerationPlan(allowed_kinds=kinds, weights=weights, mutations=mutations),
        expected=parse_expected(expected_s),
        goal=goal,
        migration_allowed=migration in ("yes", "true", "1"),
        goal_requests=int(requests),
    )


def load_catalog_file(path: str | Path) -> list[TestSpec]:
    specs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            specs.append(parse_catalog_line(line))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return specs


def active_catalog() -> Catalog:
    """Embedded catalog, merged with QUICHECK_CATALOG overrides when set."""
    catalog = default_catalog()
    override = os.environ.get("QUICHECK_CATALOG")
    if override:
        catalog = catalog.merged_with(load_catalog_file(override))
    return catalog
