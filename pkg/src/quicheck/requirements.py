"""Requirement registry and verdicts.

The registry is data, not code: a pipe-separated text file shipped with the
package (``data/requirements.txt``) mapping each requirement id to a draft-29
clause, a severity, and a description. Verdicts always cite a registered id.
"""

from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path


class Severity(Enum):
    ERROR = "error"
    ADVISORY = "advisory"


class Direction(Enum):
    FROM_TESTER = "from_tester"
    FROM_PEER = "from_peer"


@dataclass(frozen=True)
class Requirement:
    id: str
    clause: str
    severity: Severity
    description: str


@dataclass(frozen=True)
class Verdict:
    requirement: str
    status: str  # "pass" | "violation"
    direction: Direction
    detail: str = ""
    event_index: int = -1

    @property
    def is_violation(self) -> bool:
        return self.status == "violation"

    def to_dict(self) -> dict:
        return {
            "requirement": self.requirement,
            "status": self.status,
            "direction": self.direction.value,
            "detail": self.detail,
            "event_index": self.event_index,
        }


class RequirementRegistry:
    def __init__(self, requirements: list[Requirement]):
        self._by_id: dict[str, Requirement] = {}
        for req in requirements:
            if req.id in self._by_id:
                raise ValueError(f"duplicate requirement id {req.id}")
            self._by_id[req.id] = req

    def __contains__(self, requirement_id: str) -> bool:
        return requirement_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def get(self, requirement_id: str) -> Requirement:
        return self._by_id[requirement_id]

    def ids(self) -> list[str]:
        return list(self._by_id)

    def severity(self, requirement_id: str) -> Severity:
        return self._by_id[requirement_id].severity

    def is_advisory(self, requirement_id: str) -> bool:
        return self._by_id[requirement_id].severity is Severity.ADVISORY


def parse_registry(text: str) -> RequirementRegistry:
    requirements = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 4:
            raise ValueError(f"registry line {lineno}: expected 4 fields, got {len(parts)}")
        req_id, clause, severity, description = parts
        requirements.append(
            Requirement(id=req_id, clause=clause, severity=Severity(severity), description=description)
        )
    return RequirementRegistry(requirements)


def load_registry(path: str | Path | None = None) -> RequirementRegistry:
    """Load the shipped registry, or a user-supplied file in the same format."""
    if path is not None:
        return parse_registry(Path(path).read_text())
    text = resources.files("quicheck").joinpath("data/requirements.txt").read_text()
    return parse_registry(text)


_DEFAULT: RequirementRegistry | None = None


def default_registry() -> RequirementRegistry:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_registry()
    return _DEFAULT
