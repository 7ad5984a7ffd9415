"""Event and episode data model plus the JSONL wire format.

Every simulation writes, and every metric reads, one JSON object per line::

    {"run_id":0,"agent_id":"agent-0","episode_id":0,"event_type":"fault_detected",
     "t":10.000000,"trigger":"drift-observed","confidence":0.410000}

Keys always appear in the order of ``FIELD_ORDER``; optional keys are
omitted rather than written as null. Real numbers are written in fixed-point
notation with at least six decimals, widened only as far as needed for
``float(text) == value`` to hold, so decoding an encoded event is lossless.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TextIO

TIME_TOL = 1e-9

FIELD_ORDER = (
    "run_id",
    "agent_id",
    "episode_id",
    "event_type",
    "t",
    "mode",
    "trigger",
    "confidence",
    "onset",
)
REQUIRED_FIELDS = ("run_id", "agent_id", "episode_id", "event_type", "t")


class TelemetryError(ValueError):
    """Base class for telemetry decoding and segmentation failures."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class TelemetryParseError(TelemetryError):
    """The line is not a JSON object."""


class TelemetrySchemaError(TelemetryError):
    """Unknown, missing or mistyped fields, or values outside a closed enumeration."""


class TelemetryInvariantError(TelemetrySchemaError):
    """Fields are well-typed but violate an event invariant (e.g. negative time)."""


class StreamError(TelemetryError):
    """Events of one agent cannot be segmented into episodes."""


class ReflexCategory(str, Enum):
    RECOVERY = "recovery"
    HUMAN_IN_THE_LOOP = "human-in-the-loop"
    GOVERNANCE = "governance"
    COORDINATION = "coordination"
    SAFETY = "safety"


class ReflexMode(str, Enum):
    # recovery
    AUTO_REPLAN = "auto-replan"
    ROLLBACK = "rollback"
    TOOL_RETRY = "tool-retry"
    FALLBACK_POLICY = "fallback-policy"
    SAFE_MODE = "safe-mode"
    # human in the loop
    HUMAN_APPROVE = "human-approve"
    HUMAN_OVERRIDE = "human-override"
    HUMAN_REVIEW = "human-review"
    ESCALATE_TO_EXPERT = "escalate-to-expert"
    # governance
    AUTO_DIAGNOSE = "auto-diagnose"
    SELF_HEAL = "self-heal"
    CONFIDENCE_GATE = "confidence-gate"
    VOTE_OR_CONSENSUS = "vote-or-consensus"
    SANDBOX_EXECUTE = "sandbox-execute"
    DRIFT_ROLLBACK = "drift-rollback"
    # coordination
    BROADCAST_UPDATE = "broadcast-update"
    NEGOTIATE_TASK = "negotiate-task"
    SYNC_STATE = "sync-state"
    LOCK_RELEASE_RESOURCE = "lock-release-resource"
    # safety
    GRACEFUL_ABORT = "graceful-abort"
    FORCE_TERMINATE = "force-terminate"
    AUDIT_SNAPSHOT = "audit-snapshot"

    @property
    def category(self) -> ReflexCategory:
        return _CATEGORY_OF[self]


_TAXONOMY = {
    ReflexCategory.RECOVERY: ("auto-replan", "rollback", "tool-retry", "fallback-policy", "safe-mode"),
    ReflexCategory.HUMAN_IN_THE_LOOP: ("human-approve", "human-override", "human-review", "escalate-to-expert"),
    ReflexCategory.GOVERNANCE: (
        "auto-diagnose",
        "self-heal",
        "confidence-gate",
        "vote-or-consensus",
        "sandbox-execute",
        "drift-rollback",
    ),
    ReflexCategory.COORDINATION: ("broadcast-update", "negotiate-task", "sync-state", "lock-release-resource"),
    ReflexCategory.SAFETY: ("graceful-abort", "force-terminate", "audit-snapshot"),
}
_CATEGORY_OF = {ReflexMode(m): cat for cat, modes in _TAXONOMY.items() for m in modes}

# Modes with latency calibration data; everything else is enumerable only.
CALIBRATED_MODES = (
    ReflexMode.AUTO_REPLAN,
    ReflexMode.TOOL_RETRY,
    ReflexMode.ROLLBACK,
    ReflexMode.HUMAN_APPROVE,
)


def modes_in(category: ReflexCategory) -> tuple[ReflexMode, ...]:
    return tuple(ReflexMode(m) for m in _TAXONOMY[category])


class TriggerKind(str, Enum):
    TOOL_ERROR = "tool-error"
    LOW_CONFIDENCE = "low-confidence"
    DRIFT_OBSERVED = "drift-observed"


class EventType(str, Enum):
    FAULT_DETECTED = "fault_detected"
    POLICY_SELECTED = "policy_selected"
    REFLEX_STARTED = "reflex_started"
    RECOVERED = "recovered"


_MODE_EVENTS = frozenset({EventType.POLICY_SELECTED, EventType.REFLEX_STARTED, EventType.RECOVERED})
_CONFIDENCE_TRIGGERS = frozenset({TriggerKind.LOW_CONFIDENCE, TriggerKind.DRIFT_OBSERVED})
_EPISODE_ORDER = (
    EventType.FAULT_DETECTED,
    EventType.POLICY_SELECTED,
    EventType.REFLEX_STARTED,
    EventType.RECOVERED,
)


@dataclass(frozen=True)
class TelemetryEvent:
    """One timestamped state transition of one agent within one run.

    ``onset`` is the optional virtual time at which drift began; when given
    on a ``fault_detected`` event it becomes the start of the episode.
    """

    run_id: int
    agent_id: str
    episode_id: int
    event_type: EventType
    t: float
    mode: ReflexMode | None = None
    trigger: TriggerKind | None = None
    confidence: float | None = None
    onset: float | None = None

    def __post_init__(self) -> None:
        if self.run_id < 0 or self.episode_id < 0:
            raise TelemetryInvariantError("run_id and episode_id must be non-negative")
        if not self.agent_id:
            raise TelemetryInvariantError("agent_id must be a non-empty string")
        if not (self.t >= 0.0) or self.t == float("inf"):
            raise TelemetryInvariantError(f"t must be a finite non-negative time, got {self.t!r}")
        if (self.mode is not None) != (self.event_type in _MODE_EVENTS):
            raise TelemetryInvariantError(f"mode must be present exactly on {sorted(e.value for e in _MODE_EVENTS)}")
        is_fault = self.event_type is EventType.FAULT_DETECTED
        if (self.trigger is not None) != is_fault:
            raise TelemetryInvariantError("trigger must be present exactly on fault_detected")
        wants_confidence = is_fault and self.trigger in _CONFIDENCE_TRIGGERS
        if (self.confidence is not None) != wants_confidence:
            raise TelemetryInvariantError(
                "confidence must be present exactly on low-confidence or drift-observed faults"
            )
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise TelemetryInvariantError(f"confidence must lie in [0, 1], got {self.confidence!r}")
        if self.onset is not None:
            if not is_fault:
                raise TelemetryInvariantError("onset is only allowed on fault_detected")
            if not (0.0 <= self.onset <= self.t):
                raise TelemetryInvariantError("onset must satisfy 0 <= onset <= t")


@dataclass(frozen=True)
class Episode:
    """One fault-to-recovery cycle of one agent.

    ``delta_t`` spans ``t_fault`` to ``t_recovered``; the three phase
    latencies add up to it (to within ``TIME_TOL``).
    """

    agent_id: str
    t_fault: float
    t_recovered: float
    delta_t: float
    t_detect: float
    t_decide: float
    t_execute: float
    mode: ReflexMode
    trigger: TriggerKind
    run_id: int = 0
    episode_id: int = 0

    def __post_init__(self) -> None:
        for name in ("t_fault", "delta_t", "t_detect", "t_decide", "t_execute"):
            if getattr(self, name) < -TIME_TOL:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if abs((self.t_recovered - self.t_fault) - self.delta_t) > TIME_TOL:
            raise ValueError("delta_t must equal t_recovered - t_fault")
        if abs(self.t_detect + self.t_decide + self.t_execute - self.delta_t) > TIME_TOL:
            raise ValueError("phase latencies must sum to delta_t")

    @classmethod
    def from_timestamps(
        cls,
        agent_id: str,
        *,
        t_fault: float,
        t_policy: float,
        t_started: float,
        t_recovered: float,
        mode: ReflexMode,
        trigger: TriggerKind,
        run_id: int = 0,
        episode_id: int = 0,
    ) -> Episode:
        delta_t = t_recovered - t_fault
        t_decide = t_started - t_policy
        t_execute = t_recovered - t_started
        return cls(
            agent_id=agent_id,
            t_fault=t_fault,
            t_recovered=t_recovered,
            delta_t=delta_t,
            t_detect=delta_t - t_decide - t_execute,
            t_decide=t_decide,
            t_execute=t_execute,
            mode=mode,
            trigger=trigger,
            run_id=run_id,
            episode_id=episode_id,
        )


# --------------------------------------------------------------------------
# wire format


def format_real(value: float, min_decimals: int = 6) -> str:
    """Fixed-point text for ``value`` with the fewest decimals >= ``min_decimals``
    that still parses back to the identical float."""
    for decimals in range(min_decimals, 40):
        text = f"{value:.{decimals}f}"
        if float(text) == value:
            return text
    return repr(float(value))


def encode_event(event: TelemetryEvent) -> str:
    parts = [
        f'"run_id":{event.run_id}',
        f'"agent_id":{json.dumps(event.agent_id, ensure_ascii=False)}',
        f'"episode_id":{event.episode_id}',
        f'"event_type":"{event.event_type.value}"',
        f'"t":{format_real(event.t)}',
    ]
    if event.mode is not None:
        parts.append(f'"mode":"{event.mode.value}"')
    if event.trigger is not None:
        parts.append(f'"trigger":"{event.trigger.value}"')
    if event.confidence is not None:
        parts.append(f'"confidence":{format_real(event.confidence)}')
    if event.onset is not None:
        parts.append(f'"onset":{format_real(event.onset)}')
    return "{" + ",".join(parts) + "}"


def _require_int(obj: dict, key: str, lineno: int | None) -> int:
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise TelemetrySchemaError(f"{key} must be an integer", lineno)
    return value


def _optional_real(obj: dict, key: str, lineno: int | None) -> float | None:
    if key not in obj:
        return None
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TelemetrySchemaError(f"{key} must be a number", lineno)
    return float(value)


def _enum(kind, obj: dict, key: str, lineno: int | None):
    if key not in obj:
        return None
    try:
        return kind(obj[key])
    except ValueError:
        raise TelemetrySchemaError(f"unknown {key} {obj[key]!r}", lineno) from None


def decode_event(line: str, lineno: int | None = None) -> TelemetryEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TelemetryParseError(f"malformed JSON ({exc.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise TelemetrySchemaError("expected a JSON object", lineno)

    unknown = set(obj) - set(FIELD_ORDER)
    if unknown:
        raise TelemetrySchemaError(f"unknown field(s) {sorted(unknown)}", lineno)
    missing = [k for k in REQUIRED_FIELDS if k not in obj]
    if missing:
        raise TelemetrySchemaError(f"missing required field(s) {missing}", lineno)
    if not isinstance(obj["agent_id"], str):
        raise TelemetrySchemaError("agent_id must be a string", lineno)

    try:
        return TelemetryEvent(
            run_id=_require_int(obj, "run_id", lineno),
            agent_id=obj["agent_id"],
            episode_id=_require_int(obj, "episode_id", lineno),
            event_type=_enum(EventType, obj, "event_type", lineno),
            t=_optional_real(obj, "t", lineno),
            mode=_enum(ReflexMode, obj, "mode", lineno),
            trigger=_enum(TriggerKind, obj, "trigger", lineno),
            confidence=_optional_real(obj, "confidence", lineno),
            onset=_optional_real(obj, "onset", lineno),
        )
    except TelemetryInvariantError as exc:
        if exc.lineno is None and lineno is not None:
            raise TelemetryInvariantError(str(exc), lineno) from None
        raise


def write_events(events: Iterable[TelemetryEvent], stream: TextIO) -> int:
    n = 0
    for event in events:
        stream.write(encode_event(event))
        stream.write("\n")
        n += 1
    return n


def iter_events(stream: Iterable[str]) -> Iterator[TelemetryEvent]:
    """Decode a JSONL stream; blank lines are skipped, line numbers start at 1."""
    for lineno, line in enumerate(stream, start=1):
        if line.strip():
            yield decode_event(line, lineno)


def read_events(path: str | Path) -> list[TelemetryEvent]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_events(fh))


def save_events(events: Iterable[TelemetryEvent], path: str | Path) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        return write_events(events, fh)


# --------------------------------------------------------------------------
# segmentation


@dataclass
class Segmentation:
    episodes: list[Episode] = field(default_factory=list)
    incomplete: int = 0


def episodes_from_events(events: Iterable[TelemetryEvent]) -> Segmentation:
    """Cut an event stream into completed episodes.

    Streams are keyed by ``(run_id, agent_id)``; streams of different agents
    may interleave freely, but within one stream an episode's four events
    must arrive in order and without another episode in between. Episodes
    still open at the end of the input are counted as incomplete.
    """
    open_: dict[tuple[int, str], list[TelemetryEvent]] = {}
    last_t: dict[tuple[int, str], float] = {}
    result = Segmentation()

    for ev in events:
        key = (ev.run_id, ev.agent_id)
        if key in last_t and ev.t < last_t[key] - TIME_TOL:
            raise StreamError(f"time went backwards in stream {key}: {ev.t} < {last_t[key]}")
        last_t[key] = max(ev.t, last_t.get(key, ev.t))

        pending = open_.get(key)
        if ev.event_type is EventType.FAULT_DETECTED:
            if pending is not None:
                raise StreamError(
                    f"episode {ev.episode_id} of {key} starts while episode {pending[0].episode_id} is open"
                )
            open_[key] = [ev]
            continue
        if pending is None:
            raise StreamError(f"{ev.event_type.value} for {key} without a preceding fault_detected")
        if ev.episode_id != pending[0].episode_id:
            raise StreamError(
                f"interleaved episode ids in {key}: got {ev.episode_id}, open {pending[0].episode_id}"
            )
        expected = _EPISODE_ORDER[len(pending)]
        if ev.event_type is not expected:
            raise StreamError(f"expected {expected.value} in {key}, got {ev.event_type.value}")
        if ev.mode is not pending[-1].mode and len(pending) > 1:
            raise StreamError(f"reflex mode changed within episode {ev.episode_id} of {key}")
        pending.append(ev)

        if ev.event_type is EventType.RECOVERED:
            fault, policy, started, recovered = pending
            start = fault.onset if fault.onset is not None else fault.t
            result.episodes.append(
                Episode.from_timestamps(
                    ev.agent_id,
                    t_fault=start,
                    t_policy=policy.t,
                    t_started=started.t,
                    t_recovered=recovered.t,
                    mode=recovered.mode,
                    trigger=fault.trigger,
                    run_id=ev.run_id,
                    episode_id=ev.episode_id,
                )
            )
            del open_[key]

    result.incomplete = len(open_)
    return result
