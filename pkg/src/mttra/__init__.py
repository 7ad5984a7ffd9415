"""Cognitive-reliability simulation and metrics for multi-agent workflows."""

from .metrics import build_report, k_alpha, medttr, mtbf_agent, mttr_mean, nrr, nrr_alpha, steady_state_uptime
from .reflex_engine import run_experiment
from .telemetry import (
    Episode,
    EventType,
    ReflexCategory,
    ReflexMode,
    TelemetryEvent,
    TriggerKind,
    decode_event,
    encode_event,
    episodes_from_events,
)

__version__ = "0.1.0"

__all__ = [
    "Episode",
    "EventType",
    "ReflexCategory",
    "ReflexMode",
    "TelemetryEvent",
    "TriggerKind",
    "build_report",
    "decode_event",
    "encode_event",
    "episodes_from_events",
    "k_alpha",
    "medttr",
    "mtbf_agent",
    "mttr_mean",
    "nrr",
    "nrr_alpha",
    "run_experiment",
    "steady_state_uptime",
]
