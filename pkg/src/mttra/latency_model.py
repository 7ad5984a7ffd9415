"""Per-mode latency models for the detect / decide / execute phases.

Each calibrated reflex mode has a total recovery time that is roughly normal
around a target median. The location is split across the three phases
(15 % detect, 5 % decide, 80 % execute by default) and all of the spread is
assigned to execution.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .telemetry import CALIBRATED_MODES, ReflexMode


class PhaseKind(str, Enum):
    POINT = "point"
    TRUNCATED_NORMAL = "truncated-normal"


@dataclass(frozen=True)
class PhaseDistribution:
    kind: PhaseKind
    location: float
    scale: float = 0.0

    def __post_init__(self) -> None:
        if self.location < 0 or self.scale < 0:
            raise ValueError("location and scale must be non-negative")
        if self.kind is PhaseKind.POINT and self.scale != 0:
            raise ValueError("a point mass has no scale")

    @classmethod
    def point(cls, location: float) -> PhaseDistribution:
        return cls(PhaseKind.POINT, location)

    @classmethod
    def normal(cls, location: float, scale: float) -> PhaseDistribution:
        if scale == 0:
            return cls.point(location)
        return cls(PhaseKind.TRUNCATED_NORMAL, location, scale)

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind is PhaseKind.POINT:
            return self.location
        return truncated_normal(rng, self.location, self.scale)


def truncated_normal(rng: np.random.Generator, location: float, scale: float) -> float:
    """Normal draw conditioned on being non-negative (redrawn, never clamped)."""
    if scale == 0:
        return max(location, 0.0)
    if location < -8 * scale:
        raise ValueError("truncation region has negligible mass; refusing to resample")
    while True:
        x = float(rng.normal(location, scale))
        if x >= 0.0:
            return x


@dataclass(frozen=True)
class LatencyProfile:
    mode: ReflexMode
    detect: PhaseDistribution
    decide: PhaseDistribution
    execute: PhaseDistribution

    @classmethod
    def from_target(
        cls,
        mode: ReflexMode,
        median: float,
        std: float,
        split: tuple[float, float, float] = (0.15, 0.05, 0.80),
    ) -> LatencyProfile:
        if len(split) != 3 or any(s < 0 for s in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ValueError(f"phase split must be three non-negative fractions summing to 1, got {split}")
        detect, decide, _ = split
        loc_detect = detect * median
        loc_decide = decide * median
        # remainder rather than split[2] * median so the locations add up exactly;
        # the clamp only absorbs a one-ulp negative remainder when split[2] == 0
        loc_execute = max(0.0, median - loc_detect - loc_decide)
        return cls(
            mode,
            PhaseDistribution.point(loc_detect),
            PhaseDistribution.point(loc_decide),
            PhaseDistribution.normal(loc_execute, std),
        )

    @property
    def location(self) -> float:
        return self.detect.location + self.decide.location + self.execute.location


def sample_latency(profile: LatencyProfile, rng: np.random.Generator) -> tuple[float, float, float]:
    return (
        profile.detect.sample(rng),
        profile.decide.sample(rng),
        profile.execute.sample(rng),
    )


# median and std of the total recovery time per mode, in seconds
CALIBRATION_TARGETS: Mapping[ReflexMode, tuple[float, float]] = {
    ReflexMode.AUTO_REPLAN: (5.94, 0.70),
    ReflexMode.TOOL_RETRY: (4.46, 0.61),
    ReflexMode.ROLLBACK: (6.99, 0.43),
    ReflexMode.HUMAN_APPROVE: (12.22, 0.68),
}


def default_profiles() -> dict[ReflexMode, LatencyProfile]:
    return {mode: LatencyProfile.from_target(mode, *CALIBRATION_TARGETS[mode]) for mode in CALIBRATED_MODES}


def load_profiles(path: str | Path, base: Mapping[ReflexMode, LatencyProfile] | None = None) -> dict[ReflexMode, LatencyProfile]:
    """Read a profile override file.

    One record per line, ``#`` starts a comment::

        auto-replan  median=5.94  std=0.70  detect=0.15  decide=0.05  execute=0.80

    ``median`` and ``std`` are required; the three split fractions default to
    15/5/80. Modes not listed keep their entry from ``base`` (the defaults
    when ``base`` is None).
    """
    profiles = dict(default_profiles() if base is None else base)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            name, *pairs = line.split()
            try:
                mode = ReflexMode(name)
                values = dict(p.split("=", 1) for p in pairs)
                record = {k: float(v) for k, v in values.items()}
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            unknown = set(record) - {"median", "std", "detect", "decide", "execute"}
            if unknown or "median" not in record or "std" not in record:
                raise ValueError(f"{path}:{lineno}: need median= and std=, got {sorted(record)}")
            split = (record.get("detect", 0.15), record.get("decide", 0.05), record.get("execute", 0.80))
            try:
                profiles[mode] = LatencyProfile.from_target(mode, record["median"], record["std"], split)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return profiles
