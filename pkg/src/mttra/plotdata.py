"""Tabular series for external plotting: histogram, per-mode box summaries,
rolling recovery time and per-mode phase means."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from collections.abc import Sequence

import numpy as np

from .metrics import mode_breakdown
from .telemetry import Episode, ReflexMode


def ordered(episodes: Sequence[Episode]) -> list[Episode]:
    return sorted(episodes, key=lambda e: (e.run_id, e.agent_id, e.t_fault))


def histogram(episodes: Sequence[Episode], bins: int = 20) -> list[tuple[float, float, int]]:
    values = np.array([e.delta_t for e in episodes])
    counts, edges = np.histogram(values, bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]


def box_summaries(episodes: Sequence[Episode]) -> list[dict]:
    by_mode: dict[ReflexMode, list[float]] = defaultdict(list)
    for e in episodes:
        by_mode[e.mode].append(e.delta_t)
    rows = []
    for m in mode_breakdown(episodes):
        x = np.asarray(by_mode[m.mode])
        q1, med, q3 = np.percentile(x, [25, 50, 75])
        rows.append(
            dict(mode=m.mode.value, min=float(x.min()), q1=float(q1), median=float(med), q3=float(q3),
                 max=float(x.max()), count=len(x))
        )
    return rows


def rolling(episodes: Sequence[Episode], window: int = 20) -> list[dict]:
    """Trailing-window mean and median of recovery time; ``len - window + 1`` rows."""
    if window < 1:
        raise ValueError("window must be at least 1")
    eps = ordered(episodes)
    d = np.array([e.delta_t for e in eps])
    rows = []
    for end in range(window, len(d) + 1):
        chunk = d[end - window : end]
        rows.append(
            dict(index=end - 1, run_id=eps[end - 1].run_id, rolling_mean=float(chunk.mean()),
                 rolling_median=float(np.median(chunk)))
        )
    return rows


def phase_means(episodes: Sequence[Episode]) -> list[dict]:
    return [
        dict(mode=m.mode.value, count=m.count, mean_detect=m.mean_detect, mean_decide=m.mean_decide,
             mean_execute=m.mean_execute)
        for m in mode_breakdown(episodes)
    ]


def to_csv(rows: Sequence[dict] | Sequence[tuple], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        values = [r[h] for h in header] if isinstance(r, dict) else list(r)
        w.writerow([repr(v) if isinstance(v, float) else v for v in values])
    return buf.getvalue()
