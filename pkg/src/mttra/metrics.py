"""Recovery and stability metrics for agents and for the whole system.

Agent level: mean and median recovery time, mean time between faults, the
normalized recovery ratio. System level: macro averages over agents, the
pooled median recovery time, and the confidence-aware ratio built on the
Cantelli factor ``sqrt((1 - alpha) / alpha)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field

from .telemetry import CALIBRATED_MODES, TIME_TOL, Episode, ReflexMode


class UndefinedMetricError(ValueError):
    """A metric was requested on an empty episode set or with a zero denominator."""


class MetricDomainError(ValueError):
    """A parameter lies outside the domain of the formula."""


def _durations(episodes: Iterable[Episode | float]) -> list[float]:
    return [e.delta_t if isinstance(e, Episode) else float(e) for e in episodes]


def _nonempty(values: list[float], what: str) -> list[float]:
    if not values:
        raise UndefinedMetricError(f"{what} is undefined for zero episodes")
    return values


def mttr_mean(episodes: Iterable[Episode | float]) -> float:
    d = _nonempty(_durations(episodes), "MTTR-A")
    return math.fsum(d) / len(d)


def medttr(episodes: Iterable[Episode | float]) -> float:
    return float(statistics.median(_nonempty(_durations(episodes), "MedTTR-A")))


def std_recovery(episodes: Iterable[Episode | float]) -> float:
    """Sample standard deviation (n - 1); a single episode has zero spread."""
    d = _nonempty(_durations(episodes), "recovery spread")
    return statistics.stdev(d) if len(d) > 1 else 0.0


def p90(episodes: Iterable[Episode | float]) -> float:
    return percentile_nearest_rank(_nonempty(_durations(episodes), "P90"), 90.0)


def percentile_nearest_rank(values: Sequence[float], q: float) -> float:
    if not values:
        raise UndefinedMetricError("percentile of an empty sample")
    if not 0 < q <= 100:
        raise MetricDomainError("percentile must lie in (0, 100]")
    ordered = sorted(values)
    rank = math.ceil(q / 100.0 * len(ordered))
    return ordered[max(rank, 1) - 1]


def uptime_intervals(episodes: Iterable[Episode], run_start: float = 0.0) -> list[float]:
    """Stable stretches preceding each fault.

    Episodes are grouped by run; inside a run the first interval is measured
    from ``run_start`` and each later one from the previous recovery.
    """
    by_run: dict[int, list[Episode]] = defaultdict(list)
    for e in episodes:
        by_run[e.run_id].append(e)
    intervals = []
    for run_id in sorted(by_run):
        previous = run_start
        for e in sorted(by_run[run_id], key=lambda e: (e.t_fault, e.t_recovered)):
            gap = e.t_fault - previous
            if gap < -TIME_TOL:
                raise ValueError(f"overlapping episodes in run {run_id} of {e.agent_id}")
            intervals.append(max(gap, 0.0))
            previous = e.t_recovered
    return intervals


def mtbf_agent(episodes: Iterable[Episode], run_start: float = 0.0) -> float:
    intervals = _nonempty(uptime_intervals(episodes, run_start), "MTBF")
    return math.fsum(intervals) / len(intervals)


def nrr(mttr_sys: float, mtbf_sys: float) -> float:
    if mtbf_sys == 0:
        raise UndefinedMetricError("NRR is undefined when MTBF is zero")
    return 1.0 - mttr_sys / mtbf_sys


def k_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise MetricDomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return math.sqrt((1.0 - alpha) / alpha)


def nrr_alpha(mu: float, sigma: float, lambda_sys: float, alpha: float) -> float:
    if sigma < 0:
        raise MetricDomainError("sigma must be non-negative")
    if lambda_sys <= 0:
        raise MetricDomainError("lambda_sys must be positive")
    return 1.0 - lambda_sys * (mu + k_alpha(alpha) * sigma)


def steady_state_uptime(lambda_sys: float, mu_sys: float) -> float:
    if lambda_sys <= 0 or mu_sys < 0:
        raise MetricDomainError("need lambda_sys > 0 and mu_sys >= 0")
    return 1.0 / (1.0 + lambda_sys * mu_sys)


@dataclass(frozen=True)
class ConfidenceParams:
    alpha: float
    k_alpha: float
    r_alpha: float

    @classmethod
    def of(cls, alpha: float, mu: float, sigma: float) -> ConfidenceParams:
        k = k_alpha(alpha)
        return cls(alpha, k, mu + k * sigma)


@dataclass(frozen=True)
class AgentMetrics:
    agent_id: str
    m_i: int
    mttr_mean: float
    medttr: float
    mtbf: float
    nrr: float
    std_recovery: float
    p90: float


@dataclass(frozen=True)
class SystemMetrics:
    """System-level figures.

    ``nrr_sys`` uses the mean-based MTTR; ``nrr_median`` is the same ratio
    on the pooled median recovery time. ``sigma`` is the pooled sample
    standard deviation of recovery times.
    """

    n_agents: int
    n_episodes: int
    mttr_sys: float
    medttr_sys: float
    mtbf_sys: float
    nrr_sys: float
    nrr_median: float
    lambda_sys: float
    mu_sys: float
    sigma: float
    p90_sys: float
    alpha: float
    k_alpha: float
    r_alpha: float
    nrr_alpha: float
    uptime: float
    aggregation: str = "macro"


@dataclass(frozen=True)
class ModeMetrics:
    mode: ReflexMode
    count: int
    medttr: float
    std: float
    p90: float
    mean: float
    mean_detect: float
    mean_decide: float
    mean_execute: float


@dataclass(frozen=True)
class ReliabilityReport:
    agents: tuple[AgentMetrics, ...]
    system: SystemMetrics
    modes: tuple[ModeMetrics, ...]
    excluded_agents: int = 0
    incomplete_episodes: int = 0
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "agents": [asdict(a) for a in self.agents],
            "system": asdict(self.system),
            "modes": [dict(asdict(m), mode=m.mode.value) for m in self.modes],
            "excluded_agents": self.excluded_agents,
            "incomplete_episodes": self.incomplete_episodes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        return report_to_csv(self)


def agent_metrics(agent_id: str, episodes: Sequence[Episode], run_start: float = 0.0) -> AgentMetrics:
    mean = mttr_mean(episodes)
    between = mtbf_agent(episodes, run_start)
    return AgentMetrics(
        agent_id=agent_id,
        m_i=len(episodes),
        mttr_mean=mean,
        medttr=medttr(episodes),
        mtbf=between,
        nrr=nrr(mean, between),
        std_recovery=std_recovery(episodes),
        p90=p90(episodes),
    )


def mode_breakdown(episodes: Iterable[Episode]) -> tuple[ModeMetrics, ...]:
    by_mode: dict[ReflexMode, list[Episode]] = defaultdict(list)
    for e in episodes:
        by_mode[e.mode].append(e)
    order = [m for m in CALIBRATED_MODES if m in by_mode] + sorted(
        (m for m in by_mode if m not in CALIBRATED_MODES), key=lambda m: m.value
    )
    rows = []
    for mode in order:
        eps = by_mode[mode]
        n = len(eps)
        rows.append(
            ModeMetrics(
                mode=mode,
                count=n,
                medttr=medttr(eps),
                std=std_recovery(eps),
                p90=p90(eps),
                mean=mttr_mean(eps),
                mean_detect=math.fsum(e.t_detect for e in eps) / n,
                mean_decide=math.fsum(e.t_decide for e in eps) / n,
                mean_execute=math.fsum(e.t_execute for e in eps) / n,
            )
        )
    return tuple(rows)


def build_report(
    episodes: Iterable[Episode] | Mapping[str, Sequence[Episode]],
    run_start: float = 0.0,
    alpha: float = 0.9,
    aggregation: str = "macro",
    incomplete: int = 0,
    agents: Iterable[str] = (),
) -> ReliabilityReport:
    """Per-agent and system metrics from completed episodes.

    ``agents`` may list expected agent ids; those without episodes are
    excluded from the averages and counted in ``excluded_agents``.
    ``aggregation="pooled"`` treats all episodes as one agent for the
    system figures (identical to macro averaging for a single agent).
    """
    if aggregation not in ("macro", "pooled"):
        raise ValueError("aggregation must be 'macro' or 'pooled'")
    if isinstance(episodes, Mapping):
        grouped = {a: list(eps) for a, eps in episodes.items()}
    else:
        grouped = defaultdict(list)
        for e in episodes:
            grouped[e.agent_id].append(e)
    for a in agents:
        grouped.setdefault(a, [])

    excluded = sum(1 for eps in grouped.values() if not eps)
    per_agent = tuple(
        agent_metrics(a, grouped[a], run_start) for a in sorted(grouped) if grouped[a]
    )
    if not per_agent:
        raise UndefinedMetricError("no completed episodes; metrics are undefined")
    pooled = [e for a in sorted(grouped) for e in grouped[a]]

    if aggregation == "macro":
        mttr_sys = math.fsum(a.mttr_mean for a in per_agent) / len(per_agent)
        mtbf_sys = math.fsum(a.mtbf for a in per_agent) / len(per_agent)
    else:
        mttr_sys = mttr_mean(pooled)
        mtbf_sys = math.fsum(uptime_intervals_all(grouped, run_start)) / len(pooled)

    med_sys = medttr(pooled)
    sigma = std_recovery(pooled)
    lam = 1.0 / mtbf_sys if mtbf_sys > 0 else math.inf
    conf = ConfidenceParams.of(alpha, mttr_sys, sigma)
    nrr_sys = nrr(mttr_sys, mtbf_sys)
    system = SystemMetrics(
        n_agents=len(per_agent),
        n_episodes=len(pooled),
        mttr_sys=mttr_sys,
        medttr_sys=med_sys,
        mtbf_sys=mtbf_sys,
        nrr_sys=nrr_sys,
        nrr_median=nrr(med_sys, mtbf_sys),
        lambda_sys=lam,
        mu_sys=mttr_sys,
        sigma=sigma,
        p90_sys=p90(pooled),
        alpha=alpha,
        k_alpha=conf.k_alpha,
        r_alpha=conf.r_alpha,
        # same value as nrr_alpha(mttr_sys, sigma, lam, alpha), arranged so rounding
        # can never lift it above nrr_sys
        nrr_alpha=nrr_sys - lam * conf.k_alpha * sigma,
        uptime=steady_state_uptime(lam, mttr_sys),
        aggregation=aggregation,
    )
    return ReliabilityReport(
        agents=per_agent,
        system=system,
        modes=mode_breakdown(pooled),
        excluded_agents=excluded,
        incomplete_episodes=incomplete,
    )


def uptime_intervals_all(grouped: Mapping[str, Sequence[Episode]], run_start: float) -> list[float]:
    return [x for a in sorted(grouped) for x in uptime_intervals(grouped[a], run_start)]


# --------------------------------------------------------------------------
# CSV


AGENT_COLUMNS = ("agent_id", "m_i", "mttr_mean", "medttr", "mtbf", "nrr", "std_recovery", "p90")
SYSTEM_COLUMNS = tuple(f for f in SystemMetrics.__dataclass_fields__ if f != "aggregation")
MODE_COLUMNS = tuple(ModeMetrics.__dataclass_fields__)
SYSTEM_ROW = "__system__"


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, ReflexMode):
        return v.value
    return str(v)


def report_to_csv(report: ReliabilityReport) -> str:
    """Two tables separated by a blank line.

    The first has one row per agent plus a ``__system__`` row; agent rows
    leave the system-only columns empty. The second is the per-mode table.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGENT_COLUMNS + SYSTEM_COLUMNS)
    blank = [""] * len(SYSTEM_COLUMNS)
    for a in report.agents:
        w.writerow([_cell(getattr(a, c)) for c in AGENT_COLUMNS] + blank)
    s = report.system
    system_as_agent = [SYSTEM_ROW, s.n_episodes, s.mttr_sys, s.medttr_sys, s.mtbf_sys, s.nrr_sys, s.sigma, s.p90_sys]
    w.writerow([_cell(v) for v in system_as_agent] + [_cell(getattr(s, c)) for c in SYSTEM_COLUMNS])
    buf.write("\n")
    w.writerow(MODE_COLUMNS)
    for m in report.modes:
        w.writerow([_cell(getattr(m, c)) for c in MODE_COLUMNS])
    return buf.getvalue()
