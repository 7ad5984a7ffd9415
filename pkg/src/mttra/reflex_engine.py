"""Reasoning / drift-check / recovery control loop.

Each agent alternates between stable up periods and recoveries. When an up
period begins its length is drawn from ``StableInterval``. A cycle answers
one query from the pool and runs the drift check on it; passing checks fall
inside the current up period, and the first failing check ends it, so the
fault is stamped at the end of the up period. The policy tree then picks a
reflex, the reflex's latency profile is sampled, and four telemetry events
are emitted::

    fault_detected --detect--> policy_selected --decide--> reflex_started --execute--> recovered
"""

from __future__ import annotations

import time
from collections import Counter
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .drift_source import Corpus, DriftConfig, check_drift, default_corpus, query_confidence, DEFAULT_QUERY_POOL
from .latency_model import LatencyProfile, default_profiles, sample_latency, truncated_normal
from .telemetry import (
    CALIBRATED_MODES,
    Episode,
    EventType,
    ReflexMode,
    TelemetryEvent,
    TriggerKind,
)

_WEIGHT_TOL = 1e-12


def _check_weights(name: str, weights: Mapping[ReflexMode, float]) -> None:
    if any(w < 0 for w in weights.values()):
        raise ValueError(f"{name}: weights must be non-negative")
    if abs(sum(weights.values()) - 1.0) > _WEIGHT_TOL:
        raise ValueError(f"{name}: weights must sum to 1, got {sum(weights.values())!r}")


@dataclass(frozen=True)
class PolicyConfig:
    """Reflex selection settings.

    ``mode_weights``, when given, replaces the decision tree with flat
    weighted sampling over the calibrated modes.
    """

    drift_branch_weights: Mapping[ReflexMode, float] = field(
        default_factory=lambda: {ReflexMode.AUTO_REPLAN: 0.68, ReflexMode.ROLLBACK: 0.32}
    )
    mode_weights: Mapping[ReflexMode, float] | None = None
    human_gate_enabled: bool = True

    def __post_init__(self) -> None:
        if set(self.drift_branch_weights) - {ReflexMode.AUTO_REPLAN, ReflexMode.ROLLBACK}:
            raise ValueError("drift branch chooses between auto-replan and rollback only")
        _check_weights("drift_branch_weights", self.drift_branch_weights)
        if self.mode_weights is not None:
            if set(self.mode_weights) - set(CALIBRATED_MODES):
                raise ValueError("mode_weights may only name calibrated modes")
            _check_weights("mode_weights", self.mode_weights)


def select_reflex(trigger: TriggerKind, policy: PolicyConfig, rng: np.random.Generator) -> ReflexMode:
    # One uniform per call regardless of branch keeps the stream aligned.
    u = float(rng.random())
    if policy.mode_weights is not None:
        return _pick(policy.mode_weights, u, order=CALIBRATED_MODES)
    if trigger is TriggerKind.TOOL_ERROR:
        return ReflexMode.TOOL_RETRY
    if trigger is TriggerKind.LOW_CONFIDENCE:
        return ReflexMode.HUMAN_APPROVE if policy.human_gate_enabled else ReflexMode.AUTO_REPLAN
    # The tree's drift-rollback leaf is executed as the calibrated rollback reflex.
    return _pick(policy.drift_branch_weights, u, order=(ReflexMode.ROLLBACK, ReflexMode.AUTO_REPLAN))


def _pick(weights: Mapping[ReflexMode, float], u: float, order: Sequence[ReflexMode]) -> ReflexMode:
    acc = 0.0
    last = None
    for mode in order:
        w = weights.get(mode, 0.0)
        if w <= 0:
            continue
        acc += w
        last = mode
        if u < acc:
            return mode
    return last


@dataclass(frozen=True)
class StableInterval:
    """Length of an up period (recovery or run start to next fault), truncated normal in seconds."""

    mean: float = 6.73
    std: float = 2.14

    def sample(self, rng: np.random.Generator) -> float:
        return truncated_normal(rng, self.mean, self.std)


@dataclass
class OrchestrationState:
    run_id: int
    agents: list[str]
    clock: dict[str, float] = field(default_factory=dict)
    last_recovered_at: dict[str, float] = field(default_factory=dict)
    episode_counter: dict[str, int] = field(default_factory=dict)
    # end of the agent's current up period; None until the next cycle opens one
    up_until: dict[str, float | None] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for agent in self.agents:
            self.clock.setdefault(agent, 0.0)
            self.last_recovered_at.setdefault(agent, 0.0)
            self.episode_counter.setdefault(agent, 0)
            self.up_until.setdefault(agent, None)


@dataclass(frozen=True)
class ReflexOutcome:
    mode: ReflexMode
    episode: Episode
    events: tuple[TelemetryEvent, ...]


@dataclass(frozen=True)
class SimulationSetup:
    """Everything a run needs besides its random stream."""

    corpus: Corpus
    queries: tuple[str, ...] = DEFAULT_QUERY_POOL
    drift: DriftConfig = field(default_factory=DriftConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    profiles: Mapping[ReflexMode, LatencyProfile] = field(default_factory=default_profiles)
    stable: StableInterval = field(default_factory=StableInterval)

    @classmethod
    def default(cls, **overrides) -> SimulationSetup:
        return cls(corpus=overrides.pop("corpus", None) or default_corpus(), **overrides)


def run_cycle(
    state: OrchestrationState,
    agent_id: str,
    setup: SimulationSetup,
    rng: np.random.Generator,
) -> ReflexOutcome | None:
    """Answer one query; returns the recovery outcome if the drift check fails.

    A cycle with no open up period first draws one. A passing check leaves
    the clock where it is (the check happened somewhere inside the up period
    and is not logged).
    """
    if state.up_until[agent_id] is None:
        state.up_until[agent_id] = state.clock[agent_id] + setup.stable.sample(rng)

    query = setup.queries[int(rng.integers(len(setup.queries)))]
    c, _ = query_confidence(query, setup.corpus)
    trigger = check_drift(c, setup.drift, rng)
    if trigger is None:
        return None
    clock = state.up_until[agent_id]
    state.up_until[agent_id] = None

    mode = select_reflex(trigger, setup.policy, rng)
    try:
        profile = setup.profiles[mode]
    except KeyError:
        raise ValueError(f"no latency profile for reflex mode {mode.value}") from None
    t_detect, t_decide, t_execute = sample_latency(profile, rng)

    episode_id = state.episode_counter[agent_id]
    t_fault = clock
    t_policy = t_fault + t_detect
    t_started = t_policy + t_decide
    t_recovered = t_started + t_execute

    common = dict(run_id=state.run_id, agent_id=agent_id, episode_id=episode_id)
    conf = None if trigger is TriggerKind.TOOL_ERROR else max(0.0, c)
    events = (
        TelemetryEvent(**common, event_type=EventType.FAULT_DETECTED, t=t_fault, trigger=trigger, confidence=conf),
        TelemetryEvent(**common, event_type=EventType.POLICY_SELECTED, t=t_policy, mode=mode),
        TelemetryEvent(**common, event_type=EventType.REFLEX_STARTED, t=t_started, mode=mode),
        TelemetryEvent(**common, event_type=EventType.RECOVERED, t=t_recovered, mode=mode),
    )
    episode = Episode.from_timestamps(
        agent_id,
        t_fault=t_fault,
        t_policy=t_policy,
        t_started=t_started,
        t_recovered=t_recovered,
        mode=mode,
        trigger=trigger,
        run_id=state.run_id,
        episode_id=episode_id,
    )
    state.clock[agent_id] = t_recovered
    state.last_recovered_at[agent_id] = t_recovered
    state.episode_counter[agent_id] = episode_id + 1
    return ReflexOutcome(mode, episode, events)


def agent_name(index: int) -> str:
    return f"agent-{index}"


def run_rng(seed: int, run_id: int, agent_index: int) -> np.random.Generator:
    """Independent stream for one agent of one run, derived from the master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(run_id, agent_index))))


# hard stop for pathological configs (e.g. no fault can ever occur)
MAX_CYCLES_PER_EPISODE = 100_000


def simulate_run(
    run_id: int,
    seed: int,
    setup: SimulationSetup,
    n_agents: int = 1,
    episodes_per_run: int = 1,
) -> list[ReflexOutcome]:
    agents = [agent_name(i) for i in range(n_agents)]
    state = OrchestrationState(run_id, agents)
    outcomes: list[ReflexOutcome] = []
    for index, agent in enumerate(agents):
        rng = run_rng(seed, run_id, index)
        cycles = 0
        done = 0
        while done < episodes_per_run:
            cycles += 1
            if cycles > MAX_CYCLES_PER_EPISODE * episodes_per_run:
                raise RuntimeError(f"run {run_id}/{agent}: no fault after {cycles - 1} cycles")
            outcome = run_cycle(state, agent, setup, rng)
            if outcome is not None:
                outcomes.append(outcome)
                done += 1
    return outcomes


@dataclass
class ExperimentResult:
    outcomes: list[ReflexOutcome]
    mode_counts: dict[ReflexMode, int]
    n_runs: int
    elapsed_s: float

    @property
    def events(self) -> list[TelemetryEvent]:
        return [ev for o in self.outcomes for ev in o.events]

    @property
    def episodes(self) -> list[Episode]:
        return [o.episode for o in self.outcomes]


def _run_star(args) -> list[ReflexOutcome]:
    return simulate_run(*args)


def run_experiment(
    n_runs: int,
    seed: int = 42,
    setup: SimulationSetup | None = None,
    n_agents: int = 1,
    episodes_per_run: int = 1,
    jobs: int = 1,
) -> ExperimentResult:
    """Execute ``n_runs`` independent runs; output order is by run id whatever ``jobs`` is."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    if n_agents < 1 or episodes_per_run < 1 or jobs < 1:
        raise ValueError("n_agents, episodes_per_run and jobs must be at least 1")
    setup = setup or SimulationSetup.default()
    started = time.perf_counter()
    tasks = [(run_id, seed, setup, n_agents, episodes_per_run) for run_id in range(n_runs)]
    if jobs == 1:
        per_run = [_run_star(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_run = list(pool.map(_run_star, tasks, chunksize=max(1, n_runs // (4 * jobs))))
    outcomes = [o for run in per_run for o in run]
    counts = Counter(o.mode for o in outcomes)
    mode_counts = {m: counts.get(m, 0) for m in CALIBRATED_MODES}
    mode_counts.update({m: k for m, k in counts.items() if m not in mode_counts})
    return ExperimentResult(outcomes, mode_counts, n_runs, time.perf_counter() - started)
