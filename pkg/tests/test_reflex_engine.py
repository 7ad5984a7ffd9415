import dataclasses
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mttra import reflex_engine as re_
from mttra.drift_source import Corpus, DriftConfig
from mttra.latency_model import LatencyProfile, PhaseDistribution
from mttra.reflex_engine import (
    OrchestrationState,
    PolicyConfig,
    SimulationSetup,
    StableInterval,
    run_cycle,
    run_experiment,
    run_rng,
    select_reflex,
    simulate_run,
)
from mttra.telemetry import CALIBRATED_MODES, EventType, ReflexMode, TriggerKind, encode_event, episodes_from_events

A, R = ReflexMode.AUTO_REPLAN, ReflexMode.ROLLBACK


def fixed_profiles(d=1.0, c=2.0, e=3.0):
    pt = PhaseDistribution.point
    return {m: LatencyProfile(m, pt(d), pt(c), pt(e)) for m in CALIBRATED_MODES}


@pytest.fixture(scope="module")
def tiny_corpus():
    return Corpus.from_texts(["alpha beta", "gamma delta"])


def test_policy_tree():
    rng = np.random.default_rng(0)
    p = PolicyConfig()
    assert select_reflex(TriggerKind.TOOL_ERROR, p, rng) is ReflexMode.TOOL_RETRY
    assert select_reflex(TriggerKind.LOW_CONFIDENCE, p, rng) is ReflexMode.HUMAN_APPROVE
    off = PolicyConfig(human_gate_enabled=False)
    assert select_reflex(TriggerKind.LOW_CONFIDENCE, off, rng) is A
    always = PolicyConfig(drift_branch_weights={R: 1.0})
    assert all(select_reflex(TriggerKind.DRIFT_OBSERVED, always, rng) is R for _ in range(50))


def test_drift_branch_frequency():
    rng = np.random.default_rng(9)
    picks = Counter(select_reflex(TriggerKind.DRIFT_OBSERVED, PolicyConfig(), rng) for _ in range(20_000))
    assert picks[R] / 20_000 == pytest.approx(0.32, abs=0.012)


def test_flat_mode_weights_replace_the_tree():
    p = PolicyConfig(mode_weights={ReflexMode.HUMAN_APPROVE: 1.0})
    rng = np.random.default_rng(0)
    assert {select_reflex(t, p, rng) for t in TriggerKind} == {ReflexMode.HUMAN_APPROVE}


@pytest.mark.parametrize(
    "kw",
    [
        dict(drift_branch_weights={A: 0.5, R: 0.4}),
        dict(drift_branch_weights={A: 1.2, R: -0.2}),
        dict(drift_branch_weights={ReflexMode.TOOL_RETRY: 1.0}),
        dict(mode_weights={ReflexMode.SAFE_MODE: 1.0}),
    ],
)
def test_policy_validation(kw):
    with pytest.raises(ValueError):
        PolicyConfig(**kw)


@given(st.sampled_from(list(TriggerKind)), st.booleans(), st.floats(0, 1), st.integers(0, 2**32))
def test_policy_is_total_and_consumes_one_draw(trigger, gate, w, seed):
    policy = PolicyConfig(drift_branch_weights={R: w, A: 1.0 - w}, human_gate_enabled=gate)
    rng = np.random.default_rng(seed)
    assert select_reflex(trigger, policy, rng) in CALIBRATED_MODES
    ref = np.random.default_rng(seed)
    ref.random()
    assert rng.random() == ref.random()


def test_no_fault_cycle_leaves_the_clock(tiny_corpus):
    setup = SimulationSetup(tiny_corpus, queries=("alpha beta",), drift=DriftConfig(0.6, 0.0))
    state = OrchestrationState(0, ["agent-0"])
    assert run_cycle(state, "agent-0", setup, np.random.default_rng(0)) is None
    assert state.clock["agent-0"] == 0.0
    assert state.up_until["agent-0"] > 0.0


def test_forced_drift_with_point_latencies(tiny_corpus):
    setup = SimulationSetup(
        tiny_corpus,
        queries=("omega",),  # no known term: confidence 0
        policy=PolicyConfig(drift_branch_weights={A: 1.0}),
        profiles=fixed_profiles(),
        stable=StableInterval(5.0, 0.0),
    )
    state = OrchestrationState(3, ["agent-0"])
    out = run_cycle(state, "agent-0", setup, np.random.default_rng(0))
    assert out.mode is A
    e = out.episode
    assert (e.t_fault, e.delta_t, e.t_detect, e.t_decide, e.t_execute) == (5.0, 6.0, 1.0, 2.0, 3.0)
    assert [ev.event_type for ev in out.events] == list(EventType)
    assert [ev.t for ev in out.events] == [5.0, 6.0, 8.0, 11.0]
    assert out.events[0].confidence == 0.0 and out.events[0].trigger is TriggerKind.DRIFT_OBSERVED
    assert all(ev.run_id == 3 and ev.episode_id == 0 for ev in out.events)
    assert state.clock["agent-0"] == 11.0 and state.episode_counter["agent-0"] == 1
    # the next fault is one stable interval after recovery
    assert run_cycle(state, "agent-0", setup, np.random.default_rng(1)).episode.t_fault == 16.0


def test_missing_profile_is_reported(tiny_corpus):
    setup = SimulationSetup(tiny_corpus, queries=("omega",), profiles={})
    with pytest.raises(ValueError, match="no latency profile"):
        run_cycle(OrchestrationState(0, ["a"]), "a", setup, np.random.default_rng(0))


def test_fault_free_configuration_hits_the_cycle_cap(tiny_corpus, monkeypatch):
    monkeypatch.setattr(re_, "MAX_CYCLES_PER_EPISODE", 30)
    setup = SimulationSetup(tiny_corpus, queries=("alpha beta",), drift=DriftConfig(0.5, 0.0))
    with pytest.raises(RuntimeError, match="no fault"):
        simulate_run(0, 1, setup)


def test_run_streams_are_independent_and_reproducible():
    a = run_rng(42, 0, 0).random(4)
    assert np.array_equal(a, run_rng(42, 0, 0).random(4))
    assert not np.array_equal(a, run_rng(42, 1, 0).random(4))
    assert not np.array_equal(a, run_rng(42, 0, 1).random(4))
    assert not np.array_equal(a, run_rng(43, 0, 0).random(4))


def test_single_run_yields_one_episode():
    result = run_experiment(1)
    assert len(result.episodes) == 1 and len(result.events) == 4


def test_multi_agent_multi_episode_runs():
    result = run_experiment(3, seed=5, n_agents=2, episodes_per_run=4)
    assert len(result.outcomes) == 3 * 2 * 4
    seg = episodes_from_events(result.events)
    assert seg.incomplete == 0 and seg.episodes == result.episodes
    by_stream = Counter((e.run_id, e.agent_id) for e in result.episodes)
    assert set(by_stream.values()) == {4}


def test_parallel_and_serial_runs_agree():
    serial = run_experiment(12, seed=3, episodes_per_run=2)
    parallel = run_experiment(12, seed=3, episodes_per_run=2, jobs=3)
    assert [encode_event(e) for e in serial.events] == [encode_event(e) for e in parallel.events]


def test_experiment_argument_checks():
    with pytest.raises(ValueError):
        run_experiment(0)
    with pytest.raises(ValueError):
        run_experiment(1, jobs=0)


def test_default_mode_mix_is_near_the_calibration_mean():
    # pooled over seeds the mix should sit close to the intended shares
    counts = Counter()
    for seed in range(5):
        counts.update(run_experiment(200, seed=seed).mode_counts)
    total = sum(counts.values())
    fault_p = 7 / 16 + 9 / 16 * 0.35
    drift = 7 / 16 / fault_p
    assert counts[ReflexMode.ROLLBACK] / total == pytest.approx(drift * 0.32, abs=0.03)
    assert counts[ReflexMode.TOOL_RETRY] / total == pytest.approx((1 - drift) * 2 / 3, abs=0.03)


# -- properties


@given(st.integers(0, 2**32), st.integers(1, 3), st.integers(1, 3))
def test_event_order_and_accounting(seed, n_agents, per_run):
    result = run_experiment(2, seed=seed, n_agents=n_agents, episodes_per_run=per_run)
    for o in result.outcomes:
        ts = [ev.t for ev in o.events]
        assert all(a < b for a, b in zip(ts, ts[1:]))
        assert o.episode.mode is o.mode
    assert sum(result.mode_counts.values()) == len(episodes_from_events(result.events).episodes)


@given(st.integers(0, 2**32))
def test_telemetry_is_a_function_of_the_seed(seed):
    a = run_experiment(2, seed=seed, episodes_per_run=2)
    b = run_experiment(2, seed=seed, episodes_per_run=2)
    assert [encode_event(e) for e in a.events] == [encode_event(e) for e in b.events]


def test_setup_default_accepts_overrides(tiny_corpus):
    s = SimulationSetup.default(corpus=tiny_corpus, stable=StableInterval(1.0, 0.0))
    assert s.corpus is tiny_corpus and s.stable.mean == 1.0
    assert dataclasses.replace(s, queries=("x",)).queries == ("x",)
