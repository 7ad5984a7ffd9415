import csv
import dataclasses
import io
import json
import math
import random
from fractions import Fraction

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from mttra.metrics import (
    MetricDomainError,
    UndefinedMetricError,
    build_report,
    k_alpha,
    medttr,
    mode_breakdown,
    mtbf_agent,
    mttr_mean,
    nrr,
    nrr_alpha,
    p90,
    percentile_nearest_rank,
    std_recovery,
    steady_state_uptime,
    uptime_intervals,
)
from mttra.telemetry import Episode, ReflexMode, TriggerKind


def ep(t_fault, t_rec, agent="a", run=0, mode=ReflexMode.AUTO_REPLAN, j=0):
    d = t_rec - t_fault
    return Episode(agent, t_fault, t_rec, d, 0.0, 0.0, d, mode, TriggerKind.DRIFT_OBSERVED, run, j)


def close(a, b, tol=1e-12):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


# -- worked examples


def test_mean_and_median_examples():
    assert mttr_mean([6.0]) == 6.0
    assert mttr_mean([4.0, 8.0]) == 6.0
    assert medttr([1.0, 2.0, 100.0]) == 2.0
    assert medttr([4.0, 6.0]) == 5.0


def test_mtbf_examples():
    assert mtbf_agent([ep(10, 12), ep(20, 23)]) == 9.0
    assert uptime_intervals([ep(10, 12), ep(20, 23)]) == [10.0, 8.0]
    assert mtbf_agent([ep(5, 6)]) == 5.0
    assert uptime_intervals([ep(1, 3), ep(3, 4)]) == [1.0, 0.0]
    assert mtbf_agent([ep(20, 23), ep(10, 12)]) == 9.0  # sorted internally


def test_mtbf_restarts_the_clock_each_run():
    assert uptime_intervals([ep(4, 5, run=0), ep(3, 9, run=1), ep(10, 11, run=1)], run_start=1.0) == [3.0, 2.0, 1.0]


def test_overlapping_episodes_are_rejected():
    with pytest.raises(ValueError, match="overlapping"):
        uptime_intervals([ep(1, 10), ep(5, 12)])


def test_nrr_and_confidence_examples():
    assert nrr(6.0, 6.73) == pytest.approx(1 - 6 / 6.73)
    assert k_alpha(0.5) == 1.0
    assert k_alpha(0.9) == pytest.approx(1 / 3)
    assert nrr_alpha(6.21, 2.14, 1 / 6.73, 0.9) == pytest.approx(-0.028727, abs=1e-6)
    assert steady_state_uptime(1 / 6.73, 6.21) == pytest.approx(0.520093, abs=1e-6)
    assert nrr_alpha(6.0, 0.0, 0.1, 0.3) == pytest.approx(nrr(6.0, 10.0), abs=1e-15)


def test_percentiles():
    assert p90(list(range(1, 11))) == 9
    assert percentile_nearest_rank([5.0], 90) == 5.0
    assert percentile_nearest_rank([1, 2, 3, 4], 100) == 4
    with pytest.raises(MetricDomainError):
        percentile_nearest_rank([1.0], 0)


def test_std_is_sample_std_and_zero_for_one():
    assert std_recovery([1.0, 3.0]) == pytest.approx(math.sqrt(2))
    assert std_recovery([7.0]) == 0.0


@pytest.mark.parametrize("fn", [mttr_mean, medttr, std_recovery, p90, lambda e: mtbf_agent(e)])
def test_empty_inputs_are_undefined(fn):
    with pytest.raises(UndefinedMetricError):
        fn([])


@pytest.mark.parametrize(
    "call, exc",
    [
        (lambda: nrr(1.0, 0.0), UndefinedMetricError),
        (lambda: k_alpha(0.0), MetricDomainError),
        (lambda: k_alpha(1.0), MetricDomainError),
        (lambda: nrr_alpha(1.0, -0.1, 1.0, 0.9), MetricDomainError),
        (lambda: nrr_alpha(1.0, 0.1, 0.0, 0.9), MetricDomainError),
        (lambda: steady_state_uptime(0.0, 1.0), MetricDomainError),
        (lambda: steady_state_uptime(1.0, -1.0), MetricDomainError),
    ],
)
def test_domain_errors(call, exc):
    with pytest.raises(exc):
        call()


# -- report


def two_agents():
    return [ep(2, 5, "a"), ep(9, 13, "a", j=1), ep(4, 10, "b", mode=ReflexMode.ROLLBACK)]


def test_single_episode_report():
    r = build_report([ep(6.73, 12.73)])
    s = r.system
    assert (s.n_agents, s.n_episodes) == (1, 1)
    assert s.nrr_sys == pytest.approx(1 - 6 / 6.73, abs=1e-12)
    assert s.nrr_median == s.nrr_sys
    assert s.sigma == 0.0 and s.nrr_alpha == s.nrr_sys


def test_macro_averages_agents():
    s = build_report(two_agents()).system
    assert s.mttr_sys == pytest.approx((3.5 + 6.0) / 2)
    # agent a: intervals 2 and 4 (mean 3); agent b: interval 4
    assert s.mtbf_sys == pytest.approx((3.0 + 4.0) / 2)
    assert s.medttr_sys == 4.0  # pooled median of {3, 4, 6}
    assert s.lambda_sys == pytest.approx(1 / 3.5)
    assert s.nrr_median == pytest.approx(1 - 4.0 / 3.5)


def test_pooled_aggregation():
    s = build_report(two_agents(), aggregation="pooled").system
    assert s.mttr_sys == pytest.approx(13 / 3)
    assert s.mtbf_sys == pytest.approx(10 / 3)
    with pytest.raises(ValueError):
        build_report(two_agents(), aggregation="median")


def test_pooled_equals_macro_for_one_agent():
    eps = [ep(1, 2), ep(4, 8, j=1), ep(9, 9.5, j=2)]
    macro = build_report(eps).system
    pooled = build_report(eps, aggregation="pooled").system
    for f in ("mttr_sys", "mtbf_sys", "nrr_sys", "nrr_alpha"):
        assert getattr(pooled, f) == pytest.approx(getattr(macro, f), abs=1e-12)


def test_agents_without_episodes_are_excluded():
    r = build_report(two_agents(), agents=["a", "b", "idle"])
    assert r.excluded_agents == 1 and r.system.n_agents == 2
    with pytest.raises(UndefinedMetricError):
        build_report([], agents=["idle"])


def test_mapping_input_and_mode_table():
    r = build_report({"a": two_agents()[:2], "b": two_agents()[2:]})
    assert [a.agent_id for a in r.agents] == ["a", "b"]
    assert [(m.mode, m.count) for m in r.modes] == [(ReflexMode.AUTO_REPLAN, 2), (ReflexMode.ROLLBACK, 1)]
    assert r.modes[0].mean_execute == pytest.approx(3.5)


def test_json_and_csv_shapes():
    r = build_report(two_agents(), incomplete=2)
    d = json.loads(r.to_json())
    assert set(d) == {"agents", "system", "modes", "excluded_agents", "incomplete_episodes"}
    assert d["incomplete_episodes"] == 2
    assert d["modes"][0]["mode"] == "auto-replan"

    agents_block, modes_block = r.to_csv().split("\n\n")
    rows = list(csv.DictReader(io.StringIO(agents_block)))
    assert [row["agent_id"] for row in rows] == ["a", "b", "__system__"]
    assert float(rows[-1]["nrr_median"]) == r.system.nrr_median
    assert rows[0]["nrr_sys"] == ""
    modes = list(csv.DictReader(io.StringIO(modes_block)))
    assert [m["mode"] for m in modes] == ["auto-replan", "rollback"]


# -- oracle equivalence on random sets (also exercised by the acceptance suite)


@given(oracles.episode_set(), st.floats(min_value=0.01, max_value=0.99))
def test_estimators_match_oracles(eps, alpha):
    d = [e.delta_t for e in eps]
    between = oracles.mtbf([e.t_fault for e in eps], [e.t_recovered for e in eps])
    assume(between > 0)
    assert close(mttr_mean(eps), oracles.mean(d))
    assert close(medttr(eps), oracles.median(d))
    assert close(mtbf_agent(eps), between)
    assert close(nrr(mttr_mean(eps), mtbf_agent(eps)), oracles.nrr(oracles.mean(d), between))
    sigma = oracles.sample_std(d)
    assert close(
        nrr_alpha(mttr_mean(eps), std_recovery(eps), 1 / mtbf_agent(eps), alpha),
        oracles.nrr_alpha(oracles.mean(d), sigma, 1 / between, alpha),
    )


# -- invariants


@given(oracles.episode_set(min_size=2), st.randoms(use_true_random=False))
def test_permutation_invariance(eps, rnd):
    shuffled = list(eps)
    rnd.shuffle(shuffled)
    for fn in (mttr_mean, medttr, std_recovery, p90, mtbf_agent):
        assert close(fn(shuffled), fn(eps))
    assume(mtbf_agent(eps) > 0)
    a, b = build_report(shuffled).system, build_report(eps).system
    for f in ("mttr_sys", "medttr_sys", "mtbf_sys", "nrr_sys", "sigma", "nrr_alpha"):
        assert close(getattr(a, f), getattr(b, f))


@given(st.lists(st.floats(min_value=0.01, max_value=100), min_size=1, max_size=12))
def test_median_robust_to_inflating_the_maximum(d):
    s = sorted(d)
    inflated = s[:-1] + [10 * s[-1]]
    before, after = medttr(s), medttr(inflated)
    if len(s) >= 3:
        assert after == before
    elif len(s) == 2:
        # the even-count average carries half of the inflation
        assert after - before == pytest.approx(4.5 * s[-1])
    else:
        assert after == 10 * before


@given(st.lists(oracles.episode_set(max_size=6), min_size=1, max_size=3), st.floats(0.01, 0.99))
def test_bound_chain(sets, alpha):
    eps = [dataclasses.replace(e, agent_id=f"g{i}") for i, s in enumerate(sets) for e in s]
    try:
        s = build_report(eps, alpha=alpha).system
    except UndefinedMetricError:
        assume(False)
    assume(s.mtbf_sys > 0)
    assert s.nrr_alpha <= s.nrr_sys
    # uptime - nrr = a^2 / (1 + a) can sit below one ulp, so the upper link is
    # checked exactly on the computed inputs and to one ulp on the rounded outputs
    a = Fraction(s.lambda_sys) * Fraction(s.mu_sys)
    assert 1 - a <= 1 / (1 + a) <= 1
    assert s.nrr_sys <= s.uptime + math.ulp(1.0) and s.uptime <= 1.0


@given(st.floats(min_value=1e-3, max_value=10), st.floats(min_value=0, max_value=100))
def test_gap_identity(lam, mu):
    a = lam * mu
    assert math.isclose(steady_state_uptime(lam, mu) - nrr(mu, 1 / lam), a * a / (1 + a), rel_tol=1e-12, abs_tol=1e-12)


@given(st.integers(0, 2**32), st.floats(min_value=0.01, max_value=100), st.floats(0.05, 0.95))
def test_time_unit_equivariance(seed, s, alpha):
    rnd = random.Random(seed)
    t = 0.0
    base = []
    for j in range(rnd.randint(1, 10)):
        t += rnd.uniform(0.1, 20)
        d = rnd.uniform(0.1, 10)
        base.append(ep(t, t + d, j=j))
        t += d
    scaled = [ep(e.t_fault * s, e.t_recovered * s, j=e.episode_id) for e in base]
    r0, r1 = build_report(base, alpha=alpha).system, build_report(scaled, alpha=alpha).system
    assert math.isclose(r1.mttr_sys, s * r0.mttr_sys, rel_tol=1e-9)
    assert math.isclose(r1.mtbf_sys, s * r0.mtbf_sys, rel_tol=1e-9)
    for f in ("nrr_sys", "nrr_alpha", "uptime", "nrr_median"):
        assert math.isclose(getattr(r1, f), getattr(r0, f), rel_tol=1e-9, abs_tol=1e-9)


@given(oracles.episode_set())
def test_mode_counts_sum_to_episode_count(eps):
    assert sum(m.count for m in mode_breakdown(eps)) == len(eps)
