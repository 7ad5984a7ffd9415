import json
from collections import defaultdict

import pytest
from hypothesis import HealthCheck, settings

from mttra import cli
from mttra.drift_source import default_corpus

# every property test gets at least this many generated cases
MIN_EXAMPLES = 150
settings.register_profile(
    "suite", max_examples=MIN_EXAMPLES, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")

CRITERIA = {
    1: "per-mode latency table (median 5%, std 25%, P90 10%, counts 20%)",
    2: "headline MedTTR / MTBF / NRR and the identity NRR = 1 - MedTTR/MTBF",
    3: "uptime >= NRR on the 10x10 grid, renewal agreement within 1%, under 60 s",
    4: "coverage of mu + k_alpha sigma >= alpha within 3 sigma, four families",
    5: "estimators equal brute-force recomputation to 1e-12",
    6: "byte-identical telemetry and identical reports for equal seeds",
    7: "property suites with at least 100 generated cases each",
}

_outcomes: dict[int, list[bool]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.failed:
        _outcomes[crit].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _outcomes:
            continue
        verdict = "PASS" if all(_outcomes[n]) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {CRITERIA[n]}")


@pytest.fixture(scope="session")
def corpus():
    return default_corpus()


def run_pipeline(workdir, *sim_args):
    """simulate -> metrics through the CLI; returns (telemetry bytes, report dict)."""
    tele = workdir / "telemetry.jsonl"
    report = workdir / "report.json"
    assert cli.main(["simulate", "--out", str(tele), *sim_args]) == 0
    assert cli.main(["metrics", str(tele), "--out", str(report)]) == 0
    return tele.read_bytes(), json.loads(report.read_text())


@pytest.fixture(scope="session")
def default_pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("default"), "--runs", "200", "--seed", "42")
