import numpy as np
import pytest

from mamstpp.harness import ScenarioConfig, TTP_SETTINGS, RATE_SETTINGS, run_scenario

# criterion number -> list of (passed, detail) from its sub-checks
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[key]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")


@pytest.fixture
def record_criterion():
    def record(key, ok, detail):
        ACCEPTANCE.setdefault(int(key), []).append((bool(ok), detail))
        return ok

    return record


_SCENARIO_CACHE = {}


@pytest.fixture(scope="session")
def scenario_records():
    """Run (and memoise) replicates of a standard scenario at default settings."""

    def run(ttp, rate, n, replicates=200):
        key = (ttp, rate, n, replicates)
        if key not in _SCENARIO_CACHE:
            cfg = ScenarioConfig(
                ttp_setting=ttp, theta=TTP_SETTINGS[ttp], rate_setting=rate,
                rates=RATE_SETTINGS[rate], n_per_arm=n, replicates=replicates,
            )
            _SCENARIO_CACHE[key] = (cfg, run_scenario(cfg))
        return _SCENARIO_CACHE[key]

    return run


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
