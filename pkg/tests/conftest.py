import time

import numpy as np
import pytest
import yaml

from kkqkd.config import parse_config, preset_text
from kkqkd.link import LinkSetup
from kkqkd.waveform import ModulationParams


def small_params(**changes) -> ModulationParams:
    """Shortest legal frames: 40 samples per symbol just meet the carrier Nyquist limit."""
    base = dict(v_a=5.0, g=100.0, samples_per_symbol=40, n_symbols=10_000, seed=1)
    base.update(changes)
    return ModulationParams(**base)


def small_setup(**changes) -> LinkSetup:
    params = changes.pop("params", None) or small_params()
    base = dict(kk_upsample=1)
    base.update(changes)
    return LinkSetup(params, **base)


def config_from_preset(name: str, **sections):
    """Load a preset with some of its sections updated key by key."""
    raw = yaml.safe_load(preset_text(name))
    for section, values in sections.items():
        if isinstance(values, dict) and isinstance(raw.get(section), dict):
            raw[section].update(values)
        else:
            raw[section] = values
    return parse_config(yaml.safe_dump(raw, sort_keys=False), f"{name}-modified")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def experiment_run(tmp_path_factory):
    """Full waveform simulation of the experiment preset, shared by every test that needs it."""
    from kkqkd.cli import run_simulate
    from kkqkd.config import load_preset

    out = tmp_path_factory.mktemp("experiment")
    start = time.perf_counter()
    result = run_simulate(load_preset("paper-experiment"), out)
    return result, out, time.perf_counter() - start


# acceptance criterion -> list of (check name, passed, detail)
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, check: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[criterion]
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        details = "; ".join(f"{name}: {'ok' if ok else 'FAILED'} ({detail})" for name, ok, detail in checks)
        terminalreporter.write_line(f"criterion {criterion}: {status} - {details}")
