import numpy as np
import pytest

from sppg.audio import AudioSignal


@pytest.fixture
def tone_16k():
    """0.4 s of a 1 kHz sine at 16 kHz, amplitude 0.5."""
    t = np.arange(int(0.4 * 16000)) / 16000.0
    return AudioSignal(samples=0.5 * np.sin(2 * np.pi * 1000.0 * t), sample_rate_hz=16000)


# -- acceptance reporting ---------------------------------------------------

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def record_acceptance(name: str, passed: bool) -> None:
    _ACCEPTANCE_RESULTS.append((name, "PASS" if passed else "FAIL"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{status}] {name}")
