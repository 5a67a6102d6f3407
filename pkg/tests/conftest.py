import numpy as np
import pytest
from hypothesis import settings

from spadtwin.optics import Constant, OpticsConfig, Ramp, Scene
from spadtwin.sequencer import ProtocolSpec

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

RABI_SWEEP = tuple(np.round(np.linspace(0.04, 2.0, 50), 9))


@pytest.fixture
def rabi_spec():
    return ProtocolSpec("RABI", RABI_SWEEP)


@pytest.fixture
def uniform_scene():
    return Scene((-6, 198, -6, 102), 0.3, {"brightness": Constant(3e9), "mw_amp": Constant(5.5)})


@pytest.fixture
def gradient_scene():
    return Scene((-6, 198, -6, 102), 0.3,
                 {"brightness": Constant(3e9), "mw_amp": Ramp(5.4, (0.5 / 189, 0.0))},
                 photodiode_region=(-200, 400, -100, 200), photodiode_spacing=2.0)


@pytest.fixture
def optics50():
    return OpticsConfig(magnification=50)


@pytest.fixture
def verdict(request, capsys):
    """Print and record one ``criterion N: PASS|FAIL`` line, then assert."""

    def emit(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        request.config.stash.setdefault(ACCEPTANCE, []).append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return emit


ACCEPTANCE = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
