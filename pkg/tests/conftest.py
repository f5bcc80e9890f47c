import logging

import numpy as np
import pytest

from rtrom.hydro import FomConfig, LagrangianHydro
from rtrom.snapshots import collect_snapshots

logging.getLogger("rtrom").setLevel(logging.ERROR)

ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail):
    """Store one acceptance line; printed in the terminal summary and immediately."""
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="session")
def hydro_l1():
    return LagrangianHydro(FomConfig(refinement_level=1, t_final=0.5))


@pytest.fixture(scope="session")
def hydro_l2():
    return LagrangianHydro(FomConfig(refinement_level=2, t_final=1.5))


@pytest.fixture(scope="session")
def training_l2(hydro_l2):
    """Level-2 snapshots at A = 1/3 to t = 1.5 and the final FOM state."""
    snaps, final, run = collect_snapshots(hydro_l2)
    return snaps, final, run


@pytest.fixture(scope="session")
def training_l1(hydro_l1):
    snaps, final, run = collect_snapshots(hydro_l1)
    return snaps, final, run


@pytest.fixture(scope="session")
def reproductive_l2(training_l2):
    """Both windowed ROMs fitted on and run at the level-2 training point."""
    from rtrom.rom import WindowedROM

    snaps, _, _ = training_l2
    out = {}
    for kind in ("time", "distance"):
        rom = WindowedROM(indicator=kind, n_sample=20, delta_sigma=1e-4,
                          lambda_v=2.0, lambda_e=2.0).fit(snaps)
        out[kind] = (rom, rom.simulate(1 / 3, 1.5, measure_jumps=True))
    return out
