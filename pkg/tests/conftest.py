import math

import numpy as np
import pytest

from rydcz.pulses import ControlSet, GaussianPulse, SegmentedPulse, N_SEGMENTS

TWO_PI = 2.0 * math.pi


def constant_controls(omega_p: float, t_gate: float, omega_r: float = 0.0, delta_p: float = 0.0,
                      delta: float = 0.0) -> ControlSet:
    """Flat Omega_p over the whole window (unpinned segments of equal height)."""
    shape = SegmentedPulse((omega_p,) * N_SEGMENTS, t_gate, symmetric=True, pin_ends_to_zero=False)
    return ControlSet(shape, omega_r, delta_p, delta)


def zero_controls(t_gate: float) -> ControlSet:
    return ControlSet(GaussianPulse(0.0, t_gate), 0.0, 0.0)


def random_controls(rng: np.random.Generator, amp_max: float, t_max: float) -> ControlSet:
    """Random Gaussian or segmented controls inside the given ranges (rad/us, us)."""
    t_gate = rng.uniform(0.05, t_max)
    omega_r, delta_p = rng.uniform(0, amp_max, 2)
    if rng.random() < 0.5:
        return ControlSet(GaussianPulse(rng.uniform(0, amp_max), t_gate), omega_r, delta_p)
    return ControlSet(SegmentedPulse.from_half(rng.uniform(0, amp_max, 6), t_gate), omega_r, delta_p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance report ----------------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
