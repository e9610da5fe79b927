"""Gate sensitivity to Doppler dephasing and static laser-amplitude offsets.

Both atoms are taken to move at the rms thermal velocity along the common
beam axis, which shifts the intermediate and Rydberg detunings by ``k v_rms``.
An amplitude offset ``delta`` scales Omega_p(t) and Omega_r by ``1 + delta``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.constants import k as K_BOLTZMANN

from .atom import SystemParams
from .dynamics import IntegrationError, IntegratorConfig
from .fidelity import BellPipelineConfig, score_report
from .pulses import ControlSet

log = logging.getLogger(__name__)

CESIUM_MASS = 2.20695e-25
DEFAULT_K_P = 2.0 * math.pi / 459.3e-9
DEFAULT_K_R = 2.0 * math.pi / 1038e-9
MAX_OFFSET = 0.5


@dataclass(frozen=True)
class ThermalSpec:
    """Atom temperature (K) and the beam wave numbers (rad/m).

    ``sign`` picks the direction of the common velocity relative to the
    copropagating beams.
    """

    temperature: float = 0.0
    mass: float = CESIUM_MASS
    k_p: float = DEFAULT_K_P
    k_r: float = DEFAULT_K_R
    sign: int = 1

    def __post_init__(self):
        if not (self.temperature >= 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not (self.mass > 0 and self.k_p > 0 and self.k_r > 0):
            raise ValueError("mass and wave numbers must be positive")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @property
    def v_rms(self) -> float:
        return math.sqrt(K_BOLTZMANN * self.temperature / self.mass)


@dataclass(frozen=True)
class FluctuationSpec:
    offset: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.offset) and abs(self.offset) <= MAX_OFFSET):
            raise ValueError(f"amplitude offset must satisfy |offset| <= {MAX_OFFSET}, got {self.offset}")


def doppler_detuning(spec: ThermalSpec) -> tuple[float, float]:
    """Shifts ``(d_delta_p, d_delta_r)`` of the two single-photon detunings, rad/us."""
    v = spec.sign * spec.v_rms
    return spec.k_p * v * 1e-6, spec.k_r * v * 1e-6


def perturb_controls(c: ControlSet, fluct: FluctuationSpec, thermal: ThermalSpec) -> ControlSet:
    """Apply the amplitude offset and the Doppler shifts; t_gate is unchanged."""
    d_p, d_r = doppler_detuning(thermal)
    scale = 1.0 + fluct.offset
    return ControlSet(
        omega_p_shape=c.omega_p_shape.scaled(scale),
        omega_r=c.omega_r * scale,
        delta_p=c.delta_p + d_p,
        delta=c.delta + d_p + d_r,
    )


@dataclass(frozen=True)
class SweepGrid:
    temperatures: tuple[float, ...]
    offsets: tuple[float, ...]
    thermal: ThermalSpec = ThermalSpec()

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temperatures)
        offsets = tuple(float(d) for d in self.offsets)
        if not temps or not offsets:
            raise ValueError("sweep axes must not be empty")
        for t in temps:
            replace(self.thermal, temperature=t)
        for d in offsets:
            FluctuationSpec(d)
        object.__setattr__(self, "temperatures", temps)
        object.__setattr__(self, "offsets", offsets)

    def cells(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(len(self.temperatures)) for j in range(len(self.offsets))]


@dataclass
class SweepResult:
    """``f_bell[i, j]`` at ``temperatures[i]``, ``offsets[j]``; NaN marks a failed cell."""

    temperatures: tuple[float, ...]
    offsets: tuple[float, ...]
    f_bell: np.ndarray
    baseline: float
    missing: list[tuple[int, int, str]] = field(default_factory=list)

    def max_drop(self, temperature_index: Optional[int] = None, offset_index: Optional[int] = None) -> float:
        """Largest ``baseline - f_bell`` over a row, a column or the whole grid."""
        f = self.f_bell
        if temperature_index is not None:
            f = f[temperature_index]
        if offset_index is not None:
            f = f[..., offset_index]
        return float(self.baseline - np.nanmin(f))


class _CellScore:
    """Picklable evaluation of one sweep cell."""

    def __init__(self, controls, params, grid, integrator, bell):
        self.controls = controls
        self.params = params
        self.grid = grid
        self.integrator = integrator
        self.bell = bell

    def __call__(self, cell: tuple[int, int]):
        i, j = cell
        thermal = replace(self.grid.thermal, temperature=self.grid.temperatures[i])
        perturbed = perturb_controls(self.controls, FluctuationSpec(self.grid.offsets[j]), thermal)
        try:
            return score_report(perturbed, self.params, self.integrator, self.bell).f_bell, ""
        except IntegrationError as exc:
            return math.nan, str(exc)


def run_sweep(
    controls: ControlSet,
    params: SystemParams,
    grid: SweepGrid,
    integrator: IntegratorConfig = IntegratorConfig(),
    bell: BellPipelineConfig = BellPipelineConfig(),
    executor: Optional[Executor] = None,
) -> SweepResult:
    """Score every (temperature, offset) cell; failed cells become NaN and are listed."""
    baseline = score_report(controls, params, integrator, bell).f_bell
    job = _CellScore(controls, params, grid, integrator, bell)
    cells = grid.cells()
    mapper: Callable = executor.map if executor is not None else map
    values = np.full((len(grid.temperatures), len(grid.offsets)), np.nan)
    missing = []
    for (i, j), (f, err) in zip(cells, mapper(job, cells)):
        values[i, j] = f
        if err:
            log.warning("sweep cell T=%g K, offset=%g failed: %s", grid.temperatures[i], grid.offsets[j], err)
            missing.append((i, j, err))
    return SweepResult(grid.temperatures, grid.offsets, values, baseline, missing)
