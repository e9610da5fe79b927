"""Bell-fidelity score of a gate and a CZ phase diagnostic.

The gate acts on ``|++>``; the resulting computational block is corrected by
``Z(theta) (x) Z(theta)``, rotated by ``X(pi/2) (x) X(pi/2)`` and scored as

    F(theta) = (rho'_{00,00} + rho'_{11,11}) / 2 + |rho'_{11,00}|

maximized over theta.  An ideal CZ scores exactly one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .atom import DIM, AtomLevel, SystemParams, basis_index
from .dynamics import (
    COMPUTATIONAL_INDICES,
    IntegrationError,
    IntegratorConfig,
    basis_state,
    evolve_unitary,
    final_computational_block,
    plus_plus_state,
)
from .pulses import ControlSet

log = logging.getLogger(__name__)

_X_HALF = np.array([[1.0, -1.0j], [-1.0j, 1.0]]) / math.sqrt(2.0)
_XX = np.kron(_X_HALF, _X_HALF)


@dataclass(frozen=True)
class BellPipelineConfig:
    """Settings of the theta maximization; the input state is always ``|++>``."""

    theta_scan_points: int = 256
    theta_refine_tol: float = 1e-10

    def __post_init__(self):
        if self.theta_scan_points < 8:
            raise ValueError("theta_scan_points must be at least 8")
        if not self.theta_refine_tol > 0:
            raise ValueError("theta_refine_tol must be positive")


@dataclass(frozen=True)
class FidelityReport:
    f_bell: float
    theta_opt: float
    leakage: float
    p00: float
    p11: float
    coh_mag: float

    @property
    def infidelity(self) -> float:
        return 1.0 - self.f_bell

    def as_dict(self) -> dict:
        return {
            "f_bell": self.f_bell,
            "theta_opt": self.theta_opt,
            "leakage": self.leakage,
            "p00": self.p00,
            "p11": self.p11,
            "coh_mag": self.coh_mag,
        }


def project_computational(rho: np.ndarray) -> tuple[np.ndarray, float]:
    """Unnormalized ``{|00>, |01>, |10>, |11>}`` block of rho and the leakage."""
    rho = np.asarray(rho)
    if rho.shape != (DIM, DIM):
        raise ValueError(f"rho must be {DIM}x{DIM}")
    block = rho[np.ix_(COMPUTATIONAL_INDICES, COMPUTATIONAL_INDICES)].copy()
    return block, 1.0 - float(np.real(np.trace(block)))


def _rotated(block: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``XX ZZ(theta) block ZZ(theta)^dag XX^dag`` for an array of theta."""
    phases = np.exp(1j * np.outer(theta, [0.0, 1.0, 1.0, 2.0]))
    corrected = phases[:, :, None] * block[None] * phases.conj()[:, None, :]
    return _XX @ corrected @ _XX.conj().T


def _score(block: np.ndarray, theta: np.ndarray) -> np.ndarray:
    r = _rotated(block, np.atleast_1d(theta))
    return 0.5 * np.real(r[:, 0, 0] + r[:, 3, 3]) + np.abs(r[:, 3, 0])


def fidelity_of_block(block: np.ndarray, cfg: BellPipelineConfig = BellPipelineConfig()) -> FidelityReport:
    """Score a 4x4 computational block (see ``bell_fidelity``)."""
    block = np.asarray(block, dtype=complex)
    n = cfg.theta_scan_points
    grid = 2.0 * math.pi * np.arange(n) / n
    values = _score(block, grid)
    k = int(np.argmax(values))
    theta, best = grid[k], values[k]
    step = 2.0 * math.pi / n
    lo, hi = theta - step, theta + step
    if _score(block, lo)[0] < best and _score(block, hi)[0] < best:
        res = minimize_scalar(
            lambda th: -_score(block, th)[0],
            bracket=(lo, theta, hi),
            method="golden",
            tol=cfg.theta_refine_tol,
        )
        if -res.fun > best:
            theta, best = float(res.x), -float(res.fun)
    r = _rotated(block, np.array([theta]))[0]
    p00, p11 = float(np.real(r[0, 0])), float(np.real(r[3, 3]))
    coh = float(abs(r[3, 0]))
    return FidelityReport(
        f_bell=0.5 * (p00 + p11) + coh,
        theta_opt=float(theta % (2.0 * math.pi)),
        leakage=1.0 - float(np.real(np.trace(block))),
        p00=p00,
        p11=p11,
        coh_mag=coh,
    )


def bell_fidelity(rho_final: np.ndarray, cfg: BellPipelineConfig = BellPipelineConfig()) -> FidelityReport:
    """Bell fidelity of the state produced from ``|++>``, maximized over the Z correction.

    The theta maximum is located on a uniform scan and refined by a
    golden-section search inside the neighbouring scan cells.
    """
    block, _ = project_computational(rho_final)
    return fidelity_of_block(block, cfg)


def score_report(
    controls: ControlSet,
    params: SystemParams,
    integrator: IntegratorConfig = IntegratorConfig(),
    bell: BellPipelineConfig = BellPipelineConfig(),
) -> FidelityReport:
    """Evolve ``|++><++|`` under the controls and score the result."""
    block = final_computational_block(plus_plus_state(), params, controls, integrator)
    return fidelity_of_block(block, bell)


def score_controls(
    controls: ControlSet,
    params: SystemParams,
    integrator: IntegratorConfig = IntegratorConfig(),
    bell: BellPipelineConfig = BellPipelineConfig(),
) -> float:
    """Infidelity ``1 - f_bell``; an integration failure scores the worst case 1.0."""
    try:
        return 1.0 - score_report(controls, params, integrator, bell).f_bell
    except IntegrationError as exc:
        log.warning("integration failed for %s: %s", controls, exc)
        return 1.0


@dataclass(frozen=True)
class PhaseDiagnostic:
    phi_01: float
    phi_11: float
    phase_error: float
    return_01: float
    return_11: float

    @property
    def reliable(self) -> bool:
        """False when either state fails to return to the qubit subspace."""
        return self.return_01 >= 0.5 and self.return_11 >= 0.5

    def as_dict(self) -> dict:
        return {
            "phi_01": self.phi_01,
            "phi_11": self.phi_11,
            "phase_error": self.phase_error,
            "return_01": self.return_01,
            "return_11": self.return_11,
            "reliable": self.reliable,
        }


def wrap_phase(phi: float) -> float:
    """Wrap an angle into ``(-pi, pi]``."""
    wrapped = math.remainder(phi, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def cz_phase_diagnostic(
    controls: ControlSet,
    params: SystemParams,
    integrator: IntegratorConfig = IntegratorConfig(),
) -> PhaseDiagnostic:
    """Conditional phase ``phi_11 - 2 phi_01 - pi`` of the decay-free evolution."""
    ideal = params.with_gammas(0.0, 0.0)
    q0, q1 = AtomLevel.Q0, AtomLevel.Q1
    amps = []
    for a in (q0, q1):
        psi = evolve_unitary(basis_state(a, q1), ideal, controls, integrator, final_only=True).final_state
        amps.append(psi[basis_index(a, q1)])
    phi_01, phi_11 = (float(np.angle(z)) for z in amps)
    return PhaseDiagnostic(
        phi_01=phi_01,
        phi_11=phi_11,
        phase_error=wrap_phase(phi_11 - 2.0 * phi_01 - math.pi),
        return_01=float(abs(amps[0])),
        return_11=float(abs(amps[1])),
    )
