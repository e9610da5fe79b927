"""Two-atom, five-level model: basis, Hamiltonian and collapse operators.

Each atom carries the levels |0>, |1>, |D>, |p>, |r>.  The two-atom basis is
ordered control-major, ``index = 5 * level_c + level_t``.  Internally all
frequencies are angular (rad/us), times are in us and decay constants are
plain rates (1/us).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping

import numpy as np

N_LEVELS = 5
DIM = N_LEVELS * N_LEVELS


class AtomLevel(IntEnum):
    Q0 = 0
    Q1 = 1
    D = 2
    P = 3
    R = 4

    @property
    def label(self) -> str:
        return LEVEL_LABELS[self]


LEVEL_LABELS = {
    AtomLevel.Q0: "0",
    AtomLevel.Q1: "1",
    AtomLevel.D: "D",
    AtomLevel.P: "p",
    AtomLevel.R: "r",
}

# (target, source) -> branching ratio
DEFAULT_BRANCHING: dict[tuple[AtomLevel, AtomLevel], float] = {
    (AtomLevel.Q0, AtomLevel.P): 1 / 16,
    (AtomLevel.Q1, AtomLevel.P): 1 / 16,
    (AtomLevel.D, AtomLevel.P): 7 / 8,
    (AtomLevel.Q0, AtomLevel.R): 1 / 32,
    (AtomLevel.Q1, AtomLevel.R): 1 / 32,
    (AtomLevel.P, AtomLevel.R): 1 / 2,
    (AtomLevel.D, AtomLevel.R): 7 / 16,
}

_ALLOWED_TARGETS = {
    AtomLevel.P: (AtomLevel.Q0, AtomLevel.Q1, AtomLevel.D),
    AtomLevel.R: (AtomLevel.Q0, AtomLevel.Q1, AtomLevel.D, AtomLevel.P),
}

FREQ_CONVENTIONS = ("cyclic", "angular")


def to_angular(value_mhz: float, convention: str) -> float:
    """Convert a user-facing "MHz" value to internal rad/us."""
    if convention == "cyclic":
        return 2.0 * math.pi * value_mhz
    if convention == "angular":
        return float(value_mhz)
    raise ValueError(f"unknown frequency convention {convention!r}")


def from_angular(value: float, convention: str) -> float:
    if convention == "cyclic":
        return value / (2.0 * math.pi)
    if convention == "angular":
        return float(value)
    raise ValueError(f"unknown frequency convention {convention!r}")


def basis_index(a: AtomLevel, b: AtomLevel) -> int:
    """Index of ``|a>_c |b>_t`` in the 25-dimensional two-atom basis."""
    return N_LEVELS * int(AtomLevel(a)) + int(AtomLevel(b))


def basis_label(index: int) -> str:
    a, b = divmod(index, N_LEVELS)
    return LEVEL_LABELS[AtomLevel(a)] + LEVEL_LABELS[AtomLevel(b)]


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the two-atom system in internal units.

    Parameters
    ----------
    b_rr : float
        Rydberg-Rydberg interaction, rad/us.
    gamma_p, gamma_r : float
        Decay rates of |p> and |r>, 1/us.
    branching : mapping
        ``(target, source) -> c_jk``; each source must sum to one.
    freq_convention : {"cyclic", "angular"}
        How user-facing "MHz" values were turned into rad/us.
    """

    b_rr: float = 2.0 * math.pi * 500.0
    gamma_p: float = 1.0 / 0.155
    gamma_r: float = 1.0 / 540.0
    branching: Mapping[tuple[AtomLevel, AtomLevel], float] = field(
        default_factory=lambda: dict(DEFAULT_BRANCHING)
    )
    freq_convention: str = "cyclic"

    def __post_init__(self):
        for name in ("b_rr", "gamma_p", "gamma_r"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.freq_convention not in FREQ_CONVENTIONS:
            raise ValueError(f"unknown frequency convention {self.freq_convention!r}")
        branching = {
            (AtomLevel(j), AtomLevel(k)): float(c) for (j, k), c in self.branching.items()
        }
        for (j, k), c in branching.items():
            if k not in _ALLOWED_TARGETS or j not in _ALLOWED_TARGETS[k]:
                raise ValueError(f"decay channel {j.name}<-{k.name} is not part of the model")
            if c < 0:
                raise ValueError(f"branching ratio {j.name}<-{k.name} is negative")
        for k in _ALLOWED_TARGETS:
            total = sum(c for (_, src), c in branching.items() if src == k)
            if abs(total - 1.0) > 1e-12:
                raise ValueError(
                    f"branching ratios out of level {k.name} sum to {total!r}, expected 1"
                )
        object.__setattr__(self, "branching", branching)

    def rate(self, source: AtomLevel) -> float:
        return self.gamma_p if source == AtomLevel.P else self.gamma_r

    def channels(self) -> list[tuple[AtomLevel, AtomLevel, float]]:
        """Decay channels ``(target, source, c_jk * gamma_k)`` in a fixed order."""
        out = []
        for k in (AtomLevel.P, AtomLevel.R):
            for j in _ALLOWED_TARGETS[k]:
                c = self.branching.get((j, k), 0.0)
                out.append((j, k, c * self.rate(k)))
        return out

    def with_gammas(self, gamma_p: float, gamma_r: float) -> "SystemParams":
        return SystemParams(self.b_rr, gamma_p, gamma_r, dict(self.branching), self.freq_convention)


def single_atom_hamiltonian(omega_p: float, omega_r: float, delta_p: float, delta: float) -> np.ndarray:
    h = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    h[AtomLevel.P, AtomLevel.P] = delta_p
    h[AtomLevel.R, AtomLevel.R] = delta
    h[AtomLevel.P, AtomLevel.Q1] = omega_p / 2
    h[AtomLevel.Q1, AtomLevel.P] = omega_p / 2
    h[AtomLevel.R, AtomLevel.P] = omega_r / 2
    h[AtomLevel.P, AtomLevel.R] = omega_r / 2
    return h


def build_hamiltonian(
    params: SystemParams,
    omega_p: float,
    omega_r: float,
    delta_p: float,
    delta: float = 0.0,
) -> np.ndarray:
    """Two-atom Hamiltonian at one instant, in rad/us.

    ``H = h_c (x) I + I (x) h_t + b_rr |rr><rr|`` with identical single-atom
    terms for both atoms (global driving).
    """
    values = (omega_p, omega_r, delta_p, delta)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"control values must be finite, got {values}")
    h = single_atom_hamiltonian(omega_p, omega_r, delta_p, delta)
    eye = np.eye(N_LEVELS)
    H = np.kron(h, eye) + np.kron(eye, h)
    rr = basis_index(AtomLevel.R, AtomLevel.R)
    H[rr, rr] += params.b_rr
    return H


def build_collapse_ops(params: SystemParams) -> list[np.ndarray]:
    """Fourteen jump operators ``sqrt(c_jk gamma_k) |j><k|``, control atom first."""
    eye = np.eye(N_LEVELS)
    ops = []
    for atom in (0, 1):
        for j, k, rate in params.channels():
            local = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
            local[j, k] = math.sqrt(rate)
            ops.append(np.kron(local, eye) if atom == 0 else np.kron(eye, local))
    return ops
