"""Pulse parameterizations and the optimizer-vector encoding.

Only the |1>-|p> drive is shaped in time; the |p>-|r> drive, the
intermediate detuning and the two-photon detuning are constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.special import erf

N_SEGMENTS = 12
ERF_SHARPNESS = 5.0


def _check_time(t, t_gate: float) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(arr > t_gate) or not np.all(np.isfinite(arr)):
        raise ValueError(f"time outside the pulse window [0, {t_gate}]")
    return arr


@dataclass(frozen=True)
class GaussianPulse:
    """Offset Gaussian that vanishes at both ends of the gate window."""

    omega_max: float
    t_gate: float
    tau_ratio: float = 0.165

    def __post_init__(self):
        if not (self.t_gate > 0 and math.isfinite(self.t_gate)):
            raise ValueError(f"t_gate must be positive, got {self.t_gate}")
        if not 0 < self.tau_ratio < 0.5:
            raise ValueError(f"tau_ratio must lie in (0, 0.5), got {self.tau_ratio}")
        if not (self.omega_max >= 0 and math.isfinite(self.omega_max)):
            raise ValueError(f"omega_max must be finite and >= 0, got {self.omega_max}")

    @property
    def offset(self) -> float:
        return math.exp(-((0.5 / self.tau_ratio) ** 2))

    def scaled(self, factor: float) -> "GaussianPulse":
        return replace(self, omega_max=self.omega_max * factor)

    def breakpoints(self) -> tuple[float, ...]:
        return ()


@dataclass(frozen=True)
class SegmentedPulse:
    """Twelve equal-length segments joined by error-function transitions.

    Plateau values sit at the segment centres.  Between neighbouring centres
    the envelope follows ``(A_k + A_k1)/2 + (A_k1 - A_k)/2 erf(5 (t - m)/L)``
    with ``m`` the midpoint and ``L`` the distance between the two knots.
    With ``pin_ends_to_zero`` the pulse edges are extra zero-valued knots at
    ``t = 0`` and ``t = t_gate``; otherwise the first and last plateaus are
    held flat out to the edges.
    """

    amps: tuple[float, ...]
    t_gate: float
    symmetric: bool = True
    pin_ends_to_zero: bool = True

    def __post_init__(self):
        amps = tuple(float(a) for a in self.amps)
        object.__setattr__(self, "amps", amps)
        if len(amps) != N_SEGMENTS:
            raise ValueError(f"expected {N_SEGMENTS} amplitudes, got {len(amps)}")
        if not all(math.isfinite(a) for a in amps):
            raise ValueError("segment amplitudes must be finite")
        if not (self.t_gate > 0 and math.isfinite(self.t_gate)):
            raise ValueError(f"t_gate must be positive, got {self.t_gate}")
        if self.symmetric and any(amps[i] != amps[N_SEGMENTS - 1 - i] for i in range(N_SEGMENTS)):
            raise ValueError("symmetric pulse needs mirror-symmetric amplitudes")

    @classmethod
    def from_half(cls, half, t_gate: float, pin_ends_to_zero: bool = True) -> "SegmentedPulse":
        half = [float(a) for a in half]
        if len(half) != N_SEGMENTS // 2:
            raise ValueError(f"expected {N_SEGMENTS // 2} amplitudes, got {len(half)}")
        return cls(tuple(half + half[::-1]), t_gate, True, pin_ends_to_zero)

    @property
    def segment_duration(self) -> float:
        return self.t_gate / N_SEGMENTS

    def knots(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Knot times, knot values and per-interval erf sharpness (1/us)."""
        dt = self.segment_duration
        centres = [(k + 0.5) * dt for k in range(N_SEGMENTS)]
        # mirror the right half so symmetric pulses are symmetric to rounding
        for k in range(N_SEGMENTS // 2, N_SEGMENTS):
            centres[k] = self.t_gate - centres[N_SEGMENTS - 1 - k]
        values = list(self.amps)
        if self.pin_ends_to_zero:
            times = [0.0] + centres + [self.t_gate]
            values = [0.0] + values + [0.0]
        else:
            times = [0.0] + centres + [self.t_gate]
            values = [values[0]] + values + [values[-1]]
        times = np.array(times)
        lengths = np.diff(times)
        return times, np.array(values), ERF_SHARPNESS / lengths

    def scaled(self, factor: float) -> "SegmentedPulse":
        return replace(self, amps=tuple(a * factor for a in self.amps))

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(self.knots()[0][1:-1])


PulseShape = Union[GaussianPulse, SegmentedPulse]


def gaussian_envelope(t, p: GaussianPulse):
    """Omega_p(t) for the offset Gaussian; scalar in, scalar out."""
    arr = _check_time(t, p.t_gate)
    tc = 0.5 * p.t_gate
    tau = p.tau_ratio * p.t_gate
    a = p.offset
    value = p.omega_max * (np.exp(-((arr - tc) ** 2) / tau**2) - a) / (1.0 - a)
    value = np.maximum(value, 0.0)
    return float(value) if value.ndim == 0 else value


def segmented_envelope(t, p: SegmentedPulse):
    """Omega_p(t) for the erf-joined segmented pulse."""
    arr = _check_time(t, p.t_gate)
    times, values, sharp = p.knots()
    k = np.clip(np.searchsorted(times, arr, side="right") - 1, 0, len(times) - 2)
    lo, hi = values[k], values[k + 1]
    mid = 0.5 * (times[k] + times[k + 1])
    value = 0.5 * (hi + lo) + 0.5 * (hi - lo) * erf(sharp[k] * (arr - mid))
    return float(value) if value.ndim == 0 else value


def envelope(t, shape: PulseShape):
    if isinstance(shape, GaussianPulse):
        return gaussian_envelope(t, shape)
    return segmented_envelope(t, shape)


@dataclass(frozen=True)
class ControlSet:
    """Complete drive: shaped Omega_p(t) plus constant Omega_r, Delta_p, Delta.

    ``delta`` is the two-photon detuning; the |p>-|r> detuning is derived as
    ``delta - delta_p`` and never stored.
    """

    omega_p_shape: PulseShape
    omega_r: float
    delta_p: float
    delta: float = 0.0

    def __post_init__(self):
        for name in ("omega_r", "delta_p", "delta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def t_gate(self) -> float:
        return self.omega_p_shape.t_gate

    @property
    def delta_r(self) -> float:
        return self.delta - self.delta_p

    def omega_p(self, t):
        return envelope(t, self.omega_p_shape)


@dataclass(frozen=True)
class Bounds:
    """Optimization ranges: amplitudes/detunings (rad/us) and gate time (us)."""

    r_amp: tuple[float, float]
    r_t: tuple[float, float]

    def __post_init__(self):
        for name in ("r_amp", "r_t"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (0 <= lo <= hi) or not math.isfinite(hi):
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")
            object.__setattr__(self, name, (lo, hi))


@dataclass(frozen=True)
class ParamTemplate:
    """Everything needed to map an optimizer vector onto a ControlSet."""

    kind: str
    bounds: Bounds
    delta: float = 0.0
    tau_ratio: float = 0.165
    symmetric: bool = True
    pin_ends_to_zero: bool = True

    def __post_init__(self):
        if self.kind not in ("gaussian", "segmented"):
            raise ValueError(f"unknown pulse shape {self.kind!r}")

    @property
    def n_amps(self) -> int:
        if self.kind == "gaussian":
            return 1
        return N_SEGMENTS // 2 if self.symmetric else N_SEGMENTS

    @property
    def dim(self) -> int:
        return self.n_amps + 3

    def vector_bounds(self) -> np.ndarray:
        """``(dim, 2)`` array of per-component bounds."""
        rows = [self.bounds.r_amp] * (self.n_amps + 2) + [self.bounds.r_t]
        return np.array(rows, dtype=float)

    def clamp(self, x) -> np.ndarray:
        b = self.vector_bounds()
        return np.clip(np.asarray(x, dtype=float), b[:, 0], b[:, 1])


def decode_params(x, template: ParamTemplate) -> ControlSet:
    """Optimizer vector -> ControlSet, clamping each component into bounds.

    Layout: amplitudes (1 Gaussian peak, 6 or 12 segment values), then
    ``omega_r``, ``delta_p``, ``t_gate``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (template.dim,):
        raise ValueError(f"expected a vector of length {template.dim}, got shape {x.shape}")
    x = template.clamp(x)
    n = template.n_amps
    omega_r, delta_p, t_gate = (float(v) for v in x[n:])
    if template.kind == "gaussian":
        shape: PulseShape = GaussianPulse(float(x[0]), t_gate, template.tau_ratio)
    elif template.symmetric:
        shape = SegmentedPulse.from_half(x[:n], t_gate, template.pin_ends_to_zero)
    else:
        shape = SegmentedPulse(tuple(x[:n]), t_gate, False, template.pin_ends_to_zero)
    return ControlSet(shape, omega_r, delta_p, template.delta)


def encode_params(c: ControlSet) -> np.ndarray:
    shape = c.omega_p_shape
    if isinstance(shape, GaussianPulse):
        amps = [shape.omega_max]
    elif shape.symmetric:
        amps = list(shape.amps[: N_SEGMENTS // 2])
    else:
        amps = list(shape.amps)
    return np.array(amps + [c.omega_r, c.delta_p, c.t_gate], dtype=float)
