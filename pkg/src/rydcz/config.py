"""Run configuration: TOML schema, validation and conversion to library objects.

User-facing frequencies are given in "MHz" and converted once, here, to
internal rad/us according to ``physics.freq_convention``.  Times are in us,
temperatures in uK, wavelengths in nm.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from typing import Literal, Optional

import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .atom import DEFAULT_BRANCHING, AtomLevel, SystemParams, to_angular
from .de import CROSSOVER_MODES, DEConfig
from .dynamics import METHODS, IntegratorConfig
from .fidelity import BellPipelineConfig
from .pulses import Bounds, ParamTemplate
from .robustness import CESIUM_MASS, MAX_OFFSET, SweepGrid, ThermalSpec


class ConfigError(ValueError):
    """Invalid configuration text; the message names the key and line."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


def _channel_name(target: AtomLevel, source: AtomLevel) -> str:
    return f"{target.label}<-{source.label}"


_CHANNELS = {_channel_name(j, k): (j, k) for (j, k) in DEFAULT_BRANCHING}


class PhysicsSection(_Section):
    b_rr_mhz: float = 500.0
    lifetime_p_us: float = Field(0.155, gt=0)
    lifetime_r_us: float = Field(540.0, gt=0)
    freq_convention: Literal["cyclic", "angular"] = "cyclic"
    branching: dict[str, float] = Field(
        default_factory=lambda: {_channel_name(j, k): c for (j, k), c in DEFAULT_BRANCHING.items()}
    )

    @field_validator("b_rr_mhz")
    @classmethod
    def _nonnegative(cls, v):
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError("must be finite and >= 0")
        return v

    @field_validator("branching")
    @classmethod
    def _known_channels(cls, v):
        unknown = sorted(set(v) - set(_CHANNELS))
        if unknown:
            raise ValueError(f"unknown decay channel(s) {unknown}; expected keys like {sorted(_CHANNELS)}")
        return v


class PulseSection(_Section):
    shape: Literal["gaussian", "segmented"]
    r_amp_mhz: list[float] = Field(min_length=2, max_length=2)
    r_t_us: list[float] = Field(min_length=2, max_length=2)
    delta_mhz: float = 0.0
    tau_ratio: float = Field(0.165, gt=0, lt=0.5)
    symmetric: bool = True
    pin_ends_to_zero: bool = True

    @field_validator("r_amp_mhz", "r_t_us")
    @classmethod
    def _range(cls, v):
        lo, hi = v
        if not (0 <= lo <= hi and math.isfinite(hi)):
            raise ValueError("expected [lo, hi] with 0 <= lo <= hi")
        return v


class OptimizerSection(_Section):
    population_size: int = Field(32, ge=4)
    mu: float = Field(0.8, ge=0, le=2)
    xi: float = Field(0.9, gt=0, lt=1)
    max_generations: int = Field(300, ge=0)
    target_cost: float = 1e-4
    crossover: Literal[CROSSOVER_MODES] = "binomial"  # type: ignore[valid-type]
    checkpoint_every: int = Field(1, ge=1)


class IntegratorSection(_Section):
    rel_tol: float = Field(1e-8, gt=0)
    abs_tol: float = Field(1e-10, gt=0)
    max_step_us: float = Field(math.inf, gt=0)
    n_output_samples: int = Field(501, ge=2)
    method: Literal[METHODS] = "dop853"  # type: ignore[valid-type]
    max_steps: int = Field(5_000_000, ge=1)


class FidelitySection(_Section):
    theta_scan_points: int = Field(256, ge=8)
    theta_refine_tol: float = Field(1e-10, gt=0)


class RobustnessSection(_Section):
    temperatures_uk: list[float] = Field(default_factory=lambda: [0.0, 25.0, 50.0, 75.0, 100.0])
    offsets: list[float] = Field(default_factory=lambda: [-0.1, -0.05, 0.0, 0.05, 0.1])
    mass_kg: float = Field(CESIUM_MASS, gt=0)
    wavelength_p_nm: float = Field(459.3, gt=0)
    wavelength_r_nm: float = Field(1038.0, gt=0)
    doppler_sign: Literal[1, -1] = 1

    @field_validator("temperatures_uk")
    @classmethod
    def _temps(cls, v):
        if not v or any(not (t >= 0 and math.isfinite(t)) for t in v):
            raise ValueError("temperatures must be a non-empty list of values >= 0")
        return v

    @field_validator("offsets")
    @classmethod
    def _offsets(cls, v):
        if not v or any(not abs(d) <= MAX_OFFSET for d in v):
            raise ValueError(f"offsets must be a non-empty list with |offset| <= {MAX_OFFSET}")
        return v


class RunSection(_Section):
    seed: int = Field(0, ge=0, lt=2**64)
    out_dir: str = "out"
    threads: int = Field(1, ge=1)


class RunConfig(_Section):
    """Complete, validated run configuration (user units)."""

    pulse: PulseSection
    physics: PhysicsSection = PhysicsSection()
    optimizer: OptimizerSection = OptimizerSection()
    integrator: IntegratorSection = IntegratorSection()
    fidelity: FidelitySection = FidelitySection()
    robustness: RobustnessSection = RobustnessSection()
    run: RunSection = RunSection()

    @model_validator(mode="after")
    def _branching_sums(self):
        try:
            self.system_params()
        except ValueError as exc:
            raise ValueError(f"physics: {exc}") from None
        return self

    # conversions to library objects -------------------------------------

    def angular(self, mhz: float) -> float:
        return to_angular(mhz, self.physics.freq_convention)

    def system_params(self) -> SystemParams:
        ph = self.physics
        branching = {k: 0.0 for k in DEFAULT_BRANCHING}
        branching.update({_CHANNELS[name]: c for name, c in ph.branching.items()})
        return SystemParams(
            b_rr=self.angular(ph.b_rr_mhz),
            gamma_p=1.0 / ph.lifetime_p_us,
            gamma_r=1.0 / ph.lifetime_r_us,
            branching=branching,
            freq_convention=ph.freq_convention,
        )

    def template(self) -> ParamTemplate:
        p = self.pulse
        lo, hi = p.r_amp_mhz
        return ParamTemplate(
            kind=p.shape,
            bounds=Bounds((self.angular(lo), self.angular(hi)), tuple(p.r_t_us)),
            delta=self.angular(p.delta_mhz),
            tau_ratio=p.tau_ratio,
            symmetric=p.symmetric,
            pin_ends_to_zero=p.pin_ends_to_zero,
        )

    def de_config(self) -> DEConfig:
        o = self.optimizer
        return DEConfig(
            bounds=tuple(map(tuple, self.template().vector_bounds())),
            population_size=o.population_size,
            mu=o.mu,
            xi=o.xi,
            max_generations=o.max_generations,
            target_cost=o.target_cost,
            seed=self.run.seed,
            crossover=o.crossover,
        )

    def integrator_config(self) -> IntegratorConfig:
        i = self.integrator
        return IntegratorConfig(i.rel_tol, i.abs_tol, i.max_step_us, i.n_output_samples, i.method, i.max_steps)

    def bell_config(self) -> BellPipelineConfig:
        return BellPipelineConfig(self.fidelity.theta_scan_points, self.fidelity.theta_refine_tol)

    def sweep_grid(self) -> SweepGrid:
        r = self.robustness
        thermal = ThermalSpec(
            mass=r.mass_kg,
            k_p=2.0 * math.pi / (r.wavelength_p_nm * 1e-9),
            k_r=2.0 * math.pi / (r.wavelength_r_nm * 1e-9),
            sign=r.doppler_sign,
        )
        return SweepGrid(tuple(t * 1e-6 for t in r.temperatures_uk), tuple(r.offsets), thermal)

    def physics_hash(self) -> str:
        """Hash of everything the cost function depends on (not the optimizer)."""
        blob = self.model_dump(mode="json", include={"physics", "pulse", "integrator", "fidelity"})
        del blob["integrator"]["n_output_samples"]
        return _digest(blob)

    def config_hash(self) -> str:
        """Hash of the configuration, leaving out where and how wide the run executes."""
        blob = self.model_dump(mode="json")
        del blob["run"]["threads"], blob["run"]["out_dir"]
        return _digest(blob)

    def with_overrides(self, seed: Optional[int] = None, threads: Optional[int] = None,
                       out_dir: Optional[str] = None) -> "RunConfig":
        run = self.run.model_dump()
        for key, value in (("seed", seed), ("threads", threads), ("out_dir", out_dir)):
            if value is not None:
                run[key] = value
        try:
            return self.model_copy(update={"run": RunSection(**run)})
        except ValidationError as exc:
            raise ConfigError(_format_errors(exc, "")) from None


def _digest(blob) -> str:
    text = json.dumps(blob, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _line_of(text: str, loc: tuple) -> Optional[int]:
    """Best-effort line number of ``section.key`` in the TOML source."""
    section = None
    keys = [str(part) for part in loc if not isinstance(part, int)]
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        header = re.fullmatch(r"\[([^\[\]]+)\]", line)
        if header:
            section = header.group(1).strip()
            if len(keys) == 1 and section == keys[0]:
                return n
            continue
        m = re.match(r'"?([^"=\s]+)"?\s*=', line)
        if not m or not keys:
            continue
        key = m.group(1)
        if len(keys) >= 2 and section == ".".join(keys[:-1]) and key == keys[-1]:
            return n
        if len(keys) >= 2 and section == keys[0] and key == keys[1]:
            return n
    return None


def _format_errors(exc: ValidationError, text: str) -> str:
    lines = []
    for err in exc.errors():
        loc = tuple(err["loc"])
        name = ".".join(str(p) for p in loc) or "<root>"
        where = _line_of(text, loc) if text else None
        prefix = f"line {where}: " if where else ""
        if err["type"] == "extra_forbidden":
            lines.append(f"{prefix}unknown key '{name}'")
        elif err["type"] == "missing":
            lines.append(f"missing required key '{name}'")
        else:
            lines.append(f"{prefix}{name}: {err['msg']}")
    return "; ".join(lines)


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a fully defaulted, validated RunConfig."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, text)) from None


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def serialize_config(cfg: RunConfig) -> str:
    """TOML text that parses back to an equal RunConfig."""
    return tomli_w.dumps(cfg.model_dump(mode="python"))
