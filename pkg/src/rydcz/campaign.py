"""The four campaign commands behind the CLI: optimize, evolve, sweep, score."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


from . import records
from .atom import AtomLevel, SystemParams
from .config import RunConfig, serialize_config
from .de import DEState, OptimizeResult, checkpoint_load, checkpoint_save, optimize
from .dynamics import IntegratorConfig, basis_state, density_from_vector, evolve_master, plus_plus_state, populations
from .fidelity import BellPipelineConfig, FidelityReport, cz_phase_diagnostic, score_controls, score_report
from .pulses import ControlSet, ParamTemplate, decode_params
from .robustness import SweepResult, run_sweep

log = logging.getLogger(__name__)

# a pulse of zero length leaves |++> untouched, which scores exactly 1/2
IDENTITY_INFIDELITY = 0.5


class ControlCost:
    """Optimizer cost: infidelity of the decoded control vector (picklable)."""

    def __init__(self, template: ParamTemplate, params: SystemParams,
                 integrator: IntegratorConfig, bell: BellPipelineConfig):
        self.template = template
        self.params = params
        self.integrator = integrator
        self.bell = bell

    def __call__(self, x) -> float:
        x = self.template.clamp(x)
        if x[-1] <= 0.0:
            return IDENTITY_INFIDELITY
        return score_controls(decode_params(x, self.template), self.params, self.integrator, self.bell)


def cost_for(cfg: RunConfig) -> ControlCost:
    return ControlCost(cfg.template(), cfg.system_params(), cfg.integrator_config(), cfg.bell_config())


def _pool(threads: int):
    return ProcessPoolExecutor(max_workers=threads) if threads > 1 else nullcontext(None)


def _write_config(out: Path, cfg: RunConfig) -> Path:
    path = out / "config.toml"
    path.write_text(serialize_config(cfg))
    return path


@dataclass
class OptimizeOutcome:
    controls: ControlSet
    report: FidelityReport
    result: OptimizeResult
    out_dir: Path


def cmd_optimize(cfg: RunConfig, out_dir: Optional[Path] = None, resume: Optional[Path] = None) -> OptimizeOutcome:
    """Run DE on the configured pulse family and write its records.

    Outputs: ``history.jsonl`` (one record per generation), ``checkpoint.json``,
    ``best_controls.json``, ``config.toml`` and ``run.json``.  Resuming
    rewrites the history from the checkpoint first, so the final files equal
    those of an uninterrupted run.
    """
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    de_cfg = cfg.de_config()
    context = cfg.physics_hash()
    config_hash = cfg.config_hash()
    history_path = out / "history.jsonl"
    checkpoint_path = out / "checkpoint.json"
    state: Optional[DEState] = checkpoint_load(resume, de_cfg, context) if resume else None

    history_path.write_text("")
    if state is not None:
        for rec in state.history.records:
            records.append_jsonl(history_path, {**rec.as_dict(), "config_hash": config_hash})
    every = cfg.optimizer.checkpoint_every

    def on_generation(rec, st: DEState):
        records.append_jsonl(history_path, {**rec.as_dict(), "config_hash": config_hash})
        if rec.generation % every == 0:
            checkpoint_save(checkpoint_path, st, de_cfg, context)
        log.info("generation %d: best infidelity %.6g, mean %.6g", rec.generation, rec.best_cost, rec.mean_cost)

    cost = cost_for(cfg)
    with _pool(cfg.run.threads) as pool:
        result = optimize(de_cfg, cost, executor=pool, resume=state, on_generation=on_generation)
    checkpoint_save(checkpoint_path, result.state, de_cfg, context)

    template = cfg.template()
    best_x = template.clamp(result.best.x)
    if best_x[-1] <= 0.0:
        raise ValueError("optimizer ended on a zero-length pulse")
    controls = decode_params(best_x, template)
    report = score_report(controls, cfg.system_params(), cfg.integrator_config(), cfg.bell_config())
    optimizer = {**cfg.optimizer.model_dump(), "seed": cfg.run.seed}
    records.save_controls(
        out / "best_controls.json", controls, cfg.physics.freq_convention,
        extra={"config_hash": config_hash, "vector": best_x.tolist(), "fidelity": report.as_dict(),
               "generation": result.state.generation, "stop_reason": result.reason, "optimizer": optimizer},
    )
    outputs = ["history.jsonl", "checkpoint.json", "best_controls.json", _write_config(out, cfg).name]
    records.write_json(out / "run.json", records.run_record(config_hash, "optimize", outputs, {"optimizer": optimizer}))
    return OptimizeOutcome(controls, report, result, out)


_INITIAL_STATES = {
    "00": (AtomLevel.Q0, AtomLevel.Q0),
    "01": (AtomLevel.Q0, AtomLevel.Q1),
    "10": (AtomLevel.Q1, AtomLevel.Q0),
    "11": (AtomLevel.Q1, AtomLevel.Q1),
}


def _column_units(names) -> dict:
    return {n: ("us" if n == "time_us" else "1") for n in names}


def cmd_evolve(cfg: RunConfig, controls: ControlSet, out_dir: Optional[Path] = None) -> dict[str, Path]:
    """Population trajectories for the four basis states and ``|++>``, one CSV each."""
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, integ = cfg.system_params(), cfg.integrator_config()
    config_hash = cfg.config_hash()
    starts = {label: density_from_vector(basis_state(a, b)) for label, (a, b) in _INITIAL_STATES.items()}
    starts["pp"] = plus_plus_state()
    written = {}
    for label, rho0 in starts.items():
        rep = populations(evolve_master(rho0, params, controls, integ))
        cols = rep.columns()
        header = records.header_block(
            config_hash, cfg.physics.freq_convention, _column_units(cols),
            extra=[f"initial_state: |{label}>" if label != "pp" else "initial_state: |++>",
                   "basis order: index = 5*level_c + level_t, levels 0,1,D,p,r"],
        )
        path = out / f"traj_{label}.csv"
        records.write_table(path, cols, header)
        written[label] = path
    outputs = [p.name for p in written.values()] + [_write_config(out, cfg).name]
    records.write_json(out / "run.json", records.run_record(config_hash, "evolve", outputs))
    return written


def cmd_sweep(cfg: RunConfig, controls: ControlSet, out_dir: Optional[Path] = None) -> SweepResult:
    """Robustness grid over temperature and amplitude offset; CSV matrix plus JSON sidecar."""
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.sweep_grid()
    config_hash = cfg.config_hash()
    with _pool(cfg.run.threads) as pool:
        result = run_sweep(controls, cfg.system_params(), grid, cfg.integrator_config(), cfg.bell_config(), pool)
    rob = cfg.robustness
    header = records.header_block(
        config_hash, cfg.physics.freq_convention,
        {"temperature": "uK", "offset": "fraction of amplitude", "cells": "f_bell"},
        extra=[f"baseline_f_bell: {result.baseline!r}"],
    )
    records.write_sweep_csv(out / "sweep.csv", rob.temperatures_uk, rob.offsets, result.f_bell, header)
    sidecar = {
        "config_hash": config_hash,
        "software_version": records.__version__,
        "freq_convention": cfg.physics.freq_convention,
        "baseline_f_bell": result.baseline,
        "temperatures_uk": list(rob.temperatures_uk),
        "offsets": list(rob.offsets),
        "wavelength_p_nm": rob.wavelength_p_nm,
        "wavelength_r_nm": rob.wavelength_r_nm,
        "mass_kg": rob.mass_kg,
        "doppler_sign": rob.doppler_sign,
        "doppler_geometry": "copropagating, both atoms at v_rms",
        "missing_cells": [{"temperature_index": i, "offset_index": j, "error": e} for i, j, e in result.missing],
    }
    records.write_json(out / "sweep.json", sidecar)
    outputs = ["sweep.csv", "sweep.json", _write_config(out, cfg).name]
    records.write_json(out / "run.json", records.run_record(config_hash, "sweep", outputs))
    return result


def cmd_score(cfg: RunConfig, controls: ControlSet) -> dict:
    """Fidelity report and CZ phase diagnostic as a JSON-ready dict."""
    params, integ = cfg.system_params(), cfg.integrator_config()
    report = score_report(controls, params, integ, cfg.bell_config())
    phase = cz_phase_diagnostic(controls, params, integ)
    return {
        "config_hash": cfg.config_hash(),
        **report.as_dict(),
        "infidelity": report.infidelity,
        "cz_phase": phase.as_dict(),
    }
