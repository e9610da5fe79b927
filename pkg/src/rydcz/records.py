"""File formats: control sets (JSON), trajectories and sweeps (CSV), history (JSONL).

Floats are written with 17 significant digits (``repr``-exact), so files
produced from the same config and seed are byte-identical.  Every CSV
starts with a ``#`` comment block naming the producing config hash, the
software version and the units.
"""

from __future__ import annotations

import json
import math
import os
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .atom import from_angular
from .pulses import N_SEGMENTS, ControlSet, GaussianPulse, SegmentedPulse

CONTROLS_FORMAT = "rydcz-controls"
CONTROLS_VERSION = 1


class RecordError(ValueError):
    """A data file is missing, malformed or inconsistent."""


def _fmt(x: float) -> str:
    return repr(float(x))


# control sets ---------------------------------------------------------------


def controls_to_dict(c: ControlSet, freq_convention: str = "cyclic") -> dict:
    """JSON-ready record in internal units (rad/us, us), plus MHz values for reading."""
    shape = c.omega_p_shape
    out: dict = {"format": CONTROLS_FORMAT, "version": CONTROLS_VERSION, "units": "rad/us, us"}
    if isinstance(shape, GaussianPulse):
        out["shape"] = {"kind": "gaussian", "omega_max": shape.omega_max, "t_gate": shape.t_gate,
                        "tau_ratio": shape.tau_ratio}
        amps = [shape.omega_max]
    else:
        out["shape"] = {"kind": "segmented", "amps": list(shape.amps), "t_gate": shape.t_gate,
                        "symmetric": shape.symmetric, "pin_ends_to_zero": shape.pin_ends_to_zero}
        amps = list(shape.amps)
    out["omega_r"] = c.omega_r
    out["delta_p"] = c.delta_p
    out["delta"] = c.delta
    out["mhz"] = {
        "freq_convention": freq_convention,
        "omega_p": [from_angular(a, freq_convention) for a in amps],
        "omega_r": from_angular(c.omega_r, freq_convention),
        "delta_p": from_angular(c.delta_p, freq_convention),
        "delta": from_angular(c.delta, freq_convention),
    }
    return out


def controls_from_dict(data: Mapping) -> ControlSet:
    try:
        if data.get("format") != CONTROLS_FORMAT:
            raise RecordError("not a controls record")
        if data.get("version") != CONTROLS_VERSION:
            raise RecordError(f"unsupported controls version {data.get('version')!r}")
        shape = data["shape"]
        if shape["kind"] == "gaussian":
            pulse = GaussianPulse(float(shape["omega_max"]), float(shape["t_gate"]), float(shape["tau_ratio"]))
        elif shape["kind"] == "segmented":
            amps = [float(a) for a in shape["amps"]]
            if len(amps) != N_SEGMENTS:
                raise RecordError(f"segmented pulse needs {N_SEGMENTS} amplitudes")
            pulse = SegmentedPulse(tuple(amps), float(shape["t_gate"]), bool(shape["symmetric"]),
                                   bool(shape["pin_ends_to_zero"]))
        else:
            raise RecordError(f"unknown pulse kind {shape['kind']!r}")
        return ControlSet(pulse, float(data["omega_r"]), float(data["delta_p"]), float(data["delta"]))
    except RecordError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise RecordError(f"malformed controls record: {exc}") from None


def save_controls(path, c: ControlSet, freq_convention: str = "cyclic", extra: Mapping | None = None) -> None:
    data = controls_to_dict(c, freq_convention)
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def load_controls(path) -> ControlSet:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RecordError(f"cannot read controls file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise RecordError(f"{path}: expected a JSON object")
    return controls_from_dict(data)


# CSV -------------------------------------------------------------------------


def header_block(config_hash: str, convention: str, column_units: Mapping[str, str],
                 extra: Iterable[str] = ()) -> list[str]:
    lines = [
        f"rydcz {__version__}",
        f"config_hash: {config_hash}",
        f"freq_convention: {convention} (internal frequencies rad/us, times us)",
    ]
    lines += list(extra)
    lines.append("columns: " + ", ".join(f"{k} [{u}]" for k, u in column_units.items()))
    return ["# " + line for line in lines]


def write_table(path, columns: Mapping[str, np.ndarray], header: Sequence[str]) -> None:
    """Columns of equal length -> CSV with a comment header and a name row."""
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float) for n in names]
    n_rows = len(data[0]) if data else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header:
            fh.write(line + "\n")
        fh.write(",".join(names) + "\n")
        for r in range(n_rows):
            fh.write(",".join(_fmt(col[r]) for col in data) + "\n")


def read_table(path) -> tuple[list[str], np.ndarray, list[str]]:
    """Inverse of ``write_table``: (column names, data rows, comment lines)."""
    comments, rows, names = [], [], None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                comments.append(line)
            elif names is None:
                names = line.split(",")
            elif line:
                rows.append([float(v) for v in line.split(",")])
    return names or [], np.array(rows), comments


def write_sweep_csv(path, temperatures_uk: Sequence[float], offsets: Sequence[float],
                    f_bell: np.ndarray, header: Sequence[str]) -> None:
    """Matrix layout: first row holds the offsets, first column the temperatures."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header:
            fh.write(line + "\n")
        fh.write("temperature_uK\\offset," + ",".join(_fmt(d) for d in offsets) + "\n")
        for t, row in zip(temperatures_uk, f_bell):
            fh.write(_fmt(t) + "," + ",".join("nan" if math.isnan(v) else _fmt(v) for v in row) + "\n")


# JSON / JSONL ----------------------------------------------------------------


def append_jsonl(path, record: Mapping) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path, data: Mapping) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def run_record(config_hash: str, command: str, outputs: Sequence[str], extra: Mapping | None = None) -> dict:
    """Provenance record written next to every set of outputs."""
    record = {
        "config_hash": config_hash,
        "command": command,
        "software_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": sorted(os.fspath(o) for o in outputs),
    }
    if extra:
        record.update(extra)
    return record
