"""File formats, provenance stamping and all-or-nothing output directories."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .heatsolve import ThermalStepResponse
from .nid import TimeConstantSpectrum

OUT_ENV = "XTHERM_OUT"


def config_hash(*parts) -> str:
    """sha256 over canonical JSON of ``parts`` (bytes are hashed as-is)."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bytes):
            h.update(p)
        else:
            h.update(json.dumps(p, sort_keys=True, separators=(",", ":")).encode())
    return h.hexdigest()


def provenance(cfg_hash: str, seed: int | None) -> dict:
    return {"config_sha256": cfg_hash, "seed": seed, "tool": f"xtherm {__version__}"}


def provenance_comment(prov: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in prov.items())


def dump_json(obj: dict, prov: dict | None = None) -> str:
    payload = dict(obj)
    if prov is not None:
        payload["provenance"] = prov
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def dump_csv(header, rows, prov: dict | None = None) -> str:
    lines = []
    if prov is not None:
        lines.append(f"# {provenance_comment(prov)}")
    lines.append(",".join(header))
    for r in rows:
        lines.append(",".join(_fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


# ------------------------------------------------------------------ formats

ZTH_HEADER = ("t_s", "zth_K_per_W")
_ZTH_NAME = re.compile(r"zth_([a-z]+)_([a-z]+)")


def zth_filename(heater: str, monitor: str) -> str:
    return f"zth_{heater}_{monitor}.csv"


def zth_csv(resp: ThermalStepResponse, prov: dict | None = None) -> str:
    return dump_csv(ZTH_HEADER, zip(resp.times, resp.zth), prov)


def read_zth_csv(path) -> ThermalStepResponse:
    header, rows = read_csv_rows(path)
    if tuple(h.strip() for h in header) != ZTH_HEADER:
        raise ValueError(f"{path}: expected header {','.join(ZTH_HEADER)}")
    a = np.array(rows, dtype=float).reshape(-1, 2)
    m = _ZTH_NAME.search(Path(path).stem)
    heater, monitor = (m.group(1), m.group(2)) if m else ("x", "x")
    return ThermalStepResponse(a[:, 0], a[:, 1], heater, monitor, 1.0)


SPECTRUM_HEADER = ("zeta", "r_density_K_per_W")


def spectrum_csv(spec: TimeConstantSpectrum, prov: dict | None = None) -> str:
    return dump_csv(SPECTRUM_HEADER, zip(spec.zeta, spec.density), prov)


def waveforms_csv(result, prov: dict | None = None, every: int = 1) -> str:
    nodes = list(result.voltages)
    devs = list(result.temperatures)
    header = ["t_s", *nodes, *(f"T_{d}_K" for d in devs)]
    cols = [result.time, *(result.voltages[n] for n in nodes), *(result.temperatures[d] for d in devs)]
    data = np.column_stack(cols)[::every]
    return dump_csv(header, data.tolist(), prov)


# ------------------------------------------------------------------ output dir


def resolve_out_dir(flag: str | None, config_dir: str | None = None) -> Path:
    """``--out`` flag, then the environment override, then the config, then ``./xtherm_out``."""
    for candidate in (flag, os.environ.get(OUT_ENV), config_dir):
        if candidate:
            return Path(candidate)
    return Path("xtherm_out")


class StagedOutput:
    """Collect files in a scratch directory and publish them only on success.

    >>> with StagedOutput(out) as st:
    ...     st.write("a.json", text)
    """

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.files: dict[str, bytes] = {}

    def write(self, name: str, data: str | bytes) -> Path:
        if Path(name).is_absolute() or ".." in Path(name).parts:
            raise ValueError(f"output name {name!r} escapes the output directory")
        self.files[name] = data.encode() if isinstance(data, str) else data
        return self.out_dir / name

    def __enter__(self) -> "StagedOutput":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            self.files.clear()
            return False
        self.out_dir.mkdir(parents=True, exist_ok=True)
        scratch = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir))
        try:
            for name, data in self.files.items():
                p = scratch / name
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_bytes(data)
            for name in self.files:
                dest = self.out_dir / name
                dest.parent.mkdir(parents=True, exist_ok=True)
                os.replace(scratch / name, dest)
        finally:
            shutil.rmtree(scratch, ignore_errors=True)
        return False
