"""Plain-text output files: field snapshots, front logs, manifests."""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .analysis import FrontLog
from .domain import Grid
from .physics import SimulationState

__all__ = [
    "write_snapshot",
    "read_snapshot",
    "FrontLogWriter",
    "read_front_log",
    "write_manifest",
    "read_manifest",
]

_FIELD_FMT = "%.17g"
_FRONT_FMT = "%.15g"


def write_snapshot(path, state: SimulationState, grid: Grid, extra: dict | None = None):
    """Comma-separated node table with a commented header.

    Header lines give the time, the grid (dim, N, h, origin) and, in 2D,
    the shape of the row-major flattened grid.
    """
    cols = {"theta": state.theta, "c_a": state.c_a, "n": state.n}
    cols.update(extra or {})
    x = grid.coords()
    axes = ["x", "y", "z"][: grid.dim]
    with open(path, "w") as fh:
        fh.write(f"# t = {state.t!r}\n")
        fh.write(f"# dim = {grid.dim}\n# N = {grid.N}\n# h = {grid.h!r}\n")
        fh.write("# origin = " + ",".join(repr(float(o)) for o in grid.origin) + "\n")
        if grid.dim > 1:
            fh.write("# shape = " + ",".join(str(s) for s in grid.shape) + "\n")
        fh.write(",".join(axes + list(cols)) + "\n")
        data = np.column_stack([x] + [np.asarray(v, dtype=float).ravel() for v in cols.values()])
        np.savetxt(fh, data, fmt=_FIELD_FMT, delimiter=",")


def read_snapshot(path):
    """Returns ``(meta, columns)``: header values and a dict of column arrays."""
    meta = {}
    with open(path) as fh:
        line = fh.readline()
        while line.startswith("#"):
            key, _, val = line[1:].partition("=")
            meta[key.strip()] = val.strip()
            line = fh.readline()
        names = line.strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    meta = {
        "t": float(meta["t"]),
        "dim": int(meta["dim"]),
        "N": int(meta["N"]),
        "h": float(meta["h"]),
        "origin": tuple(float(v) for v in meta["origin"].split(",")),
        **({"shape": tuple(int(v) for v in meta["shape"].split(","))} if "shape" in meta else {}),
    }
    if data.shape[1] != len(names):
        raise ValueError(f"{path}: {len(names)} columns in header, {data.shape[1]} in data")
    return meta, {n: data[:, i].copy() for i, n in enumerate(names)}


class FrontLogWriter:
    """Appends one line per sample: time (s) and the front position on each side (cm)."""

    def __init__(self, path, sides, nominal: dict | None = None):
        self.path = path
        self.sides = tuple(sides)
        self._fh = open(path, "w")
        if nominal:
            self._fh.write("# nominal = " + ",".join(f"{s}:{nominal[s]!r}" for s in self.sides) + "\n")
        self._fh.write("time_s," + ",".join(self.sides) + "\n")

    def append(self, t: float, positions: dict):
        vals = [positions.get(s) for s in self.sides]
        self._fh.write(
            _FRONT_FMT % t + "," + ",".join("nan" if v is None else _FRONT_FMT % v for v in vals) + "\n"
        )

    def flush(self):
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_front_log(path, nominal: dict | None = None) -> FrontLog:
    """Front log from :class:`FrontLogWriter` output; nominal edges come from the header if present."""
    with open(path) as fh:
        line = fh.readline()
        if line.startswith("# nominal ="):
            pairs = line.partition("=")[2].strip().split(",")
            nominal = nominal or {k: float(v) for k, v in (p.split(":") for p in pairs)}
            line = fh.readline()
        header = line.strip().split(",")
        if not header or header[0] != "time_s":
            raise ValueError(f"{path}: not a front log")
        sides = tuple(header[1:])
        log = FrontLog(sides, dict(nominal or {s: math.nan for s in sides}))
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            vals = [float(v) for v in parts[1:]]
            log.append(float(parts[0]), {s: (None if math.isnan(v) else v) for s, v in zip(sides, vals)})
    return log


def write_manifest(path, manifest: dict):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
