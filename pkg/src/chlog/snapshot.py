"""CHLOG1 binary snapshots.

Layout, little-endian throughout::

    magic    7 bytes  b"CHLOG1\\n"
    version  u16
    n        u32
    step     u64
    tau      f64
    nu, theta, theta_c   f64 x 3
    values   n*n f64, row-major (axis 0 = x1)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import Field, make_grid
from .potential import ModelParams
from .stepper import SimState

MAGIC = b"CHLOG1\n"
VERSION = 1
_HEADER = struct.Struct("<7sHIQdddd")


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class Snapshot:
    state: SimState
    params: ModelParams
    version: int = VERSION

    @property
    def n(self) -> int:
        return self.state.grid.n

    @property
    def tau(self) -> float:
        return self.state.tau


def save_snapshot(state: SimState, params: ModelParams, path) -> None:
    header = _HEADER.pack(
        MAGIC, VERSION, state.grid.n, state.step, state.tau,
        params.nu, params.theta, params.theta_c,
    )
    payload = np.ascontiguousarray(state.u.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_snapshot(path) -> Snapshot:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise SnapshotError(f"{path}: file too short for a header ({len(data)} bytes)")
    magic, version, n, step, tau, nu, theta, theta_c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported version {version} (expected {VERSION})")
    expected = n * n * 8
    got = len(data) - _HEADER.size
    if got != expected:
        raise SnapshotError(
            f"{path}: payload length {got} bytes does not match n={n} ({expected} bytes)"
        )
    try:
        grid = make_grid(n)
        params = ModelParams(nu, theta, theta_c)
    except ValueError as exc:
        raise SnapshotError(f"{path}: invalid header: {exc}") from None
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(n, n)
    state = SimState.initial(Field(grid, values.astype(np.float64)), tau, step=step)
    return Snapshot(state, params, version)
