"""Serialization of fields: JSON text and the KDVQFLD1 binary layout.

Binary layout (little endian):
    8 bytes   magic b"KDVQFLD1"
    4 x int64 kind (1 periodic, 2 trajectory), n_max, is_real, n_snapshots
    float64   horizon T (0 for periodic fields)
    float64   real parts, column-major over (snapshots, modes)
    float64   imaginary parts, same order
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .spectral import PeriodicField, SpaceTimeField, TimeGrid

MAGIC = b"KDVQFLD1"


def field_to_dict(u) -> dict:
    c = u.coeffs
    out = {"n_max": int(u.n_max), "is_real": bool(u.is_real),
           "re": c.real.tolist(), "im": c.imag.tolist()}
    if isinstance(u, SpaceTimeField):
        out["T"] = u.grid.T
        out["n_steps"] = u.grid.n_steps
    return out


def field_from_dict(d: dict):
    c = np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)
    if c.shape[-1] != 2 * int(d["n_max"]) + 1:
        raise ValueError("coefficient count does not match n_max")
    if "n_steps" in d:
        return SpaceTimeField(TimeGrid(d["T"], d["n_steps"]), c, bool(d["is_real"]))
    return PeriodicField(c, bool(d["is_real"]))


def save_json(u, path):
    Path(path).write_text(json.dumps(field_to_dict(u)))


def load_json(path):
    return field_from_dict(json.loads(Path(path).read_text()))


def to_bytes(u) -> bytes:
    c = np.atleast_2d(u.coeffs)
    traj = isinstance(u, SpaceTimeField)
    header = np.array([2 if traj else 1, u.n_max, int(u.is_real), c.shape[0]], dtype="<i8")
    horizon = np.array([u.grid.T if traj else 0.0], dtype="<f8")
    re = np.asfortranarray(c.real).ravel(order="F").astype("<f8")
    im = np.asfortranarray(c.imag).ravel(order="F").astype("<f8")
    return MAGIC + header.tobytes() + horizon.tobytes() + re.tobytes() + im.tobytes()


def from_bytes(buf: bytes):
    if buf[:8] != MAGIC:
        raise ValueError("bad magic header")
    kind, n_max, is_real, n_snap = np.frombuffer(buf, dtype="<i8", count=4, offset=8)
    horizon = np.frombuffer(buf, dtype="<f8", count=1, offset=40)[0]
    size = int(n_snap) * (2 * int(n_max) + 1)
    data = np.frombuffer(buf, dtype="<f8", count=2 * size, offset=48)
    shape = (int(n_snap), 2 * int(n_max) + 1)
    c = data[:size].reshape(shape, order="F") + 1j * data[size:].reshape(shape, order="F")
    if kind == 2:
        return SpaceTimeField(TimeGrid(horizon, int(n_snap) - 1), c, bool(is_real))
    return PeriodicField(c[0], bool(is_real))


def save_binary(u, path):
    Path(path).write_bytes(to_bytes(u))


def load_binary(path):
    return from_bytes(Path(path).read_bytes())
