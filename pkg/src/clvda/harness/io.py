"""Binary container for trajectories, Lyapunov sets and observations; CSV tables.

Container layout (all integers little-endian)::

    magic      8 bytes   b"CLVDABIN"
    version    u32       1
    kind       u32       1 trajectory, 2 lyapunov set, 3 observation set
    meta_len   u64       length of the JSON metadata block
    meta       bytes     UTF-8 JSON, sorted keys
    n_arrays   u32
    per array:
      name_len u16, name (UTF-8), ndim u32, shape u64 x ndim,
      data     float64 little-endian, row-major
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from clvda.enkf import ObservationModel, ObservationSet
from clvda.errors import ValidationError
from clvda.ginelli import GinelliSchedule, LyapunovSet
from clvda.models import ModelSpec, Trajectory

MAGIC = b"CLVDABIN"
VERSION = 1
KIND_TRAJECTORY = 1
KIND_LYAPUNOV = 2
KIND_OBSERVATIONS = 3


def json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=json_default)


def write_container(path, kind: int, meta: dict, arrays: dict) -> None:
    buf = io.BytesIO()
    meta_bytes = canonical_json(meta).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<IIQ", VERSION, kind, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        buf.write(a.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def read_container(path, expected_kind: int | None = None):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValidationError(f"{path}: not a clvda container")
    version, kind, meta_len = struct.unpack_from("<IIQ", data, 8)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported container version {version}")
    if expected_kind is not None and kind != expected_kind:
        raise ValidationError(f"{path}: container kind {kind}, expected {expected_kind}")
    pos = 24
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_arrays,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    return kind, meta, arrays


def save_trajectory(path, traj: Trajectory) -> None:
    meta = {"model": traj.model.to_dict(), "t0": traj.t0, "dt": traj.dt,
            "save_interval": traj.save_interval, "dynamical": traj.dynamical, "meta": traj.meta}
    write_container(path, KIND_TRAJECTORY, meta, {"states": traj.states})


def load_trajectory(path) -> Trajectory:
    _, meta, arrays = read_container(path, KIND_TRAJECTORY)
    return Trajectory(ModelSpec.from_dict(meta["model"]), meta["t0"], meta["dt"],
                      meta["save_interval"], arrays["states"], meta["dynamical"], meta["meta"])


def save_lyapunov(path, lyap: LyapunovSet) -> None:
    meta = {"model": lyap.model.to_dict(), "schedule": lyap.schedule.to_dict(),
            "diagnostics": lyap.diagnostics}
    write_container(path, KIND_LYAPUNOV, meta, {
        "exponents": lyap.exponents, "blv": lyap.blv, "clv": lyap.clv, "coeffs": lyap.coeffs,
        "sample_indices": lyap.sample_indices.astype(np.float64), "times": lyap.times})


def load_lyapunov(path) -> LyapunovSet:
    _, meta, a = read_container(path, KIND_LYAPUNOV)
    return LyapunovSet(ModelSpec.from_dict(meta["model"]), GinelliSchedule(**meta["schedule"]),
                       a["exponents"], a["blv"], a["clv"], a["coeffs"],
                       a["sample_indices"].astype(np.int64), a["times"], meta["diagnostics"])


def save_observations(path, obs: ObservationSet) -> None:
    meta = {"noise_std": obs.obs_model.noise_std, "obs_interval": obs.obs_model.obs_interval,
            "seed": obs.seed}
    write_container(path, KIND_OBSERVATIONS, meta, {
        "H": obs.obs_model.H, "times": obs.times, "values": obs.values,
        "truth_indices": obs.truth_indices.astype(np.float64)})


def load_observations(path) -> ObservationSet:
    _, meta, a = read_container(path, KIND_OBSERVATIONS)
    om = ObservationModel(a["H"], meta["noise_std"], meta["obs_interval"])
    return ObservationSet(a["times"], a["values"], om, a["truth_indices"].astype(np.int64),
                          meta["seed"])


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            raise ValidationError("refusing to publish a non-finite value")
        return repr(float(v))
    return str(v)


def write_table(path, columns, rows, meta: dict) -> None:
    """Write a CSV table and its ``.json`` metadata sidecar."""
    path = Path(path)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValidationError(f"row width {len(row)} != {len(columns)} columns")
        w.writerow([format_cell(v) for v in row])
    path.write_text(out.getvalue(), encoding="utf-8")
    sidecar = dict(meta, columns=list(columns), rows=len(rows))
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True,
                                                    default=json_default) + "\n")


def read_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
