"""File formats: ensemble CSV, the AFPE binary ensemble, curve CSVs and manifests.

AFPE layout (all little-endian)::

    4s   magic  b"AFPE"
    u32  version (1)
    u64  N        paths
    u64  steps    recorded steps (nodes = steps + 1)
    u32  l        state dimension
    u64  seed
    f64  t0
    f64  dt       recording step
    u32  manifest length in bytes
    ...  manifest, UTF-8 JSON
    f64  paths[N][steps + 1][l]
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Optional, Sequence

import numpy as np

from .core import Ensemble, TimeGrid

MAGIC = b"AFPE"
VERSION = 1
_HEADER = struct.Struct("<4sIQQIQddI")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def manifest(seed: int, config: dict, **extra) -> dict:
    from . import __version__

    out = {"seed": int(seed), "config_hash": config_hash(config), "version": __version__}
    out.update(extra)
    return out


def fmt(v: float) -> str:
    return f"{v:.17g}"


def _header_lines(man: Optional[dict]) -> list:
    return [f"# manifest: {json.dumps(man, sort_keys=True)}"] if man else []


def write_ensemble_csv(ens: Ensemble, path, man: Optional[dict] = None) -> None:
    """Columns path, step, t, x_1..x_l; ``path`` is the stream index, ``step`` the node index."""
    times = ens.grid.times
    with open(path, "w", newline="\n") as fh:
        for line in _header_lines(man):
            fh.write(line + "\n")
        fh.write(",".join(["path", "step", "t"] + [f"x_{i + 1}" for i in range(ens.dim)]) + "\n")
        for p, pid in enumerate(ens.path_ids):
            rows = ens.paths[p]
            for i, t in enumerate(times):
                fh.write(f"{int(pid)},{i},{fmt(t)}," + ",".join(fmt(v) for v in rows[i]) + "\n")


def read_ensemble_csv(path, base_seed: int = 0) -> Ensemble:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    ids = np.unique(data[:, 0].astype(np.int64))
    steps = np.unique(data[:, 1].astype(np.int64))
    l = data.shape[1] - 3
    paths = data[:, 3:].reshape(len(ids), len(steps), l)
    times = data[: len(steps), 2]
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    return Ensemble(TimeGrid(times[0], dt, len(steps) - 1), paths, base_seed, path_ids=ids)


def write_afpe(ens: Ensemble, path, man: Optional[dict] = None) -> None:
    meta = dict(man or {})
    meta.setdefault("path_ids", [int(p) for p in ens.path_ids])
    meta.setdefault("model", ens.model_name)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    head = _HEADER.pack(
        MAGIC, VERSION, ens.n_paths, ens.grid.n_steps, ens.dim, int(ens.base_seed),
        float(ens.grid.t0), float(ens.grid.dt), len(blob),
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(blob)
        fh.write(np.ascontiguousarray(ens.paths, dtype="<f8").tobytes())


def read_afpe(path) -> tuple:
    """Returns (Ensemble, manifest)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for an AFPE header")
    magic, version, N, steps, l, seed, t0, dt, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported AFPE version {version}")
    off = _HEADER.size
    meta = json.loads(raw[off : off + mlen].decode("utf-8"))
    off += mlen
    expected = N * (steps + 1) * l * 8
    if len(raw) - off != expected:
        raise ValueError(f"payload has {len(raw) - off} bytes, expected {expected}")
    paths = np.frombuffer(raw, dtype="<f8", count=N * (steps + 1) * l, offset=off).reshape(N, steps + 1, l)
    ens = Ensemble(
        TimeGrid(t0, dt, steps), paths.astype(float), seed,
        path_ids=np.asarray(meta.get("path_ids", range(N))), model_name=meta.get("model", "custom"),
    )
    return ens, meta


def write_curve_csv(path, columns: dict, man: Optional[dict] = None) -> None:
    """CSV with one column per key of ``columns`` (equal-length sequences)."""
    names = list(columns)
    cols = [np.asarray(columns[k], dtype=float) for k in names]
    with open(path, "w", newline="\n") as fh:
        for line in _header_lines(man):
            fh.write(line + "\n")
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_curve_csv(path) -> dict:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    names = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return {n: data[:, i] for i, n in enumerate(names)}


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def manifest_lines(man: dict) -> Sequence[str]:
    return [f"manifest: {json.dumps(man, sort_keys=True)}"]
