"""Counter-based random streams addressable by (seed, path, tag).

Each stream is a sequence of standard normals (or uniforms) indexed by a
position ``j``. Positions are grouped in blocks of ``BLOCK`` values; block
``b`` of tag ``tag`` is a Philox4x64 stream keyed by ``(seed, tag, b)``, in
which path ``p`` owns the raw outputs ``[p * BLOCK, (p + 1) * BLOCK)``.
Any (path, position) is therefore reachable without generating anything
else, and values never depend on how many paths are drawn together.

Normals use the inverse normal CDF of a 53-bit uniform, which evaluates
each element independently and is bit-reproducible for any batch shape.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

BLOCK = 1024
_MASK64 = (1 << 64) - 1


def _tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def _key(seed: int, tag: str, block: int) -> np.ndarray:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    if not 0 <= block < (1 << 32):
        raise ValueError(f"stream position out of range (block {block})")
    return np.array([seed & _MASK64, (_tag_id(tag) << 32) | block], dtype=np.uint64)


@dataclass(frozen=True)
class StreamKey:
    base_seed: int
    path_index: int = 0
    tag: str = "increments"

    def __post_init__(self):
        if self.path_index < 0:
            raise ValueError("path_index must be >= 0")


def raw_block(seed: int, tag: str, path_start: int, n_paths: int, start: int, count: int) -> np.ndarray:
    """Raw uint64 draws, shape (n_paths, count), for positions [start, start+count)."""
    if count <= 0 or n_paths <= 0:
        return np.empty((max(n_paths, 0), max(count, 0)), dtype=np.uint64)
    out = np.empty((n_paths, count), dtype=np.uint64)
    b0, b1 = start // BLOCK, (start + count - 1) // BLOCK
    for b in range(b0, b1 + 1):
        counter = np.array([path_start * (BLOCK // 4), 0, 0, 0], dtype=np.uint64)
        bits = Philox(key=_key(seed, tag, b), counter=counter).random_raw(n_paths * BLOCK)
        bits = bits.reshape(n_paths, BLOCK)
        lo = max(start, b * BLOCK)
        hi = min(start + count, (b + 1) * BLOCK)
        out[:, lo - start : hi - start] = bits[:, lo - b * BLOCK : hi - b * BLOCK]
    return out


def uniforms(seed: int, tag: str, path_start: int, n_paths: int, start: int, count: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1), shape (n_paths, count)."""
    bits = raw_block(seed, tag, path_start, n_paths, start, count)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, tag: str, path_start: int, n_paths: int, start: int, count: int) -> np.ndarray:
    """Standard normals, shape (n_paths, count)."""
    return ndtri(uniforms(seed, tag, path_start, n_paths, start, count))


def gaussian_increments(key: StreamKey, n: int, dt: float, start: int = 0) -> np.ndarray:
    """n i.i.d. N(0, dt) draws from the stream ``key``, beginning at position ``start``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = normals(key.base_seed, key.tag, key.path_index, 1, start, n)[0]
    return np.sqrt(dt) * z


def generator(key: StreamKey) -> Generator:
    """A numpy Generator on the stream ``key``, for auxiliary draws (permutations, choices)."""
    if key.base_seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence([key.base_seed & _MASK64, _tag_id(key.tag), key.path_index])
    return Generator(Philox(ss))


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """A 63-bit seed for sub-task ``index`` of ``tag``, independent across (tag, index)."""
    ss = np.random.SeedSequence([seed & _MASK64, _tag_id(tag), index])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# Initial-law descriptors -------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    x0: tuple

    def __init__(self, x0):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(x0)))

    @property
    def dim(self) -> int:
        return len(self.x0)

    def to_dict(self) -> dict:
        return {"type": "point", "x0": list(self.x0)}


@dataclass(frozen=True)
class Gaussian:
    mean: tuple
    cov: tuple

    def __init__(self, mean, cov=None):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.eye(mean.size) if cov is None else np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if np.abs(cov - cov.T).max() > 1e-12 * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance is not symmetric")
        w = np.linalg.eigvalsh(cov)
        if w.min() < -1e-12 * max(1.0, w.max()):
            raise ValueError(f"covariance is not positive semi-definite (min eigenvalue {w.min():.3g})")
        object.__setattr__(self, "mean", tuple(mean.tolist()))
        object.__setattr__(self, "cov", tuple(map(tuple, cov.tolist())))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def factor(self) -> np.ndarray:
        cov = np.array(self.cov)
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))

    def to_dict(self) -> dict:
        return {"type": "gaussian", "mean": list(self.mean), "cov": [list(r) for r in self.cov]}


@dataclass(frozen=True, eq=False)
class Resample:
    """Draw with replacement from an EmpiricalMeasure, proportional to its weights."""

    measure: object

    @property
    def dim(self) -> int:
        return self.measure.dim

    def to_dict(self) -> dict:
        return {"type": "resample", "size": int(self.measure.size)}


def initial_from_dict(d: dict):
    kind = d.get("type", "point")
    if kind == "point":
        return PointMass(d["x0"])
    if kind == "gaussian":
        return Gaussian(d["mean"], d.get("cov"))
    raise ValueError(f"unknown initial law type {kind!r}")


def sample_initial(key: StreamKey, spec, n: int) -> np.ndarray:
    """n initial states for paths ``key.path_index .. key.path_index + n - 1``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p0 = key.path_index
    if isinstance(spec, PointMass):
        return np.tile(np.array(spec.x0), (n, 1))
    if isinstance(spec, Gaussian):
        z = normals(key.base_seed, key.tag, p0, n, 0, spec.dim)
        F = spec.factor()
        out = np.tile(np.array(spec.mean), (n, 1))
        # column-wise accumulation keeps each row independent of the batch size
        for k in range(spec.dim):
            out += z[:, k : k + 1] * F[:, k]
        return out
    if isinstance(spec, Resample):
        mu = spec.measure
        u = uniforms(key.base_seed, key.tag, p0, n, 0, 1)[:, 0]
        cdf = np.cumsum(mu.weights)
        cdf /= cdf[-1]
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), mu.size - 1)
        return mu.support[idx].copy()
    raise TypeError(f"unsupported initial-law descriptor {type(spec).__name__}")
