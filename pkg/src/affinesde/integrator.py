"""Euler-Maruyama ensembles and moment estimators.

Path ``p`` draws its Brownian increments from stream ``(seed, p, "increments")``
at positions ``step * m + k``, where ``step`` is the absolute step index
counted from the run's time origin. A run continued from an earlier one
keeps the origin and step count, so ``[0, 2T]`` in one go equals ``[0, T]``
followed by ``[T, 2T]`` bit for bit.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng
from .core import Ensemble, ModelSpec, TimeGrid
from .measures import EmpiricalMeasure

log = logging.getLogger(__name__)

DT_GUARD = 1e-3
MAX_FLAG_FRACTION = 1e-3
BLOWUP_NORM = 1e150
_PATH_ALIGN = 64
_NORMALS_PER_BLOCK = 1 << 22


class SimulationError(RuntimeError):
    """Too many paths blew up. ``flagged`` holds (path, step, last finite |X|)."""

    def __init__(self, msg, flagged):
        super().__init__(msg)
        self.flagged = flagged


@dataclass
class _Chunk:
    ids: np.ndarray
    x0: np.ndarray


def _simulate_chunk(model, chunk, t_origin, dt, step_offset, n_steps, stride, seed, tag, scheme):
    ids, X = chunk.ids, chunk.x0.astype(float, copy=True)
    n, l, m = len(ids), model.l, model.m
    rec = np.empty((n, n_steps // stride + 1, l))
    rec[:, 0] = X
    id0 = int(ids[0])
    rows = ids - id0
    contiguous = rows[-1] == n - 1
    span = int(rows[-1]) + 1
    sqdt = np.sqrt(dt)
    dead = np.zeros(n, dtype=bool)
    flagged = []
    block = max(1, min(n_steps, _NORMALS_PER_BLOCK // max(1, span * m)))
    for s0 in range(0, n_steps, block):
        s1 = min(n_steps, s0 + block)
        Z = rng.normals(seed, tag, id0, span, (step_offset + s0) * m, (s1 - s0) * m)
        if not contiguous:
            Z = Z[rows]
        # step-major layout keeps each step's increments contiguous
        dW = np.ascontiguousarray((Z * sqdt).reshape(n, s1 - s0, m).transpose(1, 0, 2))
        for i in range(s0, s1):
            t = t_origin + (step_offset + i) * dt
            with np.errstate(over="ignore", invalid="ignore"):
                F = model.drift(t, X)
                if scheme == "tamed":
                    F = F / (1.0 + dt * np.sqrt(np.sum(F * F, axis=1)))[:, None]
                G = model.diffusion(t, X)
                dw = dW[i - s0]
                Xn = X + F * dt
                if m == 1:
                    Xn += G[:, :, 0] * dw
                else:
                    for k in range(m):
                        Xn += G[:, :, k] * dw[:, k : k + 1]
                # NaN fails the comparison, so one reduction covers both cases
                healthy = np.abs(Xn).max() < BLOWUP_NORM
            if not healthy:
                with np.errstate(invalid="ignore"):
                    ok = np.isfinite(Xn).all(axis=1) & (np.abs(Xn).max(axis=1) < BLOWUP_NORM)
                for r in np.flatnonzero(~ok & ~dead):
                    flagged.append((int(ids[r]), int(step_offset + i + 1), float(np.linalg.norm(X[r]))))
                dead |= ~ok
                Xn[~ok] = 0.0
            X = Xn
            if (i + 1) % stride == 0:
                rec[:, (i + 1) // stride] = X
    return rec, dead, flagged


def _chunks(ids: np.ndarray, x0: np.ndarray, workers: int):
    n = len(ids)
    size = -(-n // max(1, workers))
    size = -(-size // _PATH_ALIGN) * _PATH_ALIGN
    return [_Chunk(ids[s : s + size], x0[s : s + size]) for s in range(0, n, size)]


def _run(model, ids, x0, t_origin, dt, step_offset, n_steps, stride, seed, tag, scheme, workers):
    chunks = _chunks(ids, x0, workers)
    args = (t_origin, dt, step_offset, n_steps, stride, seed, tag, scheme)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _simulate_chunk(model, c, *args), chunks))
    else:
        results = [_simulate_chunk(model, c, *args) for c in chunks]
    rec = np.concatenate([r[0] for r in results])
    dead = np.concatenate([r[1] for r in results])
    flagged = [f for r in results for f in r[2]]
    return rec, dead, flagged


def _finish(rec, dead, flagged, ids, max_flag_fraction, **ens_kwargs):
    n = len(ids)
    if flagged:
        frac = dead.sum() / n
        for p, i, norm in flagged[:10]:
            log.warning("path %d blew up at step %d (last |X| = %.3g)", p, i, norm)
        if frac > max_flag_fraction:
            raise SimulationError(
                f"{dead.sum()} of {n} paths blew up ({100 * frac:.2f}% > "
                f"{100 * max_flag_fraction:.2f}%); reduce dt or use scheme='tamed'",
                flagged,
            )
        rec, ids = rec[~dead], ids[~dead]
    return Ensemble(paths=rec, path_ids=ids, flagged=flagged, **ens_kwargs)


def euler_maruyama(
    model: ModelSpec,
    initial,
    grid: TimeGrid,
    n_paths: int,
    base_seed: int,
    *,
    record_stride: int = 1,
    path_offset: int = 0,
    scheme: str = "em",
    workers: int = 1,
    check_dt: bool = True,
    tag: str = "increments",
    max_flag_fraction: float = MAX_FLAG_FRACTION,
) -> Ensemble:
    """Simulate ``n_paths`` Euler-Maruyama paths of ``model`` over ``grid``.

    ``initial`` is an initial-law descriptor (:class:`rng.PointMass`,
    :class:`rng.Gaussian`, :class:`rng.Resample`) or an explicit
    ``(n_paths, l)`` array of states. Only every ``record_stride``-th node is
    stored. ``scheme="tamed"`` replaces the drift by ``f / (1 + dt |f|)``.
    """
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2, got {n_paths}")
    if scheme not in ("em", "tamed"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if grid.n_steps % record_stride:
        raise ValueError(f"record_stride {record_stride} does not divide n_steps {grid.n_steps}")
    if check_dt and grid.dt > DT_GUARD * model.T * (1 + 1e-9):
        raise ValueError(
            f"dt={grid.dt:g} exceeds the guard {DT_GUARD:g}*T={DT_GUARD * model.T:g}; "
            "pass check_dt=False to override"
        )
    ids = path_offset + np.arange(n_paths)
    if isinstance(initial, np.ndarray):
        x0 = np.asarray(initial, dtype=float)
        if x0.shape != (n_paths, model.l):
            raise ValueError(f"initial states must have shape ({n_paths}, {model.l}), got {x0.shape}")
    else:
        if initial.dim != model.l:
            raise ValueError(f"initial law has dimension {initial.dim}, model has l={model.l}")
        x0 = rng.sample_initial(rng.StreamKey(base_seed, path_offset, "initial"), initial, n_paths)
    rec, dead, flagged = _run(
        model, ids, x0, grid.t0, grid.dt, 0, grid.n_steps, record_stride,
        base_seed, tag, scheme, workers,
    )
    rec_grid = TimeGrid(grid.t0, grid.dt * record_stride, grid.n_steps // record_stride)
    return _finish(
        rec, dead, flagged, ids, max_flag_fraction,
        grid=rec_grid, base_seed=base_seed, path_offset=path_offset, sim_dt=grid.dt,
        stride=record_stride, step_offset=0, t_origin=grid.t0, model_name=model.name,
        scheme=scheme, tag=tag,
    )


def continue_ensemble(
    ens: Ensemble,
    model: ModelSpec,
    n_steps: int,
    *,
    workers: int = 1,
    max_flag_fraction: float = MAX_FLAG_FRACTION,
) -> Ensemble:
    """Continue every path of ``ens`` for ``n_steps`` more simulation steps on the same streams."""
    if n_steps % ens.stride:
        raise ValueError(f"n_steps must be a multiple of the record stride {ens.stride}")
    step_offset = ens.step_offset + ens.grid.n_steps * ens.stride
    rec, dead, flagged = _run(
        model, np.asarray(ens.path_ids), ens.final, ens.t_origin, ens.sim_dt, step_offset,
        n_steps, ens.stride, ens.base_seed, ens.tag, ens.scheme, workers,
    )
    rec_grid = TimeGrid(ens.grid.t_end, ens.grid.dt, n_steps // ens.stride)
    return _finish(
        rec, dead, flagged, np.asarray(ens.path_ids), max_flag_fraction,
        grid=rec_grid, base_seed=ens.base_seed, path_offset=ens.path_offset, sim_dt=ens.sim_dt,
        stride=ens.stride, step_offset=step_offset, t_origin=ens.t_origin,
        model_name=ens.model_name, scheme=ens.scheme, tag=ens.tag,
    )


@dataclass
class MomentCurve:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray

    @property
    def max(self) -> float:
        """The sup-over-grid estimate of E|X(t)|^2."""
        return float(self.mean.max())

    @property
    def argmax(self) -> float:
        return float(self.times[int(self.mean.argmax())])


def moment_curve(ens: Ensemble) -> MomentCurve:
    """Sample mean of |X(t)|^2 at every recorded node, with standard errors."""
    sq = np.sum(ens.paths * ens.paths, axis=2)
    n = ens.n_paths
    std = sq.std(axis=0, ddof=1) if n > 1 else np.zeros(sq.shape[1])
    return MomentCurve(ens.grid.times, sq.mean(axis=0), std / np.sqrt(n))


def sectioned_states(ens: Ensemble, times: Sequence[float]) -> list:
    """Uniform empirical measures of the ensemble at the grid nodes nearest ``times``."""
    return [EmpiricalMeasure(ens.at(t)) for t in times]


def mean_curve(ens: Ensemble):
    """Componentwise sample mean of X(t) and its standard error."""
    n = ens.n_paths
    return ens.paths.mean(axis=0), ens.paths.std(axis=0, ddof=1) / np.sqrt(n)


def refinement_study(
    model: ModelSpec,
    x0,
    t_end: float,
    dt: float,
    levels: int,
    n_paths: int,
    seed: int,
    t0: float = 0.0,
) -> list:
    """Endpoints at steps dt, dt/2, ..., dt/2^(levels-1) driven by one Brownian path per sample.

    The finest increments come from the path streams; coarser increments are
    their sums, so every level sees the same Brownian motion.
    """
    n_fine = int(round((t_end - t0) / dt)) * 2 ** (levels - 1)
    h = (t_end - t0) / n_fine
    Z = rng.normals(seed, "increments", 0, n_paths, 0, n_fine * model.m)
    dW = (Z * np.sqrt(h)).reshape(n_paths, n_fine, model.m)
    X0 = np.tile(np.asarray(x0, dtype=float), (n_paths, 1))
    ends = []
    for lev in range(levels):
        factor = 2 ** (levels - 1 - lev)
        inc = dW.reshape(n_paths, n_fine // factor, factor, model.m).sum(axis=2)
        step = h * factor
        X = X0.copy()
        for i in range(inc.shape[1]):
            t = t0 + i * step
            G = model.diffusion(t, X)
            Xn = X + model.drift(t, X) * step
            for k in range(model.m):
                Xn += G[:, :, k] * inc[:, i, k : k + 1]
            X = Xn
        ends.append(X)
    return ends
