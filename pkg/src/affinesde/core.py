"""Domain types for (Q, T)-affine-periodic SDE systems.

A system ``dX = f(t, X) dt + g(t, X) dW`` is (Q, T)-affine periodic when

    f(t + T, x) = Q f(t, Q^{-1} x),    g(t + T, x) = Q g(t, Q^{-1} x).

Drift and diffusion callables operate on batches: ``drift(t, X)`` takes an
array of shape ``(..., l)`` and returns the same shape, ``diffusion(t, X)``
returns shape ``(..., l, m)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DET_TOL = 1e-12
ORTHO_TOL = 1e-10
POWER_TOL = 1e-9
RESIDUAL_TOL = 1e-9


class NonOrthogonalWarning(UserWarning):
    """Stability tooling was used with a Q outside O(l)."""


class AffineStructure:
    """The symmetry pair (Q, T) with cached powers of Q and Q^{-1}.

    Orthogonality is detected at construction. For orthogonal Q the inverse
    is the transpose.
    """

    def __init__(self, Q, T: float, depth: int = 8):
        Q = np.array(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        if not np.isfinite(Q).all():
            raise ValueError("Q has non-finite entries")
        if not T > 0:
            raise ValueError(f"period T must be positive, got {T}")
        l = Q.shape[0]
        scale = max(np.abs(Q).max(), 1.0) ** l
        if abs(np.linalg.det(Q)) <= DET_TOL * scale:
            raise ValueError("Q is singular to tolerance")
        self._Q = Q
        self._Q.setflags(write=False)
        self.T = float(T)
        self.orthogonal = bool(np.abs(Q.T @ Q - np.eye(l)).max() <= ORTHO_TOL)
        Qinv = Q.T.copy() if self.orthogonal else np.linalg.inv(Q)
        Qinv.setflags(write=False)
        self._Qinv = Qinv
        self._powers = {0: np.eye(l)}
        self._extend(depth)
        self.depth = depth

    @property
    def Q(self) -> np.ndarray:
        return self._Q

    @property
    def Qinv(self) -> np.ndarray:
        return self._Qinv

    @property
    def dim(self) -> int:
        return self._Q.shape[0]

    def _extend(self, depth: int) -> None:
        for sign, base in ((1, self._Q), (-1, self._Qinv)):
            k = max((j * sign for j in self._powers if j * sign >= 0), default=0)
            M = self._powers[sign * k]
            while k < depth:
                k += 1
                M = base @ M
                if not np.isfinite(M).all():
                    raise ValueError(f"Q^{sign * k} overflowed; Q is ill-conditioned")
                M.setflags(write=False)
                self._powers[sign * k] = M
        for k in range(1, depth + 1):
            err = np.abs(self._powers[-k] @ self._powers[k] - np.eye(self.dim)).max()
            if err > POWER_TOL:
                raise ValueError(f"Q^-{k} Q^{k} deviates from I by {err:.3g}")

    def power(self, k: int) -> np.ndarray:
        """Return Q^k; negative k uses the inverse. Extends the cache on demand."""
        k = int(k)
        if k not in self._powers:
            self._extend(abs(k))
            self.depth = max(self.depth, abs(k))
        return self._powers[k]

    def apply(self, k: int, x) -> np.ndarray:
        """Q^k x for a single state or a batch of row states."""
        x = np.asarray(x, dtype=float)
        if k == 0:
            return x.copy()
        return x @ self.power(k).T

    def require_orthogonal(self, what: str) -> None:
        if not self.orthogonal:
            warnings.warn(
                f"{what} assumes Q in O(l); this Q is not orthogonal",
                NonOrthogonalWarning,
                stacklevel=3,
            )

    def to_dict(self) -> dict:
        return {"Q": self._Q.tolist(), "T": self.T, "orthogonal": self.orthogonal}

    def __repr__(self):
        return f"AffineStructure(l={self.dim}, T={self.T:g}, orthogonal={self.orthogonal})"


def apply_affine(aff: AffineStructure, k: int, x) -> np.ndarray:
    """Return Q^k x (negative k applies Q^{-1} repeatedly)."""
    return aff.apply(k, x)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """An SDE ``dX = f dt + g dW`` with its affine structure.

    ``jac_f(t, x)`` returns the l x l drift Jacobian, ``jac_g(t, x)`` a
    sequence of m Jacobians (one per diffusion column). ``alpha`` is the
    contraction rate function when the model exposes one.
    """

    l: int
    m: int
    drift: Callable
    diffusion: Callable
    affine: AffineStructure
    name: str = "custom"
    jac_f: Optional[Callable] = None
    jac_g: Optional[Callable] = None
    alpha: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.affine.dim != self.l:
            raise ValueError(f"Q is {self.affine.dim}x{self.affine.dim} but l={self.l}")
        probe = np.zeros((1, self.l))
        fx = np.asarray(self.drift(0.0, probe))
        gx = np.asarray(self.diffusion(0.0, probe))
        if fx.shape != (1, self.l):
            raise ValueError(f"drift returned shape {fx.shape}, expected (1, {self.l})")
        if gx.shape != (1, self.l, self.m):
            raise ValueError(
                f"diffusion returned shape {gx.shape}, expected (1, {self.l}, {self.m})"
            )

    @property
    def T(self) -> float:
        return self.affine.T

    def f(self, t: float, x) -> np.ndarray:
        """Drift at a single state."""
        return np.asarray(self.drift(t, np.asarray(x, dtype=float)[None, :]))[0]

    def g(self, t: float, x) -> np.ndarray:
        """Diffusion matrix (l x m) at a single state."""
        return np.asarray(self.diffusion(t, np.asarray(x, dtype=float)[None, :]))[0]


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    def t(self, i: int) -> float:
        return self.t0 + i * self.dt

    @property
    def t_end(self) -> float:
        return self.t(self.n_steps)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Snap ``t`` to the nearest node; it must lie within dt/2 of the span."""
        i = int(round((t - self.t0) / self.dt))
        if i < 0 or i > self.n_steps or abs(self.t(i) - t) > 0.5 * self.dt + 1e-12 * max(1.0, abs(t)):
            raise ValueError(
                f"time {t:g} is outside the grid span [{self.t0:g}, {self.t_end:g}]"
            )
        return i

    @classmethod
    def spanning(cls, t0: float, t_end: float, dt: float) -> "TimeGrid":
        """Grid from t0 to t_end whose step is the largest one not above dt."""
        n = int(np.ceil((t_end - t0) / dt - 1e-9))
        n = max(n, 1)
        return cls(t0, (t_end - t0) / n, n)


@dataclass
class Ensemble:
    """N sample paths recorded on ``grid``.

    ``grid`` is the recording grid; the integrator may have stepped at a finer
    ``sim_dt`` (``grid.dt == stride * sim_dt``). ``path_ids`` are the stream
    indices of the stored paths, which keeps synchronous coupling aligned when
    blown-up paths are dropped.
    """

    grid: TimeGrid
    paths: np.ndarray
    base_seed: int
    path_offset: int = 0
    sim_dt: Optional[float] = None
    stride: int = 1
    step_offset: int = 0
    t_origin: Optional[float] = None
    model_name: str = "custom"
    scheme: str = "em"
    tag: str = "increments"
    path_ids: Optional[np.ndarray] = None
    flagged: list = field(default_factory=list)

    def __post_init__(self):
        self.paths = np.asarray(self.paths, dtype=float)
        if self.paths.ndim != 3 or self.paths.shape[1] != self.grid.n_steps + 1:
            raise ValueError(
                f"paths must have shape (N, {self.grid.n_steps + 1}, l), got {self.paths.shape}"
            )
        if not np.isfinite(self.paths).all():
            bad = np.argwhere(~np.isfinite(self.paths))[0]
            raise FloatingPointError(f"non-finite state in path {bad[0]} at node {bad[1]}")
        if self.sim_dt is None:
            self.sim_dt = self.grid.dt
        if self.t_origin is None:
            self.t_origin = self.grid.t0
        if self.path_ids is None:
            self.path_ids = self.path_offset + np.arange(self.paths.shape[0])

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def at(self, t: float) -> np.ndarray:
        """States of all paths at the node nearest ``t``."""
        return self.paths[:, self.grid.index_of(t), :]

    @property
    def final(self) -> np.ndarray:
        return self.paths[:, -1, :]

    def require_statistical(self) -> None:
        if self.n_paths < 2:
            raise ValueError(f"statistical operations need N >= 2 paths, got {self.n_paths}")


@dataclass
class PeriodicityCheck:
    residual_f: float
    residual_g: float
    passed: bool
    tol: float
    worst_f: tuple = ()
    worst_g: tuple = ()


def check_affine_periodicity(
    model: ModelSpec,
    t_samples: Sequence[float],
    x_samples,
    tol: float = RESIDUAL_TOL,
) -> PeriodicityCheck:
    """Max residuals of f(t+T,x) - Q f(t,Q^{-1}x) and the same for g over all samples."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    t_samples = np.atleast_1d(np.asarray(t_samples, dtype=float))
    if t_samples.size == 0 or x_samples.shape[0] == 0:
        raise ValueError("samples must be non-empty")
    aff = model.affine
    Q, T = aff.Q, aff.T
    xinv = aff.apply(-1, x_samples)
    res_f, res_g = 0.0, 0.0
    worst_f = worst_g = ()
    for t in t_samples:
        f_shift = np.asarray(model.drift(t + T, x_samples))
        f_base = np.asarray(model.drift(t, xinv))
        g_shift = np.asarray(model.diffusion(t + T, x_samples))
        g_base = np.asarray(model.diffusion(t, xinv))
        for name, arr in (("f", f_shift), ("f", f_base), ("g", g_shift), ("g", g_base)):
            if not np.isfinite(arr).all():
                row = int(np.argwhere(~np.isfinite(arr).reshape(len(x_samples), -1).all(axis=1))[0, 0])
                raise FloatingPointError(
                    f"non-finite {name} at t={t:g}, x={x_samples[row].tolist()}"
                )
        rf = np.linalg.norm(f_shift - f_base @ Q.T, axis=1)
        rg = np.linalg.norm(
            (g_shift - np.einsum("ij,njk->nik", Q, g_base)).reshape(len(x_samples), -1), axis=1
        )
        if rf.max() > res_f:
            res_f = float(rf.max())
            worst_f = (float(t), x_samples[int(rf.argmax())].tolist())
        if rg.max() > res_g:
            res_g = float(rg.max())
            worst_g = (float(t), x_samples[int(rg.argmax())].tolist())
    return PeriodicityCheck(res_f, res_g, res_f <= tol and res_g <= tol, tol, worst_f, worst_g)
