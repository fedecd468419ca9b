"""Empirical measures and the bounded-Lipschitz (Dudley) distance.

For discrete measures the supremum over test functions with
``max(sup|h|, Lip(h)) <= 1`` only reads ``h`` on the merged support, so

    d_BL(mu, nu) = max  sum_i (mu_i - nu_i) h_i
                   s.t. |h_i| <= 1,  h_i - h_j <= |x_i - x_j|.

Adding a ground node at distance 1 from every point turns the bound
``|h_i| <= 1`` into a Lipschitz constraint, and LP duality turns the whole
program into optimal transport with cost ``min(|x - y|, 2)``. ``dbl_exact``
solves that transport problem (an assignment problem for equal-size uniform
measures); ``dbl_lp`` solves the program above as written.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance

from . import rng

N_MAX = 256
WEIGHT_TOL = 1e-12


class EmpiricalMeasure:
    """Weighted point cloud in R^l."""

    def __init__(self, support, weights=None):
        support = np.asarray(support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        if support.ndim != 2 or support.shape[0] < 1:
            raise ValueError(f"support must be a non-empty (n, l) array, got shape {support.shape}")
        if not np.isfinite(support).all():
            raise ValueError("support points must be finite")
        n = support.shape[0]
        if weights is None:
            weights = np.full(n, 1.0 / n)
            self._uniform = True
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (n,):
                raise ValueError(f"weights must have shape ({n},), got {weights.shape}")
            if (weights < 0).any():
                raise ValueError("weights must be non-negative")
            if abs(weights.sum() - 1.0) > WEIGHT_TOL * max(1, n):
                raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
            self._uniform = bool(np.ptp(weights) <= WEIGHT_TOL / n)
        self.support = support
        self.weights = weights

    @property
    def size(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @property
    def is_uniform(self) -> bool:
        return self._uniform

    def pushforward(self, M) -> "EmpiricalMeasure":
        """Image under x -> M x."""
        M = np.asarray(M, dtype=float)
        return EmpiricalMeasure(self.support @ M.T, None if self._uniform else self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.support

    @classmethod
    def mixture(cls, measures: Sequence["EmpiricalMeasure"], coef=None) -> "EmpiricalMeasure":
        k = len(measures)
        coef = np.full(k, 1.0 / k) if coef is None else np.asarray(coef, dtype=float)
        support = np.vstack([m.support for m in measures])
        weights = np.concatenate([c * m.weights for c, m in zip(coef, measures)])
        uniform = all(m.is_uniform for m in measures) and len({m.size for m in measures}) == 1
        return cls(support, None if uniform and np.ptp(coef) == 0 else weights / weights.sum())

    def to_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        cols = ["weight"] + [f"x_{i + 1}" for i in range(self.dim)]
        with open(path, "w", newline="\n") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(",".join(cols) + "\n")
            for w, row in zip(self.weights, self.support):
                fh.write(",".join(f"{v:.17g}" for v in (w, *row)) + "\n")

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return cls(body[:, 1:], body[:, 0] / body[:, 0].sum())

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.size}, l={self.dim})"


def _check_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def _transport(a, A, b, B) -> float:
    C = np.minimum(cdist(A, B), 2.0)
    na, nb = len(a), len(b)
    rows = sparse.kron(sparse.eye(na), np.ones((1, nb)))
    cols = sparse.kron(np.ones((1, na)), sparse.eye(nb))
    A_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([a, b])
    res = linprog(
        C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def dbl_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure, n_max: int = N_MAX) -> float:
    """Exact bounded-Lipschitz distance between two finite measures."""
    _check_pair(mu, nu)
    if max(mu.size, nu.size) > n_max:
        raise ValueError(
            f"support of size {max(mu.size, nu.size)} exceeds n_max={n_max}; use dbl_estimate"
        )
    if nu.size == 1:
        return float(mu.weights @ np.minimum(np.linalg.norm(mu.support - nu.support[0], axis=1), 2.0))
    if mu.size == 1:
        return dbl_exact(nu, mu, n_max)
    if mu.is_uniform and nu.is_uniform and mu.size == nu.size:
        C = np.minimum(cdist(mu.support, nu.support), 2.0)
        r, c = linear_sum_assignment(C)
        return float(C[r, c].sum() / mu.size)
    return max(0.0, _transport(mu.weights, mu.support, nu.weights, nu.support))


def dbl_lp(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """The bounded-Lipschitz program solved directly over test-function values.

    O(n^2) constraints on the merged support; meant for small instances and
    as a cross-check of :func:`dbl_exact`.
    """
    _check_pair(mu, nu)
    X = np.vstack([mu.support, nu.support])
    c = np.concatenate([mu.weights, -nu.weights])
    n = len(X)
    D = cdist(X, X)
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    k = np.arange(len(i))
    A = sparse.coo_matrix(
        (np.concatenate([np.ones(len(i)), -np.ones(len(i))]), (np.concatenate([k, k]), np.concatenate([i, j]))),
        shape=(len(i), n),
    ).tocsr()
    res = linprog(
        -c, A_ub=A, b_ub=D[i, j], bounds=[(-1.0, 1.0)] * n, method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return float(-res.fun)


@dataclass
class DBLEstimate:
    estimate: float
    noise_floor: float
    estimates: np.ndarray
    floors: np.ndarray
    m_sub: int
    with_replacement: bool = False
    notes: list = field(default_factory=list)


def _subsample(mu: EmpiricalMeasure, m: int, gen) -> tuple:
    if mu.is_uniform and mu.size >= m:
        return mu.support[gen.choice(mu.size, m, replace=False)], False
    return mu.support[gen.choice(mu.size, m, replace=True, p=mu.weights)], True


def _disjoint_pair(mu: EmpiricalMeasure, m: int, gen) -> tuple:
    if mu.is_uniform and mu.size >= 2 * m:
        idx = gen.choice(mu.size, 2 * m, replace=False)
        return mu.support[idx[:m]], mu.support[idx[m:]], False
    a = mu.support[gen.choice(mu.size, m, replace=True, p=mu.weights)]
    b = mu.support[gen.choice(mu.size, m, replace=True, p=mu.weights)]
    return a, b, True


def dbl_estimate(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    m_sub: int = N_MAX,
    repeats: int = 16,
    seed: int = 0,
    n_max: int = N_MAX,
    floor_quantile: float = 95.0,
) -> DBLEstimate:
    """Subsampled d_BL with the self-distance noise floor of ``mu``.

    ``estimate`` is the mean over ``repeats`` of the exact distance between
    independent ``m_sub``-point subsamples of ``mu`` and ``nu``. ``noise_floor``
    is the 95th percentile of the distance between two disjoint subsamples of
    ``mu``: the level a pair of equal laws shows at this sample size.
    """
    _check_pair(mu, nu)
    if m_sub > n_max:
        raise ValueError(f"m_sub={m_sub} exceeds n_max={n_max}")
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    est = np.empty(repeats)
    floors = np.empty(repeats)
    replaced = False
    for r in range(repeats):
        ga = rng.generator(rng.StreamKey(seed, r, "subsample-mu"))
        gb = rng.generator(rng.StreamKey(seed, r, "subsample-nu"))
        gf = rng.generator(rng.StreamKey(seed, r, "floor"))
        a, ra = _subsample(mu, m_sub, ga)
        b, rb = _subsample(nu, m_sub, gb)
        est[r] = dbl_exact(EmpiricalMeasure(a), EmpiricalMeasure(b), n_max)
        fa, fb, rf = _disjoint_pair(mu, m_sub, gf)
        floors[r] = dbl_exact(EmpiricalMeasure(fa), EmpiricalMeasure(fb), n_max)
        replaced |= rf
    notes = []
    if replaced:
        notes.append("noise floor computed from subsamples drawn with replacement")
    return DBLEstimate(
        estimate=float(est.mean()),
        noise_floor=float(np.percentile(floors, floor_quantile)),
        estimates=est,
        floors=floors,
        m_sub=m_sub,
        with_replacement=replaced,
        notes=notes,
    )


@dataclass
class MsqDistance:
    value: float
    stderr: float


def msq_distance(ensA, ensB, t: float) -> MsqDistance:
    """Mean of |X^A_p(t) - X^B_p(t)|^2 over synchronously coupled paths."""
    ga, gb = ensA.grid, ensB.grid
    if (ga.n_steps, ensA.n_paths) != (gb.n_steps, ensB.n_paths) or not np.isclose(ga.dt, gb.dt) or not np.isclose(ga.t0, gb.t0):
        raise ValueError("ensembles must share their time grid and path count")
    if ensA.base_seed != ensB.base_seed or ensA.tag != ensB.tag or not np.array_equal(ensA.path_ids, ensB.path_ids):
        raise ValueError("ensembles are not synchronously coupled (different noise streams)")
    d = ensA.at(t) - ensB.at(t)
    sq = np.sum(d * d, axis=1)
    return MsqDistance(float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(len(sq))))


def wasserstein1_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W1 between one-dimensional measures."""
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("wasserstein1_1d needs one-dimensional measures")
    return float(wasserstein_distance(mu.support[:, 0], nu.support[:, 0], mu.weights, nu.weights))


def point_mass(x, n: Optional[int] = None) -> EmpiricalMeasure:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return EmpiricalMeasure(np.tile(x, (n or 1, 1)))
