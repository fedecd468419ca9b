"""The period map on empirical laws, its fixed-point iteration, and contraction rates.

The map sends a law mu to the law of Q^{-1} X(T) where X starts from mu at
time 0. Each application draws fresh initial states and fresh noise, so the
iterates are independent Monte Carlo realizations of P^k(mu).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad

from . import rng
from .core import ModelSpec, TimeGrid
from .integrator import continue_ensemble, euler_maruyama
from .measures import N_MAX, EmpiricalMeasure, dbl_estimate, dbl_exact, msq_distance
from .verifier import STEPS_PER_PERIOD

CONVERGE_FACTOR = 1.5
RESOLVE_FACTOR = 3.0
DIVERGENCE_RUN = 5
GATE_FACTOR = 5.0


def _steps(model: ModelSpec, dt: Optional[float]) -> tuple:
    T = model.T
    dt = dt or T / STEPS_PER_PERIOD
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ValueError(f"dt={dt:g} does not divide the period T={T:g}")
    return dt, n


def _initial(mu: EmpiricalMeasure):
    if mu.size == 1:
        return rng.PointMass(mu.support[0])
    return rng.Resample(mu)


def poincare_map(
    model: ModelSpec, mu: EmpiricalMeasure, n_paths: int, dt: Optional[float] = None,
    seed: int = 0, *, path_offset: int = 0, workers: int = 1, scheme: str = "em",
) -> EmpiricalMeasure:
    """Uniform empirical law of Q^{-1} X(T), X(0) resampled from ``mu``."""
    model.affine.require_orthogonal("the period map")
    dt, n = _steps(model, dt)
    ens = euler_maruyama(
        model, _initial(mu), TimeGrid(0.0, dt, n), n_paths, seed,
        record_stride=n, path_offset=path_offset, workers=workers, scheme=scheme,
    )
    return EmpiricalMeasure(model.affine.apply(-1, ens.final))


def poincare_power_direct(
    model: ModelSpec, mu: EmpiricalMeasure, k: int, n_paths: int, dt: Optional[float] = None,
    seed: int = 0, *, path_offset: int = 0, workers: int = 1,
) -> EmpiricalMeasure:
    """Law of Q^{-k} X(kT) from one run over [0, kT]."""
    dt, n = _steps(model, dt)
    ens = euler_maruyama(
        model, _initial(mu), TimeGrid(0.0, dt, k * n), n_paths, seed,
        record_stride=k * n, path_offset=path_offset, workers=workers,
    )
    return EmpiricalMeasure(model.affine.apply(-k, ens.final))


@dataclass
class FixedPointResult:
    measures: list
    gaps: list
    floors: list
    ratios: list
    converged_at: Optional[int]
    verdict: str
    reason: str = ""
    notes: list = field(default_factory=list)

    @property
    def final(self) -> EmpiricalMeasure:
        return self.measures[-1]

    @property
    def resolvable_ratios(self) -> list:
        return [r for r in self.ratios if r is not None]

    def trace(self) -> list:
        return [
            {"k": k, "gap": g, "floor": f, "ratio": r}
            for k, (g, f, r) in enumerate(zip(self.gaps, self.floors, self.ratios))
        ]


def iterate_fixed_point(
    model: ModelSpec, mu0: EmpiricalMeasure, k_max: int, n_paths: int, dt: Optional[float] = None,
    seed: int = 0, *, m_sub: int = 256, repeats: int = 16, mode: str = "resample",
    workers: int = 1, scheme: str = "em",
) -> FixedPointResult:
    """Iterate mu_{k+1} = P(mu_k) until the gap d_k = d_BL(mu_{k+1}, mu_k) reaches the noise floor.

    ``converged_at`` is the number of map applications made when the gap
    first falls to ``1.5 x floor``. In ``mode="continue"`` one ensemble is
    run period by period and mu_k is the law of Q^{-k} X(kT); this agrees in
    law with resampling and serves as a cross-check.
    """
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    if mode not in ("resample", "continue"):
        raise ValueError(f"unknown mode {mode!r}")
    aff = model.affine
    aff.require_orthogonal("the period map")
    dt, n = _steps(model, dt)
    measures = [mu0]
    gaps, floors = [], []
    ens = None
    converged_at = None
    verdict, reason = "non-contracting", f"no convergence within {k_max} iterations"
    rises = 0
    for k in range(k_max):
        if mode == "resample":
            nxt = poincare_map(
                model, measures[-1], n_paths, dt, seed,
                path_offset=k * n_paths, workers=workers, scheme=scheme,
            )
        else:
            if ens is None:
                ens = euler_maruyama(
                    model, _initial(mu0), TimeGrid(0.0, dt, n), n_paths, seed,
                    record_stride=n, workers=workers, scheme=scheme,
                )
            else:
                ens = continue_ensemble(ens, model, n, workers=workers)
            nxt = EmpiricalMeasure(aff.apply(-(k + 1), ens.final))
        measures.append(nxt)
        est = dbl_estimate(nxt, measures[-2], m_sub, repeats, rng.derive_seed(seed, "gap", k))
        gaps.append(est.estimate)
        floors.append(est.noise_floor)
        if est.estimate <= CONVERGE_FACTOR * est.noise_floor:
            converged_at = k + 1
            verdict, reason = "converged", ""
            break
        if k and gaps[-1] > gaps[-2]:
            rises += 1
            if rises >= DIVERGENCE_RUN:
                reason = f"gap increased for {DIVERGENCE_RUN} consecutive iterations"
                break
        else:
            rises = 0
    ratios = []
    for k in range(len(gaps)):
        resolvable = k + 1 < len(gaps) and gaps[k] > RESOLVE_FACTOR * floors[k]
        ratios.append(gaps[k + 1] / gaps[k] if resolvable else None)
    return FixedPointResult(measures, gaps, floors, ratios, converged_at, verdict, reason)


def fixed_point_residual(
    model: ModelSpec, mu_star: EmpiricalMeasure, n_paths: int, dt: Optional[float] = None,
    seed: int = 1, *, m_sub: int = 256, repeats: int = 16, workers: int = 1,
):
    """d_BL(P(mu*), mu*) with noise floor, on streams not used by the iteration."""
    image = poincare_map(model, mu_star, n_paths, dt, seed, workers=workers)
    return dbl_estimate(image, mu_star, m_sub, repeats, rng.derive_seed(seed, "residual", 0))


def _run_to(model, initial, times, n_paths, dt, seed, workers):
    dt, n = _steps(model, dt)
    idx = [int(round(t / dt)) for t in times]
    if min(idx) < 0:
        raise ValueError("times must be >= 0")
    for t, i in zip(times, idx):
        if abs(i * dt - t) > dt / 2:
            raise ValueError(f"t={t:g} is not on the grid")
    total = max(idx)
    stride = 0
    for i in idx:
        stride = gcd(stride, i)
    stride = stride or max(total, 1)
    grid = TimeGrid(0.0, dt, max(total, stride))
    return euler_maruyama(model, initial, grid, n_paths, seed, record_stride=stride, workers=workers)


@dataclass
class DistributionContraction:
    times: np.ndarray
    ratios: np.ndarray
    floor_band: np.ndarray
    d0: float
    period_multiples: list
    period_ratios: list
    passed: bool


def contraction_estimate_distribution(
    model: ModelSpec, muA: EmpiricalMeasure, muB: EmpiricalMeasure, t_grid: Sequence[float],
    n_paths: int, seed: int = 0, dt: Optional[float] = None, *, m_sub: int = 256,
    repeats: int = 16, workers: int = 1,
) -> DistributionContraction:
    """a(t) = d_BL(law_A(t), law_B(t)) / d_BL(muA, muB) with the floor band floor(t) / d_BL(muA, muB)."""
    if max(muA.size, muB.size) <= N_MAX:
        d0 = dbl_exact(muA, muB)
        floor0 = dbl_estimate(muA, muA, min(m_sub, N_MAX), repeats, rng.derive_seed(seed, "gate", 0)).noise_floor
    else:
        e = dbl_estimate(muA, muB, m_sub, repeats, rng.derive_seed(seed, "gate", 0))
        d0, floor0 = e.estimate, e.noise_floor
    if not d0 > 0 or d0 < GATE_FACTOR * floor0:
        raise ValueError(
            f"initial distance {d0:.3g} is below {GATE_FACTOR:g} x floor {floor0:.3g}; ratio is meaningless"
        )
    times = [float(t) for t in t_grid]
    ens_a = _run_to(model, _initial(muA), times, n_paths, dt, seed, workers)
    ens_b = _run_to(model, _initial(muB), times, n_paths, dt, seed, workers)
    ratios, band = [], []
    for i, t in enumerate(times):
        e = dbl_estimate(
            EmpiricalMeasure(ens_a.at(t)), EmpiricalMeasure(ens_b.at(t)),
            m_sub, repeats, rng.derive_seed(seed, "contraction", i),
        )
        ratios.append(e.estimate / d0)
        band.append(e.noise_floor / d0)
    T = model.T
    multiples = [(int(round(t / T)), r) for t, r in zip(times, ratios) if t > 0 and abs(t / T - round(t / T)) < 1e-9]
    tail = [r for _, r in multiples[len(multiples) - max(1, len(multiples) // 3):]]
    return DistributionContraction(
        np.array(times), np.array(ratios), np.array(band), d0,
        [k for k, _ in multiples], [r for _, r in multiples], bool(tail and max(tail) < 1.0),
    )


@dataclass
class MsqContraction:
    times: np.ndarray
    msq: np.ndarray
    stderr: np.ndarray
    ratios: np.ndarray
    slope: Optional[float]
    alpha_mean: Optional[float]
    fit_window: tuple


def mean_alpha(alpha, t: float) -> float:
    """(1/t) times the integral of alpha over [0, t]."""
    val, _ = quad(alpha, 0.0, t, limit=max(50, int(10 * t)))
    return float(val / t)


def contraction_estimate_msq(
    model: ModelSpec, initialA, initialB, t_grid: Sequence[float], n_paths: int, seed: int = 0,
    dt: Optional[float] = None, *, fit_window: Optional[tuple] = None, workers: int = 1,
) -> MsqContraction:
    """a_2(t) = msq(t) / msq(0) for synchronously coupled ensembles.

    Both ensembles use the same seed, so path p sees one Brownian path in
    each. ``slope`` is the least-squares slope of log msq(t) over nodes in
    ``fit_window`` where msq is positive; ``alpha_mean`` is the average of
    the model's alpha over [0, end of window].
    """
    times = [float(t) for t in t_grid]
    if 0.0 not in times:
        times = [0.0] + times
    ens_a = _run_to(model, initialA, times, n_paths, dt, seed, workers)
    ens_b = _run_to(model, initialB, times, n_paths, dt, seed, workers)
    vals = [msq_distance(ens_a, ens_b, t) for t in times]
    msq = np.array([v.value for v in vals])
    se = np.array([v.stderr for v in vals])
    if msq[0] == 0:
        raise ValueError("initial laws coincide pathwise; the ratio is 0/0")
    t_arr = np.array(times)
    lo, hi = fit_window or (t_arr[1], t_arr[-1])
    sel = (t_arr >= lo - 1e-12) & (t_arr <= hi + 1e-12) & (msq > 0)
    slope = float(np.polyfit(t_arr[sel], np.log(msq[sel]), 1)[0]) if sel.sum() >= 2 else None
    alpha_mean = mean_alpha(model.alpha, hi) if model.alpha is not None and hi > 0 else None
    return MsqContraction(t_arr, msq, se, msq / msq[0], slope, alpha_mean, (lo, hi))
