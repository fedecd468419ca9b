"""Sampled Lyapunov certificates for mean-square contraction.

The checks here evaluate inequalities at finitely many (t, x, y); a pass
means "no counterexample among the samples", not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .core import ModelSpec

FD_STEP = 1e-6
FD_STEP2 = 1e-4
RADIAL_LADDER = (0.01, 0.1, 1.0, 5.0, 25.0)


def _step(x, rel):
    return rel * (1.0 + np.abs(x))


def jacobian_fd(fn: Callable, x, rel: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of a vector function of x."""
    x = np.asarray(x, dtype=float)
    h = _step(x, rel)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h[i]))
    J = np.stack(cols, axis=-1)
    if not np.isfinite(J).all():
        raise FloatingPointError(f"non-finite finite-difference Jacobian at x={x.tolist()}")
    return J


def drift_jacobian(model: ModelSpec, t: float, x, fd: bool = False) -> np.ndarray:
    if model.jac_f is not None and not fd:
        return np.asarray(model.jac_f(t, x), dtype=float)
    return jacobian_fd(lambda z: model.f(t, z), x)


def diffusion_jacobians(model: ModelSpec, t: float, x, fd: bool = False) -> list:
    """Jacobians of each diffusion column g_i(t, .) at x."""
    if model.jac_g is not None and not fd:
        return [np.asarray(J, dtype=float) for J in model.jac_g(t, x)]
    return [jacobian_fd(lambda z, i=i: model.g(t, z)[:, i], x) for i in range(model.m)]


@dataclass
class LyapunovSpec:
    """A Lyapunov function, quadratic ``V = z^T D(t) z`` or general with derivative callables.

    For the quadratic form, ``dD`` is D'(t) (central difference with step
    ``1e-5 * T`` if omitted). For a general ``V(t, z)``, ``grad`` and ``hess``
    are optional; missing pieces are finite-differenced.
    """

    D: Optional[Callable] = None
    dD: Optional[Callable] = None
    V: Optional[Callable] = None
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    dVdt: Optional[Callable] = None
    alpha: Optional[Callable] = None
    T: float = 1.0

    def __post_init__(self):
        if (self.D is None) == (self.V is None):
            raise ValueError("give exactly one of a matrix function D or a general V")
        if self.D is not None:
            for t in (0.0, 0.37 * self.T, 0.81 * self.T):
                M = np.asarray(self.D(t), dtype=float)
                if np.abs(M - M.T).max() > 1e-10:
                    raise ValueError(f"D({t:g}) is not symmetric")

    @classmethod
    def quadratic(cls, D, dD=None, alpha=None, T: float = 1.0) -> "LyapunovSpec":
        if not callable(D):
            D0 = np.array(D, dtype=float)
            D = lambda t: D0  # noqa: E731
            dD = dD or (lambda t: np.zeros_like(D0))
        return cls(D=D, dD=dD, alpha=alpha, T=T)

    @classmethod
    def half_norm(cls, l: int, alpha=None) -> "LyapunovSpec":
        """V(x) = |x|^2 / 2."""
        return cls.quadratic(0.5 * np.eye(l), alpha=alpha)

    @property
    def is_quadratic(self) -> bool:
        return self.D is not None

    def Dmat(self, t) -> np.ndarray:
        return np.asarray(self.D(t), dtype=float)

    def Dprime(self, t) -> np.ndarray:
        if self.dD is not None:
            return np.asarray(self.dD(t), dtype=float)
        h = 1e-5 * self.T
        return (self.Dmat(t + h) - self.Dmat(t - h)) / (2 * h)

    def value(self, t, z) -> float:
        z = np.asarray(z, dtype=float)
        if self.is_quadratic:
            return float(z @ self.Dmat(t) @ z)
        return float(self.V(t, z))

    def time_derivative(self, t, z, fd: bool = False) -> float:
        z = np.asarray(z, dtype=float)
        if self.is_quadratic and not fd:
            return float(z @ self.Dprime(t) @ z)
        if self.dVdt is not None and not fd:
            return float(self.dVdt(t, z))
        h = FD_STEP * (1.0 + abs(t))
        return (self.value(t + h, z) - self.value(t - h, z)) / (2 * h)

    def gradient(self, t, z, fd: bool = False) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.is_quadratic and not fd:
            D = self.Dmat(t)
            return (D + D.T) @ z
        if self.grad is not None and not fd:
            return np.asarray(self.grad(t, z), dtype=float)
        h = _step(z, FD_STEP)
        out = np.empty_like(z)
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = h[i]
            out[i] = (self.value(t, z + e) - self.value(t, z - e)) / (2 * h[i])
        return out

    def hessian(self, t, z, fd: bool = False) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.is_quadratic and not fd:
            D = self.Dmat(t)
            return D + D.T
        if self.hess is not None and not fd:
            H = np.asarray(self.hess(t, z), dtype=float)
            if np.abs(H - H.T).max() > 1e-8 * max(1.0, np.abs(H).max()):
                raise ValueError("supplied Hessian is not symmetric")
            return H
        # second differences need a larger step than first differences
        h = _step(z, FD_STEP2)
        n = z.size
        H = np.empty((n, n))
        v0 = self.value(t, z)
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = h[i]
            H[i, i] = (self.value(t, z + ei) - 2 * v0 + self.value(t, z - ei)) / h[i] ** 2
            for j in range(i):
                ej = np.zeros(n)
                ej[j] = h[j]
                H[i, j] = H[j, i] = (
                    self.value(t, z + ei + ej) - self.value(t, z + ei - ej)
                    - self.value(t, z - ei + ej) + self.value(t, z - ei - ej)
                ) / (4 * h[i] * h[j])
        return H


def generator_LV(model: ModelSpec, V: LyapunovSpec, t: float, x, y, fd: bool = False) -> float:
    """Generator of V along the difference of two solutions at (x, y).

    dV/dt(t, x-y) + <f(t,x) - f(t,y), grad V(t, x-y)>
        + 1/2 tr[(g(t,x) - g(t,y))^T Hess V(t, x-y) (g(t,x) - g(t,y))]
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = x - y
    df = model.f(t, x) - model.f(t, y)
    dg = model.g(t, x) - model.g(t, y)
    val = (
        V.time_derivative(t, z, fd)
        + df @ V.gradient(t, z, fd)
        + 0.5 * np.trace(dg.T @ V.hessian(t, z, fd) @ dg)
    )
    if not np.isfinite(val):
        raise FloatingPointError(f"non-finite generator at t={t:g}, x={x.tolist()}, y={y.tolist()}")
    return float(val)


def _generator_batch(model: ModelSpec, V: LyapunovSpec, t: float, X, Y) -> np.ndarray:
    """Vectorised generator for quadratic V with analytic derivatives."""
    Z = X - Y
    D = V.Dmat(t)
    S = D + D.T
    dF = model.drift(t, X) - model.drift(t, Y)
    dG = model.diffusion(t, X) - model.diffusion(t, Y)
    out = np.einsum("ni,ij,nj->n", Z, V.Dprime(t), Z)
    out += np.einsum("ni,ij,nj->n", dF, S, Z)
    out += 0.5 * np.einsum("nik,ij,njk->n", dG, S, dG)
    return out


@dataclass
class H6Result:
    A_est: float
    B_est: float
    passed: bool
    certified: bool
    note: str = ""


def h6_check(V: LyapunovSpec, t_samples: Sequence[float], x_samples=None) -> H6Result:
    """Bounds A|x|^2 <= V(t,x) <= B|x|^2 estimated over the samples."""
    if V.is_quadratic:
        lo, hi = np.inf, -np.inf
        for t in t_samples:
            D = V.Dmat(t)
            w = np.linalg.eigvalsh(0.5 * (D + D.T))
            lo, hi = min(lo, w[0]), max(hi, w[-1])
        lo = 0.0 if abs(lo) < 1e-14 else lo
        return H6Result(float(lo), float(hi), bool(lo > 0), True, "eigenvalues of D(t) on the time samples")
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    ratios = [
        V.value(t, x) / (x @ x) for t in t_samples for x in x_samples if x @ x > 0
    ]
    lo, hi = float(min(ratios)), float(max(ratios))
    return H6Result(lo, hi, bool(lo > 0 and np.isfinite(hi)), False, "sampled, not certified")


def radial_pairs(l: int, n_samples: int, seed: int, R: float = 5.0) -> tuple:
    """Sample (x, y) pairs: uniform in the box [-R, R]^l, plus a radial ladder of norms."""
    gen = np.random.default_rng(seed)
    X = gen.uniform(-R, R, size=(n_samples, l))
    Y = gen.uniform(-R, R, size=(n_samples, l))
    xs, ys = [X], [Y]
    for rx in RADIAL_LADDER:
        for ry in RADIAL_LADDER:
            k = max(4, n_samples // 25)
            u = gen.normal(size=(k, l))
            w = gen.normal(size=(k, l))
            xs.append(rx * u / np.linalg.norm(u, axis=1, keepdims=True))
            ys.append(ry * w / np.linalg.norm(w, axis=1, keepdims=True))
    # nearly coincident pairs probe the linearised regime
    base = gen.uniform(-R, R, size=(n_samples, l))
    for eps in (1e-3, 1e-2):
        xs.append(base)
        ys.append(base + eps * gen.normal(size=base.shape))
    return np.vstack(xs), np.vstack(ys)


def alpha_integrals(alpha: Callable, horizons: Sequence[float], nodes_per_unit: int = 200) -> list:
    """Trapezoid integrals of alpha over [0, h] for each horizon h."""
    out = []
    for h in horizons:
        ts = np.linspace(0.0, h, max(2, int(np.ceil(h * nodes_per_unit))) + 1)
        out.append(float(trapezoid([alpha(s) for s in ts], ts)))
    return out


def _integral_diverges(vals: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:])) and vals[-1] < -1.0


@dataclass
class H7Result:
    max_residual: float
    argmax: tuple
    passed: bool
    tol: float
    alpha_integrals: list
    alpha_diverges: bool
    n_evaluations: int
    note: str = "sampled, not a proof"


def h7_check(
    model: ModelSpec,
    V: LyapunovSpec,
    alpha: Optional[Callable] = None,
    t_grid: Optional[Sequence[float]] = None,
    n_samples: int = 400,
    seed: int = 0,
    R: float = 5.0,
    tol: Optional[float] = None,
    fd: bool = False,
) -> H7Result:
    """Largest sampled value of LV(t, x-y) - alpha(t) V(t, x-y); pass iff it is <= tol.

    The divergence of the alpha integral is reported separately in ``alpha_diverges``.
    """
    alpha = alpha or V.alpha or model.alpha
    if alpha is None:
        raise ValueError("no alpha supplied and the model exposes none")
    T = model.T
    if t_grid is None:
        t_grid = np.linspace(0.0, T, 17)
    analytic = V.is_quadratic and not fd
    tol = tol if tol is not None else (1e-8 if analytic else 1e-6)
    X, Y = radial_pairs(model.l, n_samples, seed, R)
    best, arg = -np.inf, ()
    for t in t_grid:
        if analytic:
            Z = X - Y
            lv = _generator_batch(model, V, t, X, Y)
            res = lv - alpha(t) * np.einsum("ni,ij,nj->n", Z, V.Dmat(t), Z)
        else:
            res = np.array([
                generator_LV(model, V, t, x, y, fd) - alpha(t) * V.value(t, x - y)
                for x, y in zip(X, Y)
            ])
        i = int(np.argmax(res))
        if res[i] > best:
            best, arg = float(res[i]), (float(t), X[i].tolist(), Y[i].tolist())
    integrals = alpha_integrals(alpha, [10 * T, 20 * T, 40 * T])
    diverges = _integral_diverges(integrals)
    return H7Result(
        max_residual=best, argmax=arg, passed=bool(best <= tol), tol=tol,
        alpha_integrals=integrals, alpha_diverges=diverges,
        n_evaluations=len(t_grid) * len(X),
    )


@dataclass
class H8Result:
    min_margin: float
    argmin: tuple
    periodicity_defect: float
    alpha_integral_trace: list
    passed: bool
    margin_tol: float
    note: str = "sampled, not a proof"
    failures: list = field(default_factory=list)


def h8_margin(model: ModelSpec, D: Callable, dD: Callable, alpha: Callable, t, x, y, fd: bool = False) -> float:
    """Smallest eigenvalue of alpha D - (D' + 2 Jf(x)^T D + sum_i Jg_i(x)^T D Jg_i(y)), symmetrised."""
    Dt = np.asarray(D(t), dtype=float)
    Jf = drift_jacobian(model, t, x, fd)
    Jgx = diffusion_jacobians(model, t, x, fd)
    Jgy = diffusion_jacobians(model, t, y, fd)
    M = dD(t) + 2.0 * Jf.T @ Dt + sum(a.T @ Dt @ b for a, b in zip(Jgx, Jgy))
    A = alpha(t) * Dt - M
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def h8_check(
    model: ModelSpec,
    D,
    alpha: Optional[Callable] = None,
    t_grid: Optional[Sequence[float]] = None,
    n_samples: int = 100,
    seed: int = 0,
    K: int = 20,
    dD: Optional[Callable] = None,
    R: float = 5.0,
    margin_tol: float = 1e-10,
    fd: bool = False,
) -> H8Result:
    """Sampled matrix criterion with D(kT) = D(0) and a divergent alpha integral."""
    spec = LyapunovSpec.quadratic(D, dD, T=model.T)
    alpha = alpha or model.alpha
    if alpha is None:
        raise ValueError("no alpha supplied and the model exposes none")
    T = model.T
    if t_grid is None:
        t_grid = np.linspace(0.0, T, 9)
    X, Y = radial_pairs(model.l, n_samples, seed, R)
    best, arg = np.inf, ()
    for t in t_grid:
        for x, y in zip(X, Y):
            mg = h8_margin(model, spec.Dmat, spec.Dprime, alpha, t, x, y, fd)
            if mg < best:
                best, arg = mg, (float(t), x.tolist(), y.tolist())
    D0 = spec.Dmat(0.0)
    defect = max(float(np.abs(spec.Dmat(k * T) - D0).max()) for k in range(K + 1))
    trace = alpha_integrals(alpha, [k * T for k in range(1, K + 1)])
    failures = []
    if not best > margin_tol:
        failures.append("matrix inequality")
    if defect > 1e-9:
        failures.append("D(kT) != D(0)")
    if not _integral_diverges(trace):
        failures.append("alpha integral does not decrease below -1")
    return H8Result(best, arg, defect, trace, not failures, margin_tol, failures=failures)


def gronwall_envelope(
    A: Callable,
    B: Callable,
    K: Callable,
    t1: float,
    t2: float,
    n_nodes: int = 64,
    rtol: float = 1e-6,
    max_refine: int = 12,
) -> tuple:
    """Nodes and values of A(t) + B(t) int_{t1}^t A(s)K(s) exp(int_s^t B K dr) ds.

    Trapezoid quadrature on a grid refined by halving, with Richardson
    extrapolation, until successive estimates agree to ``rtol``.
    """
    if n_nodes < 8:
        raise ValueError("n_nodes must be >= 8")
    nodes = np.linspace(t1, t2, n_nodes)

    def on_grid(sub: int) -> np.ndarray:
        ts = np.linspace(t1, t2, (n_nodes - 1) * sub + 1)
        a, b, k = (np.broadcast_to(np.asarray(fn(ts), dtype=float), ts.shape) for fn in (A, B, K))
        if (b < 0).any() or (k < 0).any():
            raise ValueError("B and K must be non-negative")
        h = ts[1] - ts[0]
        bk = b * k
        I = np.concatenate([[0.0], np.cumsum(0.5 * h * (bk[1:] + bk[:-1]))])
        if I[-1] - I[0] > 700:
            raise OverflowError("exp of the integrated B*K overflows on this interval")
        w = a * k * np.exp(-I)
        inner = np.concatenate([[0.0], np.cumsum(0.5 * h * (w[1:] + w[:-1]))])
        vals = a + b * np.exp(I) * inner
        return vals[::sub]

    prev = on_grid(1)
    prev_rich = None
    sub = 1
    for _ in range(max_refine):
        sub *= 2
        cur = on_grid(sub)
        rich = (4 * cur - prev) / 3
        if prev_rich is not None:
            scale = np.maximum(np.abs(rich), 1e-300)
            if np.max(np.abs(rich - prev_rich) / scale) < rtol or np.allclose(rich, prev_rich, rtol=rtol, atol=0):
                return nodes, rich
        prev, prev_rich = cur, rich
    raise RuntimeError(f"Gronwall quadrature did not converge after {max_refine} refinements")
