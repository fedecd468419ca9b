"""Built-in models: the cubic forced example, a linear moment oracle, a drift control."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .core import AffineStructure, ModelSpec


def build_Q(omegas: Sequence[float], T: float) -> AffineStructure:
    """Block-diagonal rotation with blocks [[cos wT, sin wT], [-sin wT, cos wT]]."""
    omegas = list(omegas)
    if len(omegas) < 1:
        raise ValueError("need at least one frequency")
    if not T > 0:
        raise ValueError("T must be positive")
    Q = np.zeros((2 * len(omegas), 2 * len(omegas)))
    for i, w in enumerate(omegas):
        c, s = np.cos(w * T), np.sin(w * T)
        Q[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = [[c, s], [-s, c]]
    return AffineStructure(Q, T)


def e_of_t(omegas: Sequence[float], t) -> np.ndarray:
    """Forcing (sin w1 t, cos w1 t, ..., sin wm t, cos wm t); vectorised over t."""
    w = np.asarray(omegas, dtype=float)
    t = np.asarray(t, dtype=float)
    wt = np.multiply.outer(t, w)
    out = np.empty(wt.shape[:-1] + (2 * len(w),))
    out[..., 0::2] = np.sin(wt)
    out[..., 1::2] = np.cos(wt)
    return out


@dataclass(frozen=True)
class Harmonic:
    """t -> const + sin * sin(freq t) + cos * cos(freq t)."""

    const: float = 0.0
    sin: float = 0.0
    cos: float = 0.0
    freq: float = 1.0

    def __call__(self, t):
        return self.const + self.sin * np.sin(self.freq * t) + self.cos * np.cos(self.freq * t)

    def to_dict(self) -> dict:
        return {"const": self.const, "sin": self.sin, "cos": self.cos, "freq": self.freq}

    @classmethod
    def coerce(cls, v) -> "Harmonic | Callable":
        if isinstance(v, dict):
            return cls(**v)
        if isinstance(v, (int, float)):
            return cls(const=float(v))
        return v


DEFAULT_A = Harmonic(const=1.0, sin=0.5)
DEFAULT_C = Harmonic(const=0.2, sin=0.2)


def _describe(fn) -> object:
    return fn.to_dict() if hasattr(fn, "to_dict") else repr(fn)


def egcond_integral(c: Callable, b: float, T: float) -> float:
    """Integral of c(t)^2 - 2b over one period."""
    val, _ = quad(lambda s: c(s) ** 2 - 2.0 * b, 0.0, T, limit=200)
    return float(val)


def example41(
    a: Callable = DEFAULT_A,
    b: float = 0.5,
    c: Callable = DEFAULT_C,
    omegas: Sequence[float] = (1.0,),
    T: float = 2 * np.pi,
    n_probes: int = 64,
) -> ModelSpec:
    """dX = (-a(t)|X|^2 X - bX + e(t)) dt + (c(t)X + e(t)) dW with scalar W.

    ``a`` and ``c`` must be T-periodic, ``a >= 0``, ``0 < b < 1``, and the
    period integral of c^2 - 2b must be negative; all three are checked.
    """
    a, c = Harmonic.coerce(a), Harmonic.coerce(c)
    omegas = tuple(float(w) for w in omegas)
    if not 0 < b < 1:
        raise ValueError(f"b must lie in (0, 1), got {b}")
    probes = np.linspace(0.0, T, n_probes, endpoint=False)
    a_vals = np.array([a(s) for s in probes])
    if (a_vals < 0).any():
        raise ValueError(f"a(t) < 0 at t={probes[np.argmin(a_vals)]:g}")
    for name, fn in (("a", a), ("c", c)):
        if max(abs(fn(s + T) - fn(s)) for s in probes) > 1e-9:
            raise ValueError(f"{name}(t) is not T-periodic")
    eps = egcond_integral(c, b, T)
    if not eps < 0:
        raise ValueError(f"integral of c^2 - 2b over a period is {eps:.6g}, must be negative")
    aff = build_Q(omegas, T)
    l = 2 * len(omegas)
    w = np.array(omegas)

    def forcing(t):
        wt = w * t
        out = np.empty(l)
        out[0::2] = np.sin(wt)
        out[1::2] = np.cos(wt)
        return out

    def drift(t, X):
        r2 = np.einsum("...i,...i->...", X, X)[..., None]
        out = X * (-a(t) * r2 - b)
        out += forcing(t)
        return out

    def diffusion(t, X):
        out = c(t) * X
        out += forcing(t)
        return out[..., None]

    def jac_f(t, x):
        x = np.asarray(x, dtype=float)
        return -a(t) * (x @ x * np.eye(l) + 2.0 * np.outer(x, x)) - b * np.eye(l)

    def jac_g(t, x):
        return [c(t) * np.eye(l)]

    def alpha(t):
        return c(t) ** 2 - 2.0 * b

    params = {"a": _describe(a), "b": b, "c": _describe(c), "omegas": list(omegas), "T": T, "egcond": eps}
    return ModelSpec(
        l=l, m=1, drift=drift, diffusion=diffusion, affine=aff, name="example41",
        jac_f=jac_f, jac_g=jac_g, alpha=alpha, params=params,
    )


def gronwall_inputs(model: ModelSpec, second_moment0: float, c: Callable | None = None):
    """(A, B, K) for the Gronwall envelope of E|X(t)|^2 in the cubic example.

    A = E|X0|^2 + 3m/(2b), B = (2C + 1 - b)/2 * exp(-t), K = exp(b t) with
    C the largest value of c^2 over a period and m the number of frequencies.
    """
    p = model.params
    b, T = p["b"], p["T"]
    if c is None:
        if not isinstance(p["c"], dict):
            raise ValueError("c(t) is not recorded in the model parameters; pass it explicitly")
        c = Harmonic.coerce(p["c"])
    ts = np.linspace(0.0, T, 4097)
    C = float(max(c(s) ** 2 for s in ts))
    nfreq = len(p["omegas"])
    A0 = second_moment0 + 3.0 * nfreq / (2.0 * b)
    coef = (2.0 * C + 1.0 - b) / 2.0
    return (lambda t: A0 + 0.0 * t), (lambda t: coef * np.exp(-t)), (lambda t: np.exp(b * t))


@dataclass
class LinearOracle:
    model: ModelSpec
    b: float
    c: float
    omegas: tuple

    def forcing(self, t) -> np.ndarray:
        if not self.omegas:
            return np.zeros(self.model.l)
        return e_of_t(self.omegas, t)

    def _rhs(self, t, m, S):
        e = self.forcing(t)
        em = np.outer(e, m)
        dm = -self.b * m + e
        dS = (self.c**2 - 2 * self.b) * S + (1 + self.c) * (em + em.T) + np.outer(e, e)
        return dm, dS

    def moments(self, mean0, second0, times: Sequence[float], dt: float, t0: float = 0.0):
        """E[X(t)] and E[X X^T](t) at ``times`` by RK4 with step dt/10."""
        m = np.array(mean0, dtype=float)
        S = np.array(second0, dtype=float)
        t = t0
        h_max = dt / 10.0
        means, seconds = [], []
        for target in times:
            if target < t - 1e-12:
                raise ValueError("times must be non-decreasing and >= t0")
            n = int(np.ceil((target - t) / h_max - 1e-9))
            h = (target - t) / n if n else 0.0
            for _ in range(n):
                k1m, k1S = self._rhs(t, m, S)
                k2m, k2S = self._rhs(t + h / 2, m + h / 2 * k1m, S + h / 2 * k1S)
                k3m, k3S = self._rhs(t + h / 2, m + h / 2 * k2m, S + h / 2 * k2S)
                k4m, k4S = self._rhs(t + h, m + h * k3m, S + h * k3S)
                m = m + h / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
                S = S + h / 6 * (k1S + 2 * k2S + 2 * k3S + k4S)
                t += h
            t = target
            means.append(m.copy())
            seconds.append(S.copy())
        return np.array(means), np.array(seconds)


def linear_oracle(
    b: float = 0.5,
    c: float = 0.2,
    omegas: Sequence[float] = (1.0,),
    T: float = 2 * np.pi,
    dim: int = 2,
) -> LinearOracle:
    """dX = (-bX + e(t)) dt + (cX + e(t)) dW with closed first and second moments.

    With no frequencies the forcing is zero, the state dimension is ``dim``
    and Q is the identity.
    """
    if not b > 0:
        raise ValueError("b must be positive")
    omegas = tuple(float(w) for w in omegas)
    if omegas:
        aff = build_Q(omegas, T)
        l = 2 * len(omegas)
        w = np.array(omegas)

        def forcing(t):
            out = np.empty(l)
            out[0::2] = np.sin(w * t)
            out[1::2] = np.cos(w * t)
            return out
    else:
        aff = AffineStructure(np.eye(dim), T)
        l = dim

        def forcing(t):
            return np.zeros(l)

    def drift(t, X):
        return -b * X + forcing(t)

    def diffusion(t, X):
        return (c * X + forcing(t))[..., None]

    def jac_f(t, x):
        return -b * np.eye(l)

    def jac_g(t, x):
        return [c * np.eye(l)]

    def alpha(t):
        return c**2 - 2.0 * b

    model = ModelSpec(
        l=l, m=1, drift=drift, diffusion=diffusion, affine=aff, name="linear_oracle",
        jac_f=jac_f, jac_g=jac_g, alpha=alpha,
        params={"b": b, "c": c, "omegas": list(omegas), "T": T, "dim": l},
    )
    return LinearOracle(model, b, c, omegas)


def drift_control(v: Sequence[float]) -> ModelSpec:
    """f = v, g = I, Q = I, T = 1: the law drifts by v every period."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.any(v):
        raise ValueError("v must be non-zero")
    l = v.size
    eye = np.eye(l)

    def drift(t, X):
        return np.broadcast_to(v, X.shape).copy()

    def diffusion(t, X):
        return np.broadcast_to(eye, X.shape[:-1] + (l, l)).copy()

    return ModelSpec(
        l=l, m=l, drift=drift, diffusion=diffusion, affine=AffineStructure(eye, 1.0),
        name="drift_control", jac_f=lambda t, x: np.zeros((l, l)),
        jac_g=lambda t, x: [np.zeros((l, l)) for _ in range(l)],
        params={"v": v.tolist()},
    )


BUILTINS = {
    "example41": lambda p: example41(**p),
    "linear_oracle": lambda p: linear_oracle(**p).model,
    "drift_control": lambda p: drift_control(**p),
}


def build_model(name: str, params: dict | None = None) -> ModelSpec:
    """Construct a built-in model from its config name and parameter object."""
    if name not in BUILTINS:
        raise KeyError(f"unknown model {name!r}; built-ins are {sorted(BUILTINS)}")
    return BUILTINS[name](dict(params or {}))
