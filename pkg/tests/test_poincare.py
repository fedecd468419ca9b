import numpy as np
import pytest
from scipy.linalg import expm

from affinesde import poincare as P
from affinesde.measures import EmpiricalMeasure, dbl_estimate, point_mass
from affinesde.models import drift_control, example41
from affinesde.rng import PointMass
from conftest import make_model

J = np.array([[0.0, 1.0], [-1.0, 0.0]])


def _identity_model():
    return make_model(lambda t, X: np.zeros_like(X), lambda t, X: np.zeros(X.shape + (1,)), l=2)


def test_identity_map_resamples():
    gen = np.random.default_rng(0)
    mu = EmpiricalMeasure(gen.normal(size=(600, 2)))
    image = P.poincare_map(_identity_model(), mu, 1000, seed=1)
    e = dbl_estimate(image, mu, 128, 8, seed=2)
    assert e.estimate <= 1.5 * e.noise_floor


def test_identity_converges_at_one():
    res = P.iterate_fixed_point(_identity_model(), point_mass([1.0, 2.0]), 5, 50, m_sub=16, repeats=3)
    assert res.converged_at == 1 and res.verdict == "converged" and res.gaps == [0.0]


def test_rotation_flow_fixed_point():
    w, T = 1.3, 1.0
    Q = expm(w * T * J)  # the flow of x' = w J x over one period
    m = make_model(lambda t, X: w * X @ J.T, lambda t, X: np.zeros(X.shape + (1,)), l=2, Q=Q, T=T)
    x0 = np.array([1.0, 0.5])
    image = P.poincare_map(m, point_mass(x0), 4, dt=1e-4)
    assert np.all(np.linalg.norm(image.support - x0, axis=1) <= 1e-3)


def test_drift_control_non_contracting():
    res = P.iterate_fixed_point(drift_control([5.0, 0.0]), point_mass([0.0, 0.0]), 8, 1000, seed=5,
                                m_sub=128, repeats=4)
    assert res.verdict == "non-contracting" and res.converged_at is None
    assert all(g > 1.0 for g in res.gaps)


def test_example_iteration_and_trace():
    m = example41()
    res = P.iterate_fixed_point(m, point_mass([0.0, 0.0]), 10, 2000, seed=3, m_sub=128, repeats=8)
    assert res.verdict == "converged" and res.converged_at <= 10
    assert all(r < 1 for r in res.resolvable_ratios)
    trace = res.trace()
    assert set(trace[0]) == {"k", "gap", "floor", "ratio"}


def test_continue_mode_agrees():
    m = example41()
    res = P.iterate_fixed_point(m, point_mass([0.0, 0.0]), 6, 2000, seed=3, m_sub=128, repeats=8, mode="continue")
    assert res.verdict == "converged"
    other = P.iterate_fixed_point(m, point_mass([0.0, 0.0]), 6, 2000, seed=3, m_sub=128, repeats=8)
    e = dbl_estimate(res.final, other.final, 128, 8, seed=4)
    assert e.estimate <= 1.5 * e.noise_floor


def test_semigroup_property():
    m = example41()
    mu = point_mass([2.0, -1.0])
    twice = P.poincare_map(m, P.poincare_map(m, mu, 3000, seed=1), 3000, seed=1, path_offset=3000)
    direct = P.poincare_power_direct(m, mu, 2, 3000, seed=2)
    e = dbl_estimate(twice, direct, 128, 8, seed=5)
    assert e.estimate <= 1.5 * e.noise_floor


def test_distribution_contraction_decay():
    decay = make_model(lambda t, X: -X, lambda t, X: np.zeros(X.shape + (1,)))
    res = P.contraction_estimate_distribution(decay, point_mass([0.0]), point_mass([1.0]), [0.5, 1.0, 2.0], 4,
                                              m_sub=4, repeats=3)
    np.testing.assert_allclose(res.ratios, np.exp(-res.times), atol=2e-3)
    assert res.passed


def test_distribution_contraction_gate():
    mu = point_mass([1.0])
    decay = make_model(lambda t, X: -X, lambda t, X: np.zeros(X.shape + (1,)))
    with pytest.raises(ValueError, match="initial distance"):
        P.contraction_estimate_distribution(decay, mu, mu, [1.0], 4, m_sub=4, repeats=3)


def test_msq_contraction_decay():
    decay = make_model(lambda t, X: -X, lambda t, X: np.zeros(X.shape + (1,)), alpha=lambda t: -2.0)
    res = P.contraction_estimate_msq(decay, PointMass([1.0]), PointMass([2.0]), [0.5, 1.0, 2.0], 4)
    np.testing.assert_allclose(res.ratios[1:], np.exp(-2 * res.times[1:]), rtol=5e-3)
    assert abs(res.slope + 2.0) < 0.01 and res.alpha_mean == pytest.approx(-2.0)


def test_msq_contraction_identical_rejected():
    decay = make_model(lambda t, X: -X, lambda t, X: np.zeros(X.shape + (1,)))
    with pytest.raises(ValueError, match="0/0"):
        P.contraction_estimate_msq(decay, PointMass([1.0]), PointMass([1.0]), [1.0], 4)


def test_fixed_point_residual_beats_generic_start():
    from affinesde import verifier as V
    from affinesde.core import TimeGrid
    from affinesde.integrator import euler_maruyama
    from affinesde.rng import Resample

    m = example41()
    T = m.T
    res = P.iterate_fixed_point(m, point_mass([0.0, 0.0]), 6, 3000, seed=8, m_sub=128, repeats=4)
    grid = TimeGrid(0.0, T / 1200, 2400)
    t_grid = [0.0, T / 4, T / 2]
    fixed = euler_maruyama(m, Resample(res.final), grid, 3000, 9, record_stride=300)
    generic = euler_maruyama(m, PointMass([3.0, 3.0]), grid, 3000, 9, record_stride=300)
    rf = V.periodicity_residual(fixed, m.affine, t_grid, 0, m_sub=128, repeats=4)
    rg = V.periodicity_residual(generic, m.affine, t_grid, 0, m_sub=128, repeats=4)
    assert rf.passed and not rg.passed
    assert max(rf.statistics) < max(rg.statistics)


def test_contraction_ratios_orthogonally_invariant():
    theta = 1.1
    U = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    m = example41()
    conj = make_model(
        lambda t, X: m.drift(t, X @ U) @ U.T,
        lambda t, X: np.einsum("ij,njk->nik", U, m.diffusion(t, X @ U)),
        l=2, Q=U @ m.affine.Q @ U.T, T=m.T,
    )
    a, b = np.array([1.5, 0.0]), np.array([-1.0, 1.0])
    t_grid = [m.T / 2, m.T]
    base = P.contraction_estimate_distribution(m, point_mass(a), point_mass(b), t_grid, 2000, seed=3,
                                               m_sub=128, repeats=8)
    rotated = P.contraction_estimate_distribution(conj, point_mass(U @ a), point_mass(U @ b), t_grid, 2000,
                                                  seed=3, m_sub=128, repeats=8)
    assert base.d0 == pytest.approx(rotated.d0, abs=1e-12)
    assert np.all(np.abs(base.ratios - rotated.ratios) <= base.floor_band + rotated.floor_band)
