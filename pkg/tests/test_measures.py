import numpy as np
import pytest
from hypothesis import given, strategies as st

from affinesde.core import Ensemble, TimeGrid
from affinesde.measures import (
    EmpiricalMeasure,
    dbl_estimate,
    dbl_exact,
    dbl_lp,
    msq_distance,
    point_mass,
    wasserstein1_1d,
)
from oracles import dbl_vertex_enumeration, merged


def delta(*x):
    return EmpiricalMeasure(np.array([x], dtype=float))


def random_measure(gen, n, l, uniform=False):
    pts = gen.normal(size=(n, l))
    if uniform:
        return EmpiricalMeasure(pts)
    w = gen.uniform(0.1, 1.0, n)
    return EmpiricalMeasure(pts, w / w.sum())


def test_identical_point_masses():
    assert dbl_exact(delta(0.0), delta(0.0)) == 0.0


@pytest.mark.parametrize("r", [0.5, 1.0, 3.0])
def test_point_mass_closed_form(r):
    assert abs(dbl_exact(delta(0.0, 0.0), delta(r * 0.6, r * 0.8)) - min(r, 2.0)) <= 1e-9
    assert abs(dbl_lp(delta(0.0, 0.0), delta(r * 0.6, r * 0.8)) - min(r, 2.0)) <= 1e-9


def test_two_point_vs_midpoint_pinned():
    mu = EmpiricalMeasure(np.array([[0.0], [1.0]]))
    nu = delta(0.5)
    xs, c = merged(mu.support, mu.weights, nu.support, nu.weights)
    assert abs(dbl_vertex_enumeration(xs, c) - 0.5) <= 1e-12
    assert abs(dbl_exact(mu, nu) - 0.5) <= 1e-9


def test_matches_vertex_enumeration_small():
    gen = np.random.default_rng(11)
    for _ in range(60):
        na, nb = gen.integers(1, 3, size=2)
        l = int(gen.integers(1, 3))
        mu, nu = random_measure(gen, na, l), random_measure(gen, nb, l)
        xs, c = merged(mu.support, mu.weights, nu.support, nu.weights)
        assert abs(dbl_exact(mu, nu) - dbl_vertex_enumeration(xs, c)) <= 1e-9


def test_metric_axioms_random():
    gen = np.random.default_rng(2024)
    for _ in range(100):
        l = int(gen.integers(1, 4))
        a, b, c = (random_measure(gen, int(gen.integers(1, 6)), l) for _ in range(3))
        dab, dba = dbl_exact(a, b), dbl_exact(b, a)
        assert abs(dab - dba) <= 1e-9
        assert dab <= dbl_exact(a, c) + dbl_exact(c, b) + 1e-9
        assert dbl_exact(a, a) <= 1e-9
        assert dab <= 2.0 + 1e-12


def test_transport_route_agrees_with_direct_program():
    gen = np.random.default_rng(5)
    for _ in range(25):
        mu, nu = random_measure(gen, 7, 2), random_measure(gen, 9, 2)
        assert abs(dbl_exact(mu, nu) - dbl_lp(mu, nu)) <= 1e-9
    for _ in range(10):
        mu, nu = random_measure(gen, 8, 2, True), random_measure(gen, 8, 2, True)
        assert abs(dbl_exact(mu, nu) - dbl_lp(mu, nu)) <= 1e-9


@given(st.integers(0, 10_000))
def test_bounded_by_w1_in_one_dimension(seed):
    gen = np.random.default_rng(seed)
    mu, nu = random_measure(gen, 5, 1), random_measure(gen, 4, 1)
    assert dbl_exact(mu, nu) <= wasserstein1_1d(mu, nu) + 1e-9


@given(st.integers(0, 10_000), st.floats(0, 2 * np.pi))
def test_orthogonal_pushforward_invariance(seed, theta):
    gen = np.random.default_rng(seed)
    mu, nu = random_measure(gen, 4, 2), random_measure(gen, 3, 2)
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert abs(dbl_exact(mu.pushforward(R), nu.pushforward(R)) - dbl_exact(mu, nu)) <= 1e-9


def test_size_gate():
    big = EmpiricalMeasure(np.zeros((300, 1)))
    with pytest.raises(ValueError, match="dbl_estimate"):
        dbl_exact(big, delta(0.0))


def test_w1_examples():
    assert wasserstein1_1d(delta(0.0), delta(3.0)) == 3.0
    u = EmpiricalMeasure(np.array([[0.0], [1.0]]))
    assert abs(wasserstein1_1d(u, EmpiricalMeasure(u.support + 0.5)) - 0.5) <= 1e-12
    assert wasserstein1_1d(u, u) == 0.0
    with pytest.raises(ValueError):
        wasserstein1_1d(delta(0.0, 0.0), delta(0.0, 0.0))


def test_estimate_self_within_floor():
    gen = np.random.default_rng(0)
    mu = EmpiricalMeasure(gen.normal(size=(4000, 2)))
    hits = 0
    for trial in range(20):
        e = dbl_estimate(mu, mu, 128, 8, seed=trial)
        hits += e.estimate <= 1.25 * e.noise_floor
    assert hits >= 19


def test_estimate_separates_shifted_gaussians():
    gen = np.random.default_rng(1)
    mu = EmpiricalMeasure(gen.normal(size=(10_000, 1)))
    nu = EmpiricalMeasure(gen.normal(3.0, 1.0, size=(10_000, 1)))
    e = dbl_estimate(mu, nu, 256, 8, seed=3)
    assert e.estimate >= 0.5 and e.estimate >= 5 * e.noise_floor


def test_estimate_point_mass_zero():
    pm = point_mass([1.0, 2.0], 50)
    e = dbl_estimate(pm, pm, 32, 4)
    assert e.estimate == 0.0 and e.noise_floor == 0.0


def test_estimate_small_support_flagged():
    mu = EmpiricalMeasure(np.arange(10.0)[:, None])
    e = dbl_estimate(mu, mu, 8, 3)
    assert e.with_replacement and e.notes


def test_estimate_preconditions():
    mu = delta(0.0)
    with pytest.raises(ValueError):
        dbl_estimate(mu, mu, 300, 4)
    with pytest.raises(ValueError):
        dbl_estimate(mu, mu, 16, 2)


def test_estimate_deterministic():
    gen = np.random.default_rng(1)
    mu = EmpiricalMeasure(gen.normal(size=(1000, 2)))
    nu = EmpiricalMeasure(gen.normal(size=(1000, 2)) + 0.3)
    a, b = dbl_estimate(mu, nu, 64, 4, seed=9), dbl_estimate(mu, nu, 64, 4, seed=9)
    assert np.array_equal(a.estimates, b.estimates) and np.array_equal(a.floors, b.floors)


def _ens(paths, seed=0):
    return Ensemble(TimeGrid(0.0, 0.5, paths.shape[1] - 1), paths, seed)


def test_msq_same_ensemble_zero():
    gen = np.random.default_rng(0)
    e = _ens(gen.normal(size=(10, 3, 2)))
    assert msq_distance(e, e, 1.0).value == 0.0


def test_msq_grid_mismatch():
    a = _ens(np.zeros((4, 3, 1)))
    b = Ensemble(TimeGrid(0.0, 0.25, 2), np.zeros((4, 3, 1)), 0)
    with pytest.raises(ValueError):
        msq_distance(a, b, 0.5)
    with pytest.raises(ValueError):
        msq_distance(a, _ens(np.zeros((4, 3, 1)), seed=1), 0.5)


def test_weights_validation():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((2, 1)), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([[np.inf]]))


def test_csv_round_trip(tmp_path):
    gen = np.random.default_rng(2)
    mu = random_measure(gen, 6, 3)
    mu.to_csv(tmp_path / "m.csv", ["seed: 2"])
    back = EmpiricalMeasure.from_csv(tmp_path / "m.csv")
    assert np.array_equal(back.support, mu.support)
    np.testing.assert_allclose(back.weights, mu.weights, rtol=1e-15)
    assert (tmp_path / "m.csv").read_text().startswith("# seed: 2\nweight,x_1,x_2,x_3\n")


def test_mixture_weights():
    a, b = delta(0.0), EmpiricalMeasure(np.array([[1.0], [2.0]]))
    mix = EmpiricalMeasure.mixture([a, b])
    np.testing.assert_allclose(mix.weights, [0.5, 0.25, 0.25])
