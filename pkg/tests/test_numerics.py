import numpy as np
import pytest
from scipy import integrate, optimize, special

from fisher_sgd.numerics import (
    CascadedFilter,
    NotPositiveDefinite,
    chisq_cdf,
    chisq_quantile,
    cholesky,
    normal_cdf,
    normal_quantile,
    spd_inverse,
    spd_solve,
    sym_eigen,
    symmetrize,
)


def random_spd(rng, d, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    w = np.exp(rng.uniform(0.0, np.log(cond), d))
    return symmetrize(q @ np.diag(w) @ q.T)


# -- cholesky -----------------------------------------------------------------


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_hand_example():
    np.testing.assert_allclose(cholesky([[4.0, 2.0], [2.0, 5.0]]), [[2.0, 0.0], [1.0, 2.0]], atol=1e-15)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 2.0], [2.0, 1.0]])


def test_cholesky_rejects_nan():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[np.nan, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize("d", [1, 2, 5, 10, 19])
def test_cholesky_reconstruction(d):
    rng = np.random.default_rng(d)
    for _ in range(20):
        a = random_spd(rng, d, cond=1e4)
        low = cholesky(a)
        assert np.all(np.diag(low) > 0)
        np.testing.assert_array_equal(low, np.tril(low))
        assert np.abs(low @ low.T - a).max() <= 1e-12 * (1 + np.abs(a).max())


# -- solves -------------------------------------------------------------------


def test_spd_solve_examples():
    np.testing.assert_allclose(spd_solve(np.eye(2), [3.0, -1.0]), [3.0, -1.0])
    np.testing.assert_allclose(spd_solve(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])


def test_spd_solve_residual_random_systems():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 11))
        a = random_spd(rng, d, cond=100.0)
        b = rng.standard_normal(d)
        x = spd_solve(a, b)
        worst = max(worst, np.linalg.norm(a @ x - b) / (1 + np.linalg.norm(b)))
    assert worst <= 1e-10


def test_spd_solve_matrix_rhs_and_inverse():
    rng = np.random.default_rng(1)
    a = random_spd(rng, 6)
    np.testing.assert_allclose(spd_inverse(a) @ a, np.eye(6), atol=1e-10)
    b = rng.standard_normal((6, 3))
    np.testing.assert_allclose(a @ spd_solve(a, b), b, atol=1e-10)


def test_spd_solve_propagates_failure():
    with pytest.raises(NotPositiveDefinite):
        spd_solve([[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])


# -- eigen --------------------------------------------------------------------


def test_sym_eigen_examples():
    w, _ = sym_eigen(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(w, [1.0, 3.0])
    w, _ = sym_eigen([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(w, [1.0, 3.0], atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_sym_eigen_reconstruction(seed):
    rng = np.random.default_rng(seed)
    a = symmetrize(rng.standard_normal((6, 6)))
    w, v = sym_eigen(a)
    assert np.all(np.diff(w) >= 0)
    assert np.abs(v @ np.diag(w) @ v.T - a).max() <= 1e-9 * (1 + np.abs(a).max())
    assert np.abs(v.T @ v - np.eye(6)).max() <= 1e-10
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-10)


def test_sym_eigen_degenerate_and_empty():
    w, v = sym_eigen(np.zeros((3, 3)))
    np.testing.assert_array_equal(w, 0.0)
    np.testing.assert_array_equal(v, np.eye(3))
    w, v = sym_eigen(np.zeros((0, 0)))
    assert w.shape == (0,)


# -- filter -------------------------------------------------------------------


def test_filter_first_update_sets_all_stages():
    f = CascadedFilter(1e-3).update([1.0, 0.0])
    for m in (f.m1, f.m2, f.m3):
        np.testing.assert_array_equal(m, [1.0, 0.0])
    assert f.update_count == 1


def test_filter_constant_stream_is_fixed_point():
    v0 = np.array([0.3, -1.7, 2.5])
    f = CascadedFilter(0.01).update(v0)
    for _ in range(500):
        f = f.update(v0)
    for m in (f.m1, f.m2, f.m3):
        np.testing.assert_array_equal(m, v0)


def test_filter_zero_stream_strictly_decreasing():
    f = CascadedFilter(0.05).update([1.0, 2.0])
    prev = f.norm
    for _ in range(200):
        f = f.update([0.0, 0.0])
        assert f.norm < prev
        prev = f.norm


def test_filter_stages_stay_in_convex_hull():
    rng = np.random.default_rng(3)
    stream = rng.uniform(-2.0, 2.0, (300, 4))
    f = CascadedFilter(0.1)
    for v in stream:
        f = f.update(v)
        for m in (f.m1, f.m2, f.m3):
            assert np.abs(m).max() <= np.abs(stream).max() + 1e-12


def test_filter_matches_recursion_and_is_pure():
    c = 0.2
    vs = [np.array([1.0]), np.array([3.0]), np.array([-1.0])]
    f0 = CascadedFilter(c)
    f = f0
    for v in vs:
        f = f.update(v)
    m1 = m2 = m3 = 1.0
    for v in (3.0, -1.0):
        m1 = (1 - c) * m1 + c * v
        m2 = (1 - c) * m2 + c * m1
        m3 = (1 - c) * m3 + c * m2
    assert f.m3[0] == pytest.approx(m3, abs=1e-15)
    assert f0.update_count == 0


def test_filter_dimension_mismatch():
    with pytest.raises(ValueError):
        CascadedFilter(0.1).update([1.0, 2.0]).update([1.0])


# -- quantiles ------------------------------------------------------------------


def _normal_cdf_quadrature(x):
    val, _ = integrate.quad(lambda t: np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi), -np.inf, x, epsabs=1e-13)
    return val


def test_normal_quantile_examples():
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-12)
    # independent oracle: bisection on a quadrature CDF
    oracle = optimize.brentq(lambda x: _normal_cdf_quadrature(x) - 0.975, 0.0, 5.0, xtol=1e-13)
    assert normal_quantile(0.975) == pytest.approx(oracle, abs=1e-8)
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)


def test_chisq_quantile_example():
    oracle = optimize.brentq(lambda x: special.gammainc(3.5, x / 2) - 0.95, 1e-6, 100.0, xtol=1e-13)
    assert chisq_quantile(0.95, 7) == pytest.approx(oracle, abs=1e-7)
    assert chisq_quantile(0.95, 7) == pytest.approx(14.0671, abs=1e-4)


PROBS = [0.01, 0.025, 0.05, 0.5, 0.95, 0.975, 0.99]


@pytest.mark.parametrize("p", PROBS)
def test_normal_quantile_roundtrip(p):
    x = normal_quantile(p)
    assert abs(normal_cdf(x) - p) <= 1e-8
    assert abs(special.ndtr(x) - p) <= 1e-8


@pytest.mark.parametrize("p", PROBS)
@pytest.mark.parametrize("dof", [1, 2, 7, 19, 50])
def test_chisq_quantile_roundtrip(p, dof):
    x = chisq_quantile(p, dof)
    assert abs(chisq_cdf(x, dof) - p) <= 1e-8
    assert abs(special.gammainc(dof / 2, x / 2) - p) <= 1e-8


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_quantiles_reject_out_of_range(p):
    with pytest.raises(ValueError):
        normal_quantile(p)
    with pytest.raises(ValueError):
        chisq_quantile(p, 3)
