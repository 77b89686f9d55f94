import numpy as np
import pytest

from fisher_sgd.model import fd_jacobian, relative_error
from fisher_sgd.numerics import cholesky
from fisher_sgd.reparam import (
    ConstraintViolation,
    Interval01,
    Positive,
    Real,
    Simplex,
    Spd,
    compose,
)

CHARTS = {
    "real": lambda: Real(dim=3, loc=1.5, scale=2.0),
    "positive": lambda: Positive(dim=2, scale=3.0),
    "interval01": lambda: Interval01(dim=3),
    "simplex2": lambda: Simplex(2),
    "simplex4": lambda: Simplex(4),
    "simplex7": lambda: Simplex(7),
    "spd2": lambda: Spd(2),
    "spd3": lambda: Spd(3, scale=5.0),
    "tuple": lambda: compose(Positive(), Real(), Simplex(3), Spd(2), Interval01(2)),
}


def random_points(chart, rng, n, half_width=3.0):
    # wider boxes push log-Cholesky factors past cond ~1e8, where forming L L^T
    # alone loses the 1e-10 round-trip budget
    return rng.uniform(-half_width, half_width, size=(n, chart.free_dim))


# -- examples ---------------------------------------------------------------------


def test_positive_examples():
    b = Positive()
    assert b.forward([0.0])[0] == 1.0
    assert b.inverse([1.0])[0] == 0.0
    np.testing.assert_array_equal(b.jacobian([0.0]), [[1.0]])


def test_interval01_examples():
    b = Interval01()
    assert b.forward([0.0])[0] == 0.5
    assert b.inverse([0.5])[0] == 0.0
    np.testing.assert_array_equal(b.jacobian([0.0]), [[0.25]])


def test_simplex_origin_is_uniform():
    b = Simplex(4)
    np.testing.assert_allclose(b.forward(np.zeros(3)), np.full(4, 0.25), atol=1e-15)
    np.testing.assert_allclose(b.inverse(np.full(4, 0.25)), np.zeros(3), atol=1e-14)


def test_spd_origin_is_identity():
    b = Spd(2)
    np.testing.assert_allclose(b.unpack(b.forward(np.zeros(3))), np.eye(2))


def test_compose_examples():
    b = compose(Positive(), Real())
    np.testing.assert_allclose(b.forward([0.0, 5.0]), [1.0, 5.0])
    logistic = compose(Positive(), Real(), Positive(), Spd(2), Positive())
    assert logistic.free_dim == 7
    k = 4
    sbm = compose(Simplex(k), Interval01(k * k))
    assert sbm.free_dim == k * k + k - 1 == 19
    assert sbm.original_dim == 20


def test_simplex_single_component():
    b = Simplex(1)
    assert b.free_dim == 0
    np.testing.assert_array_equal(b.forward(np.zeros(0)), [1.0])


# -- invariants ---------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(CHARTS))
def test_round_trip(name):
    chart = CHARTS[name]()
    rng = np.random.default_rng(0)
    for x in random_points(chart, rng, 1000):
        back = chart.inverse(chart.forward(x))
        assert np.abs(back - x).max() <= 1e-10 * (1 + np.abs(x).max())


@pytest.mark.parametrize("k", [2, 3, 4, 8])
def test_simplex_constraint(k):
    b = Simplex(k)
    rng = np.random.default_rng(k)
    for x in rng.uniform(-30, 30, size=(500, k - 1)):
        p = b.forward(x)
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("p", [2, 3, 4])
def test_spd_output_passes_cholesky(p):
    b = Spd(p)
    rng = np.random.default_rng(p)
    for x in rng.uniform(-5, 5, size=(300, b.free_dim)):
        cholesky(b.unpack(b.forward(x)))


def test_positive_is_clamped_not_overflowing():
    b = Positive()
    with np.errstate(over="raise"):
        y = b.forward([1e4])
    assert np.isfinite(y).all() and y[0] > 0
    assert b.forward([-1e4])[0] > 0


@pytest.mark.parametrize("name", sorted(CHARTS))
def test_jacobian_matches_central_differences(name):
    chart = CHARTS[name]()
    rng = np.random.default_rng(1)
    for x in random_points(chart, rng, 50) / 2.0:
        assert relative_error(chart.jacobian(x), fd_jacobian(chart.forward, x)) <= 1e-5


def test_simplex_log_jacobian_matches_fd():
    b = Simplex(5)
    rng = np.random.default_rng(2)
    for x in rng.uniform(-2, 2, size=(50, 4)):
        fd = fd_jacobian(lambda t: np.log(b.forward(t)), x)
        assert relative_error(b.log_jacobian(x), fd) <= 1e-5


def test_tuple_jacobian_is_block_diagonal():
    b = compose(Positive(), Simplex(3), Spd(2))
    jac = b.jacobian(np.linspace(-1, 1, b.free_dim))
    assert np.all(jac[0, 1:] == 0)
    assert np.all(jac[1:4, [0, 3, 4, 5]] == 0)
    assert np.all(jac[4:, :3] == 0)


# -- errors ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "chart, y",
    [
        (Positive(), [0.0]),
        (Positive(), [-1.0]),
        (Interval01(), [1.0]),
        (Interval01(), [0.0]),
        (Simplex(3), [0.5, 0.5, 0.0]),
        (Simplex(3), [0.5, 0.5, 0.5]),
        (Spd(2), [1.0, 2.0, 1.0]),
    ],
)
def test_inverse_rejects_boundary(chart, y):
    with pytest.raises(ConstraintViolation):
        chart.inverse(y)


def test_dimension_checks():
    with pytest.raises(ValueError):
        Simplex(4).forward([0.0, 0.0])
    with pytest.raises(ValueError):
        Positive(names=["a", "b"])
    with pytest.raises(ValueError):
        compose()


def test_names_flow_through_tuple():
    b = compose(Positive(names=["s"]), Spd(2, names=["G11", "G21", "G22"]))
    assert b.names == ["s", "G11", "G21", "G22"]
    assert b.describe()["free_dim"] == 4
