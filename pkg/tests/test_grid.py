import numpy as np
import pytest

from casimir_ph.grid import (
    PRECISION_ENV,
    Grid1D,
    Grid2D,
    GridError,
    boundary_trace,
    diff,
    diff_matrix,
    fd_weights,
    integrate,
    read_field_csv,
    write_field_csv,
)


@pytest.fixture
def g1():
    return Grid1D(21)


@pytest.fixture
def g2():
    return Grid2D(21, 17, 1.0, 0.8)


def test_grid_invariants():
    g = Grid1D(13, 2.5)
    assert abs(g.spacing * (g.n - 1) - g.length) < 1e-15
    g = Grid2D(9, 11, 0.3, 0.7)
    assert abs(g.h1 * 8 - 0.3) < 1e-15 and abs(g.h2 * 10 - 0.7) < 1e-15


@pytest.mark.parametrize("n", [8, 3, 9.5])
def test_too_few_nodes_rejected(n):
    with pytest.raises(GridError):
        Grid1D(n)
    with pytest.raises(GridError):
        Grid2D(n, 21)


def test_nonpositive_length_rejected():
    with pytest.raises(GridError):
        Grid1D(21, 0.0)
    with pytest.raises(GridError):
        Grid2D(21, 21, 1.0, -1.0)


def test_fd_weights_classic():
    assert np.allclose(fd_weights([-1, 0, 1], 2), [1, -2, 1])
    assert np.allclose(fd_weights([-2, -1, 0, 1, 2], 4), [1, -4, 6, -4, 1])
    assert np.allclose(fd_weights([0, 1, 2], 1), [-1.5, 2, -0.5])


def test_second_derivative_of_quadratic(g1):
    z = g1.coords()
    assert np.allclose(diff(g1, z**2, [2]), 2.0, atol=1e-10)


def test_fourth_derivative_of_quartic(g1):
    z = g1.coords()
    d4 = diff(g1, z**4, [4])
    assert np.allclose(d4[2:-2], 24.0, atol=1e-8)


def test_mixed_derivative_bilinear(g2):
    Z1, Z2 = g2.coords()
    assert np.allclose(diff(g2, Z1 * Z2, (1, 1)), 1.0, atol=1e-10)


def test_polynomial_exactness_interior(g1):
    z = g1.coords()
    rng = np.random.default_rng(1)
    cub = np.polyval(rng.standard_normal(4), z)
    quint = np.polyval(rng.standard_normal(6), z)
    ref2 = np.polyval(np.polyder(np.polyfit(z, cub, 3), 2), z)
    ref4 = np.polyval(np.polyder(np.polyfit(z, quint, 5), 4), z)
    assert np.abs(diff(g1, cub, 2)[1:-1] - ref2[1:-1]).max() < 1e-9
    assert np.abs(diff(g1, quint, 4)[2:-2] - ref4[2:-2]).max() < 1e-6


def test_one_sided_closure_second_order(g1):
    z = g1.coords()
    # one-sided 2nd-derivative closure is exact for cubics
    assert np.abs(diff(g1, z**3, 2) - 6 * z).max() < 1e-9


def test_diff_is_linear(g2):
    rng = np.random.default_rng(2)
    f, g = rng.standard_normal((2, *g2.shape))
    for J in [(1, 0), (0, 2), (1, 1), (2, 2)]:
        lhs = diff(g2, 2.5 * f - 0.7 * g, J)
        rhs = 2.5 * diff(g2, f, J) - 0.7 * diff(g2, g, J)
        assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()


def test_diff_errors(g1, g2):
    with pytest.raises(GridError):
        diff(g1, np.full(g1.shape, np.nan), 1)
    with pytest.raises(GridError):
        diff(g1, np.zeros(5), 1)
    with pytest.raises(GridError):
        diff(g2, np.zeros(g2.shape), (3, 2))
    with pytest.raises(GridError):
        diff(g2, np.zeros(g2.shape), (1,))


def test_diff_matrix_sparse(g2):
    D = diff_matrix(g2, (2, 0))
    assert D.shape == (g2.size, g2.size)
    assert D.nnz < 8 * g2.size


def test_integrate_examples():
    assert integrate(Grid1D(21, 2.0), np.ones(21)) == pytest.approx(2.0, abs=1e-14)
    assert integrate(Grid2D(21, 21), np.ones((21, 21))) == pytest.approx(1.0, abs=1e-14)
    g = Grid1D(21)
    assert integrate(g, g.coords()) == pytest.approx(0.5, abs=1e-15)


def test_integrate_linear_2d():
    g = Grid2D(11, 15, 2.0, 3.0)
    Z1, Z2 = g.coords()
    exact = 2 * 3 + 0.5 * 3 * 4 * 3 - 2 * 2 * 9 / 2
    assert integrate(g, 1 + 3 * Z1 - 2 * Z2) == pytest.approx(exact, rel=1e-14)


def test_summation_by_parts_compact():
    res = []
    for n in (41, 81):
        g = Grid2D(n, n)
        Z1, Z2 = g.coords()
        bump = lambda z: np.where(np.abs(z - 0.5) < 0.3, np.cos(np.pi * (z - 0.5) / 0.6) ** 4, 0.0)
        f = bump(Z1) * bump(Z2) * np.exp(Z1)
        res.append(abs(integrate(g, diff(g, f, (1, 0)))))
    h = 1 / 40
    assert res[0] <= 10 * h**2
    assert res[1] <= 10 * (h / 2) ** 2


def test_boundary_trace_2d(g2):
    Z1, Z2 = g2.coords()
    assert np.allclose(boundary_trace(g2, Z1, 3), g2.L1)
    assert np.allclose(boundary_trace(g2, Z2, 4), g2.L2)
    t2 = boundary_trace(g2, Z1, 2)
    assert np.all(np.diff(t2) > 0)
    for e in (1, 2, 3, 4):
        assert np.all(boundary_trace(g2, np.zeros(g2.shape), e) == 0)


def test_boundary_trace_1d(g1):
    z = g1.coords()
    assert boundary_trace(g1, z, 2)[0] == pytest.approx(1.0)
    assert boundary_trace(g1, z, 1)[0] == 0.0


def test_boundary_trace_unknown_edge(g1, g2):
    with pytest.raises(GridError):
        boundary_trace(g2, np.zeros(g2.shape), 5)
    with pytest.raises(GridError):
        boundary_trace(g1, np.zeros(g1.shape), 3)


def test_csv_round_trip(tmp_path, g2):
    rng = np.random.default_rng(3)
    f = rng.standard_normal(g2.shape)
    path = write_field_csv(tmp_path / "f.csv", g2, f)
    lines = path.read_bytes().split(b"\n")
    assert b"\r" not in path.read_bytes()
    assert len(lines) - 1 == g2.n2
    assert len(lines[0].split(b",")) == g2.n1
    assert np.array_equal(read_field_csv(path, g2), f)


def test_csv_precision_override(tmp_path, monkeypatch):
    g = Grid1D(9)
    monkeypatch.setenv(PRECISION_ENV, "4")
    path = write_field_csv(tmp_path / "f.csv", g, np.full(9, np.pi))
    assert path.read_text().split(",")[0] == "3.142"
    monkeypatch.setenv(PRECISION_ENV, "zero")
    with pytest.raises(GridError):
        write_field_csv(tmp_path / "g.csv", g, np.zeros(9))
