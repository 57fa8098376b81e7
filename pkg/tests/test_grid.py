import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kslab.grid import (
    Domain,
    Field,
    Grid,
    NonFiniteFieldError,
    build_grid,
    divgrad_array,
    face_gradient,
    integrate,
    read_snapshot,
    write_snapshot,
)

lengths = st.floats(0.1, 20.0)
counts = st.integers(4, 64)


def test_interval_centers_and_weights():
    g = build_grid(Domain.interval(1.0), 4)
    assert g.h == (0.25,)
    np.testing.assert_allclose(g.centers[0], [0.125, 0.375, 0.625, 0.875])
    assert g.weights.sum() == pytest.approx(1.0, rel=1e-15)


def test_rectangle_cell_count():
    g = build_grid(Domain.rectangle(1.0, 1.0), 4)
    assert g.size == 16 and g.shape == (4, 4)
    assert g.weights.sum() == pytest.approx(1.0)


def test_disc_annulus_weights():
    g = build_grid(Domain.disc(1.0), 4)
    edges = np.array([0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(g.weights, np.pi * np.diff(edges**2), rtol=1e-14)
    assert g.weights.sum() == pytest.approx(np.pi, rel=1e-14)


@given(shape=st.sampled_from(["interval", "rectangle", "radial_disc"]), a=lengths, b=lengths, n=counts, m=counts)
def test_weights_sum_to_measure(shape, a, b, n, m):
    domain = Domain(shape, (a, b) if shape == "rectangle" else (a,))
    g = build_grid(domain, (n, m) if shape == "rectangle" else n)
    assert abs(g.weights.sum() - domain.measure) <= 1e-12 * domain.measure


@pytest.mark.parametrize("bad", [
    lambda: Domain("sphere", (1.0,)),
    lambda: Domain.interval(-1.0),
    lambda: Domain("rectangle", (1.0,)),
    lambda: build_grid(Domain.interval(1.0), 3),
    lambda: build_grid(Domain.interval(1.0), (4, 4)),
])
def test_invalid_geometry_rejected(bad):
    with pytest.raises(ValueError):
        bad()


def test_grids_compare_by_value():
    a = build_grid(Domain.disc(2.0), 8)
    b = build_grid(Domain.disc(2.0), 8)
    assert a == b and hash(a) == hash(b)
    assert a != build_grid(Domain.disc(2.0), 9)


def test_integrate_constants():
    assert integrate(Field(build_grid(Domain.interval(1.0), 7), 3.5)) == pytest.approx(3.5)
    assert integrate(Field(build_grid(Domain.disc(1.0), 7), 2.0)) == pytest.approx(2 * np.pi)


@given(n=counts)
def test_midpoint_rule_exact_for_linears(n):
    g = build_grid(Domain.interval(1.0), n)
    assert integrate(Field.from_function(g, lambda x: x)) == pytest.approx(0.5, abs=1e-14)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**32 - 1))
def test_integrate_is_linear(a, b, seed):
    g = build_grid(Domain.disc(1.5), 12)
    r = np.random.default_rng(seed)
    f, h = Field(g, r.normal(size=g.shape)), Field(g, r.normal(size=g.shape))
    lhs = integrate(a * f + b * h)
    rhs = a * integrate(f) + b * integrate(h)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)))


def test_field_rejects_non_finite_and_is_immutable():
    g = build_grid(Domain.interval(1.0), 4)
    with pytest.raises(NonFiniteFieldError):
        Field(g, [1.0, np.nan, 1.0, 1.0])
    f = Field(g, 1.0)
    with pytest.raises(ValueError):
        f.data[0] = 2.0


def test_field_arithmetic_checks_grid():
    a = Field(build_grid(Domain.interval(1.0), 4), 1.0)
    b = Field(build_grid(Domain.interval(1.0), 5), 1.0)
    with pytest.raises(ValueError):
        a + b
    np.testing.assert_array_equal((2 * a - a / 2).data, 1.5)


def test_face_gradient_of_constant_vanishes(any_grid):
    for g in face_gradient(Field(any_grid, 4.2)):
        assert not np.any(g)


def test_face_gradient_of_linear():
    g = build_grid(Domain.interval(1.0), 4)
    (grad,) = face_gradient(Field.from_function(g, lambda x: x))
    np.testing.assert_allclose(grad, [0, 1, 1, 1, 0], atol=1e-14)


def test_radial_face_gradient_of_r_squared():
    g = build_grid(Domain.disc(1.0), 4)
    f = Field.from_function(g, lambda r: r**2)
    (grad,) = face_gradient(f)
    # face at r = 0.5 sits between cells 2 and 3 (1-based)
    assert grad[2] == pytest.approx((f.data[2] - f.data[1]) / 0.25)
    assert grad[0] == 0 and grad[-1] == 0


def test_divgrad_annihilates_constants(any_grid):
    assert np.abs(divgrad_array(any_grid, np.full(any_grid.shape, 3.0))).max() < 1e-12


@given(seed=st.integers(0, 2**32 - 1), shape=st.sampled_from(["interval", "rectangle", "radial_disc"]))
def test_divgrad_has_zero_weighted_sum(seed, shape):
    domain = Domain(shape, (1.0, 2.0) if shape == "rectangle" else (1.0,))
    g = build_grid(domain, 10)
    values = np.random.default_rng(seed).normal(size=g.shape)
    assert abs(np.sum(g.weights * divgrad_array(g, values))) < 1e-10


def test_radial_laplacian_of_r_squared_exact_in_interior():
    # Δ r² = 4 in the plane; only the wall cell differs because r² has slope there
    for n in (8, 16, 32):
        g = build_grid(Domain.disc(1.0), n)
        lap = divgrad_array(g, g.centers[0] ** 2)
        np.testing.assert_allclose(lap[:-1], 4.0, atol=1e-12)


def test_radial_laplacian_second_order():
    # f = (1 - r²)² meets the Neumann wall condition; Δf = 16 r² - 8.
    # The wall cell's truncation error is first order, as usual for
    # cell-centered Neumann stencils, so it is left out.
    errors = []
    for n in (20, 40, 80):
        g = build_grid(Domain.disc(1.0), n)
        r = g.centers[0]
        errors.append(np.abs(divgrad_array(g, (1 - r**2) ** 2) - (16 * r**2 - 8))[:-1].max())
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert all(1.8 < o < 2.2 for o in orders), orders


def test_cosine_is_discrete_eigenvector():
    n = 20
    g = build_grid(Domain.interval(1.0), n)
    for k in (1, 2, 5):
        c = np.cos(k * np.pi * g.centers[0])
        lam = 4 * n**2 * np.sin(k * np.pi / (2 * n)) ** 2
        np.testing.assert_allclose(divgrad_array(g, c), -lam * c, atol=1e-10)


@pytest.mark.parametrize("grid", [
    Grid(Domain.interval(2.0), 6),
    Grid(Domain.rectangle(1.0, 3.0), (4, 5)),
    Grid(Domain.disc(0.5), 7),
])
def test_snapshot_round_trip(tmp_path, grid):
    values = np.random.default_rng(1).random(grid.shape)
    f = Field(grid, values)
    path = tmp_path / "f.csv"
    write_snapshot(f, path)
    g = read_snapshot(path)
    assert g.grid == grid
    np.testing.assert_array_equal(g.data, values)
    header = path.read_text().splitlines()[0]
    assert header.startswith(f"# {grid.domain.shape},")


def test_snapshot_requires_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0,0.5,1.0\n")
    with pytest.raises(ValueError):
        read_snapshot(path)
