import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qedft import units
from qedft.lattice import (BCC_CONVENTIONAL_PATH, GAMMA, Atom, Cell, KPoint, UnsupportedSymmetryError, build_grid,
                           kpath, kpoint_mesh)
from qedft.qstate import cqft_array


def test_unit_round_trips():
    assert units.bohr_to_angstrom(units.angstrom_to_bohr(1.7)) == pytest.approx(1.7, rel=1e-15)
    assert units.hartree_to_ev(1.0) == pytest.approx(27.211386245988)
    assert units.to_internal(1.0, "Angstrom", "length") == pytest.approx(1 / 0.529177210903)
    with pytest.raises(ValueError, match="unknown"):
        units.to_internal(1.0, "furlong", "length")


def test_ten_angstrom_cube_five_qubits():
    length = units.angstrom_to_bohr(10.0)
    grid = build_grid(Cell((length,) * 3, (5, 5, 5)))
    assert grid.shape == (32, 32, 32)
    assert grid.dv == pytest.approx(length**3 / 32768, rel=1e-14)
    assert grid.integrate(np.ones(grid.shape)) == pytest.approx(grid.volume, rel=1e-13)


def test_smallest_grid():
    grid = build_grid(Cell((1.0, 1.0, 1.0), (1, 1, 1)))
    for ax, g in zip(grid.axes, grid.g_axes):
        np.testing.assert_allclose(ax, [0.0, 0.5])
        np.testing.assert_allclose(g, [-2 * np.pi, 0.0])


def test_bcc_grid_sixteen_per_axis():
    a = units.angstrom_to_bohr(3.5)
    assert build_grid(Cell((a,) * 3, (4, 4, 4))).shape == (16, 16, 16)


def test_flat_index_ordering():
    grid = build_grid(Cell((3.0, 4.0, 5.0), (1, 2, 3)))
    nx, ny, nz = grid.shape
    flat = grid.points.reshape(-1, 3)
    i, j, k = 1, 2, 5
    np.testing.assert_allclose(flat[(i * ny + j) * nz + k], [grid.axes[0][i], grid.axes[1][j], grid.axes[2][k]])


def test_g_vectors_symmetric_except_most_negative():
    grid = build_grid(Cell((7.0, 7.0, 7.0), (3, 3, 3)))
    m = grid.m_axes[0]
    assert m[0] == -4 and m[-1] == 3
    assert set(-m[1:]) == set(m[1:])


def test_centered_g_matches_shifted_fft_order():
    grid = build_grid(Cell((5.0, 6.0, 7.0), (2, 3, 1)))
    for gc, gf in zip(grid.g_axes, grid.g_axes_fft):
        np.testing.assert_allclose(np.fft.fftshift(gf), gc, atol=1e-13)


def test_zero_qubit_axis_is_a_single_point():
    grid = build_grid(Cell((8.0, 1.0, 1.0), (3, 0, 0)))
    assert grid.shape == (8, 1, 1)
    np.testing.assert_array_equal(grid.g_axes[1], [0.0])


@pytest.mark.parametrize("lengths,qubits", [((0.0, 1, 1), (1, 1, 1)), ((1, 1, 1), (0, 0, 0)), ((1, 1, 1), (1, -1, 1))])
def test_invalid_cells_rejected(lengths, qubits):
    with pytest.raises(ValueError):
        Cell(lengths, qubits)


def test_atoms_wrapped_or_rejected():
    cell = Cell((4.0, 4.0, 4.0), (2, 2, 2), (Atom("H", (5.0, -1.0, 2.0)),))
    assert cell.atoms[0].position == pytest.approx((1.0, 3.0, 2.0))
    with pytest.raises(ValueError, match="outside"):
        Cell((4.0, 4.0, 4.0), (2, 2, 2), (Atom("H", (5.0, 1.0, 2.0)),), periodic=False)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2), st.integers(0, 2**31 - 1))
def test_cqft_round_trip_on_any_grid(nx, ny, nz, seed):
    grid = build_grid(Cell((3.0, 4.0, 5.0), (nx, ny, nz)))
    rng = np.random.default_rng(seed)
    x = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    np.testing.assert_allclose(cqft_array(cqft_array(x), inverse=True), x, atol=1e-12)


def test_mesh_9_reduces_to_35_points():
    cell = Cell((6.6,) * 3, (4, 4, 4))
    mesh = kpoint_mesh(cell, 9, 9, 9, reduce=True)
    assert len(mesh) == 35
    assert sum(k.weight for k in mesh) == pytest.approx(1.0, abs=1e-12)
    assert all(k.weight > 0 for k in mesh)


def test_gamma_only_and_uniform_mesh():
    cell = Cell((5.0,) * 3, (2, 2, 2))
    (k,) = kpoint_mesh(cell, 1, 1, 1)
    assert k.frac == (0.0, 0.0, 0.0) and k.weight == 1.0
    mesh = kpoint_mesh(cell, 2, 2, 2)
    assert len(mesh) == 8 and all(kp.weight == pytest.approx(1 / 8) for kp in mesh)
    assert all(-0.5 <= f < 0.5 for kp in mesh for f in kp.frac)


def test_reduction_rejects_non_cubic():
    with pytest.raises(UnsupportedSymmetryError):
        kpoint_mesh(Cell((5.0, 5.0, 6.0), (2, 2, 2)), 3, 3, 3, reduce=True)


def _cubic_observable(frac):
    # any function invariant under the cubic group and inversion
    f = np.sort(np.abs(np.asarray(frac)))
    return np.cos(2 * np.pi * f[0]) + f[1] ** 2 * f[2] + np.cos(4 * np.pi * np.sum(f**2))


@pytest.mark.parametrize("n", [2, 3, 4, 5, 9])
def test_reduced_mesh_average_equals_full(n):
    cell = Cell((5.0,) * 3, (2, 2, 2))
    full = sum(k.weight * _cubic_observable(k.frac) for k in kpoint_mesh(cell, n, n, n))
    red = sum(k.weight * _cubic_observable(k.frac) for k in kpoint_mesh(cell, n, n, n, reduce=True))
    assert red == pytest.approx(full, abs=1e-10)


def test_kpath_single_segment():
    cell = Cell((5.0,) * 3, (2, 2, 2))
    pts = kpath(cell, [("G", (0, 0, 0)), ("X", (0, 0, 0.5))], 3)
    np.testing.assert_allclose([k.frac for k in pts], [(0, 0, 0), (0, 0, 0.25), (0, 0, 0.5)])
    assert [k.label for k in pts] == ["G", None, "X"]
    assert pts[-1].path_coord == pytest.approx(np.pi / 5.0)
    (only,) = kpath(cell, [("G", (0, 0, 0)), ("X", (0, 0, 0.5))], 1)
    assert only.frac == (0, 0, 0.5)


def test_full_bcc_path_waypoints():
    cell = Cell((6.6,) * 3, (4, 4, 4))
    pts = kpath(cell, BCC_CONVENTIONAL_PATH, 5)
    labels = [k.label for k in pts if k.label]
    assert labels == ["G", "X", "M", "R", "G", "M"]
    coords = [k.path_coord for k in pts]
    assert np.all(np.diff(coords) > 0)


def test_kpath_errors():
    cell = Cell((5.0,) * 3, (2, 2, 2))
    with pytest.raises(ValueError):
        kpath(cell, [("G", (0, 0, 0))], 3)
    with pytest.raises(ValueError, match="empty segment"):
        kpath(cell, [("G", (0, 0, 0)), ("G", (0, 0, 0))], 3)
    with pytest.raises(ValueError, match="empty segment"):
        kpath(cell, [("G", (0, 0, 0)), ("X", (0, 0, 0.5))], 0)


def test_kpoint_cartesian():
    grid = build_grid(Cell((2.0, 4.0, 8.0), (1, 1, 1)))
    np.testing.assert_allclose(KPoint((0.5, 0.5, 0.5)).cartesian(grid), [np.pi / 2, np.pi / 4, np.pi / 8])
    assert np.all(grid.g2(GAMMA) == grid.g2())
