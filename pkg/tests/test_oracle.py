import numpy as np
import pytest
from scipy.linalg import expm

from qedft.dftcore import atomic_densities, input_density
from qedft.dftcore.functional import check_density
from qedft.experiments import lih_cell
from qedft.lattice import Cell, Grid, KPoint, kpoint_mesh
from qedft.oracle import (ConvergenceError, apply_h, aufbau_occupations, dense_hamiltonian, exact_propagators,
                          kinetic_diagonal, ks_energy_of_orbitals, lowest_eigenpairs, non_scf_solve, scf_loop,
                          solve_bands)
from qedft.qstate import gram_matrix, planewave_orbitals
from qedft.smearing import occupation
from qedft.units import ANGSTROM

from conftest import smooth_potential


def test_free_planewave_eigenrelation(small_grid):
    k = KPoint((0.1, -0.2, 0.3))
    # Bloch convention: the solver acts on the cell-periodic part
    (periodic,) = planewave_orbitals([(1, 0, -1)], small_grid)
    g = 2 * np.pi * np.array([1, 0, -1]) / np.asarray(small_grid.lengths) + k.cartesian(small_grid)
    np.testing.assert_allclose(apply_h(periodic, 0.0, small_grid, k), 0.5 * g @ g * periodic, atol=1e-12)


def test_apply_h_hermitian(small_grid, rng):
    v = smooth_potential(small_grid)
    a = rng.normal(size=small_grid.shape) + 1j * rng.normal(size=small_grid.shape)
    b = rng.normal(size=small_grid.shape) + 1j * rng.normal(size=small_grid.shape)
    lhs = np.vdot(a, apply_h(b, v, small_grid))
    rhs = np.conj(np.vdot(b, apply_h(a, v, small_grid)))
    assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_apply_h_matches_dense(small_grid, rng):
    v = smooth_potential(small_grid)
    k = KPoint((0.25, 0.0, 0.0))
    psi = rng.normal(size=small_grid.shape) + 0j
    # dense assembly written out: kinetic in the plane-wave basis, unitary DFT
    n = small_grid.size
    f = np.fft.fftn(np.eye(n).reshape(n, *small_grid.shape), axes=(1, 2, 3), norm="ortho").reshape(n, n).T
    h = f.conj().T @ np.diag(kinetic_diagonal(small_grid, k).ravel()) @ f + np.diag(v.ravel())
    np.testing.assert_allclose(apply_h(psi, v, small_grid, k).ravel(), h @ psi.ravel(), atol=1e-12)
    np.testing.assert_allclose(dense_hamiltonian(small_grid, v, k), h, atol=1e-12)


def test_free_eigenvalues_sorted_kinetic(small_grid):
    w, _ = lowest_eigenpairs(small_grid, np.zeros(small_grid.shape), 10)
    np.testing.assert_allclose(w, np.sort(kinetic_diagonal(small_grid).ravel())[:10], atol=1e-10)


def test_iterative_agrees_with_dense(small_grid):
    v = smooth_potential(small_grid, 3.0, 1.0)
    w_dense, psi_dense = lowest_eigenpairs(small_grid, v, 4)
    w_it, psi_it = lowest_eigenpairs(small_grid, v, 4, dense_max=0, tol=1e-10)
    np.testing.assert_allclose(w_it, w_dense, atol=1e-9)
    np.testing.assert_allclose(gram_matrix(psi_it, small_grid), np.eye(4), atol=1e-10)
    for e, psi in zip(w_it, psi_it):
        assert np.linalg.norm(apply_h(psi, v, small_grid) - e * psi) * np.sqrt(small_grid.dv) < 1e-8


def test_bound_state_count_matches_dense(small_grid):
    v = smooth_potential(small_grid, 4.0, 0.9)
    w_dense = np.linalg.eigvalsh(dense_hamiltonian(small_grid, v))
    barrier = v.max()
    count = int(np.sum(w_dense < barrier))
    w_it, _ = lowest_eigenpairs(small_grid, v, count + 1, dense_max=0, tol=1e-9)
    assert int(np.sum(w_it < barrier)) == count


def test_eigenpairs_reject_too_many(small_grid):
    with pytest.raises(ValueError):
        lowest_eigenpairs(small_grid, np.zeros(small_grid.shape), small_grid.size + 1)


def test_eigensolver_reports_nonconvergence(small_grid):
    with pytest.raises(ConvergenceError):
        lowest_eigenpairs(small_grid, smooth_potential(small_grid), 3, dense_max=0, tol=1e-30, maxiter=2, inner=1)


def test_exact_propagators(rng):
    a = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
    h = 0.5 * (a + a.conj().T) / 8
    u = exact_propagators(h, 0.7)
    np.testing.assert_allclose(u @ u.conj().T, np.eye(64), atol=1e-12)
    np.testing.assert_allclose(u, expm(-0.7j * h), atol=1e-10)
    w, vecs = np.linalg.eigh(h)
    np.testing.assert_allclose(exact_propagators(h, 0.3, imaginary=True) @ vecs[:, 0], np.exp(-0.3 * w[0]) * vecs[:, 0],
                               atol=1e-12)
    with pytest.raises(ValueError):
        exact_propagators(np.zeros((4097, 4097)), 0.1)


def test_aufbau():
    np.testing.assert_allclose(aufbau_occupations(3, 5.0), [2, 2, 1])
    with pytest.raises(ValueError):
        aufbau_occupations(1, 3.0)


@pytest.fixture(scope="module")
def lih():
    cell = lih_cell(1.55 * ANGSTROM, 5 * ANGSTROM, 4)
    grid = Grid(cell)
    dens = atomic_densities(grid, cell.atoms)
    scf = scf_loop(grid, cell.atoms, input_density(0.0, dens), tol=1e-10)
    return cell, grid, dens, scf


def test_scf_result_invariants(lih):
    cell, grid, dens, scf = lih
    check_density(scf.density, grid, 2.0)
    orbs = scf.orbitals[0]
    np.testing.assert_allclose(gram_matrix(orbs, grid), np.eye(len(orbs)), atol=1e-10)
    v = non_scf_solve(grid, cell.atoms, scf.density)
    from qedft.dftcore import ks_potential

    pot = ks_potential(scf.density, grid, cell.atoms)
    for e, psi in zip(scf.eigenvalues[0], orbs):
        assert np.linalg.norm(apply_h(psi, pot, grid) - e * psi) * np.sqrt(grid.dv) < 1e-6
    assert v.energy == pytest.approx(scf.energy, abs=1e-8)


def test_scf_from_converged_density_is_one_iteration(lih):
    cell, grid, _, scf = lih
    again = scf_loop(grid, cell.atoms, scf.density, tol=1e-8)
    assert again.iterations == 1
    np.testing.assert_allclose(again.density, scf.density, atol=1e-8)


def test_harris_below_ks_for_neutral_start(lih):
    cell, grid, dens, scf = lih
    assert non_scf_solve(grid, cell.atoms, input_density(0.0, dens)).energy < scf.energy


def test_ks_energy_is_minimal_at_self_consistency(lih):
    cell, grid, dens, scf = lih
    from qedft.dftcore.pseudo import gth_local_potential

    v_ext = gth_local_potential(grid, cell.atoms)
    e_scf = ks_energy_of_orbitals(scf.orbitals[0], [2.0], grid, v_ext)
    assert e_scf + scf.ion_ion == pytest.approx(scf.energy, abs=1e-7)
    for lam in (0.0, 0.5, 1.0):
        trial = non_scf_solve(grid, cell.atoms, input_density(lam, dens))
        assert ks_energy_of_orbitals(trial.orbitals[0], [2.0], grid, v_ext) >= e_scf - 1e-9


def test_scf_errors(lih):
    cell, grid, dens, _ = lih
    with pytest.raises(ValueError):
        scf_loop(grid, cell.atoms, input_density(0.0, dens), beta=0.0)
    with pytest.raises(ConvergenceError) as info:
        scf_loop(grid, cell.atoms, input_density(0.0, dens), max_iter=2)
    assert len(info.value.history) == 2


def test_metallic_occupations_use_shared_smearing():
    grid = Grid(Cell((6.0,) * 3, (3, 3, 3)))
    v = smooth_potential(grid, 0.5, 1.5)
    kpts = kpoint_mesh(grid.cell, 2, 2, 2)
    sigma = 0.01
    eigs, orbs, occ, ef, rho, band = solve_bands(grid, v, 4, 3.0, kpts, sigma)
    expected = 2 * np.array([k.weight for k in kpts])[:, None] * occupation(eigs - ef, sigma)
    np.testing.assert_allclose(occ, expected, atol=1e-14)
    assert np.sum(occ) == pytest.approx(3.0, abs=1e-8)
    assert grid.integrate(rho) == pytest.approx(3.0, abs=1e-8)
