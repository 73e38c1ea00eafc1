import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qedft.dftcore import atomic_densities, input_density, ks_potential, xc_poly_fit
from qedft.dftcore.xc import XcFit
from qedft.nonlinear import (InteractionKernel, PiteConfig, PiteHamiltonian, UnsupportedBandCountError,
                             VanishingSuccessError, build_kernel, channel_factor, channel_factor_dense,
                             exact_ite_state, matrix_to_momentum, matrix_to_position, mean_field_step, pite_kraus,
                             pite_map, pite_step, reduced_channel_step, run_exact_nonlinear_rte, run_scf_ate,
                             run_scf_pite, smoothed_coulomb, trotter_unitary, two_copy_channel, vks_expansion)
from qedft.oracle import dense_hamiltonian, lowest_eigenpairs
from qedft.qstate import MixedState, encode, purity

from conftest import random_density_matrix, smooth_potential


def _plain_kernel(grid, r_c=0.8, v1=None, scale=1.0):
    """Smoothed Coulomb kernel without DFT input, for channel algebra."""
    d = grid.distance_to((0.0, 0.0, 0.0))
    v1 = np.zeros(grid.shape) if v1 is None else v1
    return InteractionKernel(grid, v1, scale * smoothed_coulomb(d, r_c), r_c, np.zeros(grid.shape),
                             XcFit({2: 0.0}, 0.0, 1.0))


def test_smoothed_coulomb_limits():
    r_c = 0.4
    assert smoothed_coulomb(0.0, r_c) == pytest.approx(np.sqrt(2 / np.pi) / r_c)
    assert smoothed_coulomb(1e-7, r_c) == pytest.approx(np.sqrt(2 / np.pi) / r_c, rel=1e-10)
    assert smoothed_coulomb(20.0, r_c) == pytest.approx(1 / 20.0, rel=1e-12)
    with pytest.raises(ValueError):
        build_kernel(None, (), None, 0.0, XcFit({2: 0.0}, 0.0, 1.0))


def test_momentum_position_round_trip(tiny_grid, rng):
    m = random_density_matrix(rng, tiny_grid.size)
    hat = matrix_to_momentum(m, tiny_grid.shape)
    assert np.trace(hat).real == pytest.approx(1.0)
    np.testing.assert_allclose(matrix_to_position(hat, tiny_grid.shape), m, atol=1e-14)


@pytest.mark.parametrize("signs", [(1, 1), (-1, -1), (1, -1), (-1, 1)])
def test_channel_factor_fft_matches_dense(tiny_grid, rng, signs):
    kern = _plain_kernel(tiny_grid, 0.6, scale=3.0)
    p = rng.random(tiny_grid.shape)
    p /= p.sum()
    np.testing.assert_allclose(channel_factor(kern, p, 0.37, 2.0, signs),
                               channel_factor_dense(kern, p, 0.37, 2.0, signs), atol=1e-12)


@pytest.mark.parametrize("n_band", [1, 2])
def test_reduced_channel_equals_two_copy_trace(line_grid, n_band):
    rng = np.random.default_rng(77)
    v1 = 0.4 * np.cos(2 * np.pi * line_grid.points[..., 0] / line_grid.lengths[0])
    kern = _plain_kernel(line_grid, 0.5, v1, scale=2.0)
    dim = line_grid.size * n_band
    for trial in range(12):
        rho = MixedState(random_density_matrix(rng, dim, 1 + trial % 4), n_band, line_grid)
        dt = 0.05 + 0.1 * trial
        fast = reduced_channel_step(rho, kern, dt, 2.0, dense=False)
        dense = reduced_channel_step(rho, kern, dt, 2.0, dense=True)
        brute = two_copy_channel(rho, kern, dt, 2.0)
        np.testing.assert_allclose(fast.matrix, brute.matrix, atol=1e-12, rtol=0)
        np.testing.assert_allclose(dense.matrix, brute.matrix, atol=1e-12, rtol=0)


def test_channel_is_trace_preserving_and_keeps_diagonal(line_grid, rng):
    kern = _plain_kernel(line_grid, 0.5, scale=5.0)
    rho = MixedState(random_density_matrix(rng, line_grid.size, 3), 1, line_grid)
    out = reduced_channel_step(rho, kern, 0.8, 2.0)
    np.testing.assert_allclose(np.diagonal(out.matrix), np.diagonal(rho.matrix), atol=1e-15)
    np.testing.assert_allclose(out.matrix, out.matrix.conj().T, atol=1e-14)
    assert np.linalg.eigvalsh(out.matrix).min() > -1e-14
    assert purity(out) <= purity(rho) + 1e-12


def test_channel_keeps_position_eigenstates_pure(line_grid):
    kern = _plain_kernel(line_grid, 0.5, scale=5.0)
    m = np.zeros((line_grid.size,) * 2, dtype=complex)
    m[3, 3] = 1.0
    out = reduced_channel_step(MixedState(m, 1, line_grid), kern, 1.3, 2.0)
    np.testing.assert_allclose(out.matrix, m, atol=1e-15)


def test_mean_field_is_first_order_of_channel(line_grid):
    rng = np.random.default_rng(5)
    kern = _plain_kernel(line_grid, 0.5)
    rho = MixedState(random_density_matrix(rng, line_grid.size, 2), 1, line_grid)
    dts = 0.2 * 0.5 ** np.arange(6)
    errs = []
    for dt in dts:
        exact = reduced_channel_step(rho, kern, dt, 2.0, include_one_body=False)
        approx = mean_field_step(rho, kern, dt, 2.0)
        errs.append(np.linalg.norm(exact.matrix - approx.matrix))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 2.0) <= 0.2


def test_pure_state_channel_decoheres_at_second_order(line_grid):
    rng = np.random.default_rng(9)
    kern = _plain_kernel(line_grid, 0.5)
    v = rng.normal(size=line_grid.size) + 1j * rng.normal(size=line_grid.size)
    v /= np.linalg.norm(v)
    rho = MixedState(np.outer(v, v.conj()), 1, line_grid)
    loss = [1 - purity(reduced_channel_step(rho, kern, dt, 2.0)) for dt in (0.02, 0.01)]
    assert loss[0] / loss[1] == pytest.approx(4.0, rel=0.05)


@pytest.fixture(scope="module")
def hydrogen_kernel():
    from qedft.lattice import Atom, Cell, Grid

    grid = Grid(Cell((6.0, 6.0, 6.0), (3, 3, 3), (Atom("H", (3.0, 3.0, 3.0)),)))
    rho_in = input_density(0.0, atomic_densities(grid, grid.cell.atoms))
    fit = xc_poly_fit(1e-3, float(rho_in.max()), 3)
    return grid, rho_in, build_kernel(grid, grid.cell.atoms, rho_in, 0.4, fit, n_max=3)


def test_kernel_expansion_reproduces_ks_potential_at_input(hydrogen_kernel):
    grid, rho_in, kern = hydrogen_kernel
    np.testing.assert_allclose(vks_expansion(rho_in, kern), ks_potential(rho_in, grid, grid.cell.atoms), atol=1e-10)
    assert kern.meta["r_c_bohr"] == 0.4


def test_kernel_expansion_is_affine_in_density_at_degree_two(hydrogen_kernel):
    grid, rho_in, kern = hydrogen_kernel
    quad = InteractionKernel(grid, kern.v1, kern.v2_disp, kern.r_c, rho_in, XcFit({2: 0.1}, 0, 1), 2)
    a = 0.7 * rho_in
    b = 0.2 * np.roll(rho_in, 2, axis=0)
    mid = vks_expansion(a + b, quad) - vks_expansion(a, quad)
    np.testing.assert_allclose(mid, vks_expansion(b, quad) - quad.v1, atol=1e-12)


def test_v2_matrix_is_symmetric_circulant(tiny_grid):
    kern = _plain_kernel(tiny_grid, 0.7)
    v2 = kern.v2_matrix()
    np.testing.assert_allclose(v2, v2.T, atol=0)
    f = np.random.default_rng(0).normal(size=tiny_grid.shape)
    np.testing.assert_allclose(kern.convolve(f).ravel(), v2 @ f.ravel(), atol=1e-12)


def test_scf_ate_without_interaction_is_linear_trotter(tiny_grid):
    v = smooth_potential(tiny_grid, 2.0, 1.0)
    kern = _plain_kernel(tiny_grid, 0.6, v1=v, scale=0.0)
    _, psi = lowest_eigenpairs(tiny_grid, np.zeros(tiny_grid.shape) + 0.3 * v, 1)
    state = encode(psi[0], tiny_grid)
    run = run_scf_ate(state, 12, 0.15, kern, v0=v, reference=psi[0])
    u = np.linalg.matrix_power(trotter_unitary(tiny_grid, v, 0.15), 12)
    ref = u @ state.vector
    np.testing.assert_allclose(run.final.matrix, np.outer(ref, ref.conj()), atol=1e-11)
    assert [r["step"] for r in run.rows] == list(range(1, 13))
    assert all(abs(r["purity"] - 1) < 1e-10 for r in run.rows)


def test_scf_ate_fidelity_bounded_by_purity(tiny_grid):
    v = smooth_potential(tiny_grid, 2.0, 1.0)
    kern = _plain_kernel(tiny_grid, 0.5, v1=v, scale=4.0)
    _, psi = lowest_eigenpairs(tiny_grid, v, 1)
    run = run_scf_ate(encode(psi[0], tiny_grid), 20, 0.2, kern, v0=v, reference=psi[0])
    assert run.rows[-1]["purity"] < 1 - 1e-6
    for row in run.rows:
        assert row["fidelity"] <= row["purity"] + 1e-12
        assert row["kinetic_hartree"] >= 0
    assert tiny_grid.integrate(run.final_density) == pytest.approx(2.0, abs=1e-10)


def test_copies_drivers_reject_several_bands(tiny_grid):
    from qedft.qstate import planewave_orbitals

    state = encode(planewave_orbitals([(0, 0, 0), (1, 0, 0)], tiny_grid), tiny_grid)
    kern = _plain_kernel(tiny_grid)
    with pytest.raises(UnsupportedBandCountError):
        run_scf_ate(state, 1, 0.1, kern)
    with pytest.raises(UnsupportedBandCountError):
        run_scf_pite(state, kern, PiteConfig(0.1, 0.0))
    rho = MixedState(np.outer(state.vector, state.vector.conj()), 2, tiny_grid)
    with pytest.raises(UnsupportedBandCountError):
        pite_step(rho, PiteHamiltonian(tiny_grid, np.zeros(tiny_grid.shape)), PiteConfig(0.1, 0.0))


# ------------------------------------------------------------------ PITE


def test_pite_config():
    cfg = PiteConfig.for_imaginary_step(0.05, 0.2)
    assert cfg.imaginary_step == pytest.approx(0.2)
    for bad in (np.pi / 4, -np.pi / 4, 1.0):
        with pytest.raises(ValueError):
            PiteConfig(0.1, bad)
    spread = 40.0
    cfg = PiteConfig.for_spectrum(spread, np.pi / 3, 1.0)
    x0 = cfg.theta + np.pi / 4
    assert x0 == pytest.approx(np.pi / 3)
    assert x0 + cfg.dt * spread == pytest.approx(np.pi - x0)
    assert PiteConfig.for_spectrum(1e-3, np.pi / 3, 0.05).dt == 0.05


@given(st.floats(-0.5, 0.5), st.floats(0.02, 0.3), st.integers(0, 31))
def test_pite_eigenstate_success_follows_cosine_law(theta, dt, level):
    from qedft.lattice import Cell, Grid

    grid = Grid(Cell((5.0, 5.0, 3.0), (2, 2, 1)))
    v = smooth_potential(grid, 2.0, 1.0)
    cfg = PiteConfig(dt, theta, e_ref=0.3)
    w, vecs = np.linalg.eig(trotter_unitary(grid, v, dt))
    vec = vecs[:, level] / np.linalg.norm(vecs[:, level])
    energy_dt = -np.angle(w[level])
    rho = MixedState(np.outer(vec, vec.conj()), 1, grid)
    _, prob = pite_step(rho, PiteHamiltonian(grid, v), cfg)
    expected = np.cos(energy_dt - dt * cfg.e_ref + theta + np.pi / 4) ** 2
    assert prob == pytest.approx(expected, abs=1e-10)


def test_pite_map_matches_kraus(tiny_grid, rng):
    v = smooth_potential(tiny_grid, 2.0, 1.0)
    cfg = PiteConfig(0.07, 0.2, e_ref=-0.4)
    k_op = pite_kraus(tiny_grid, v, cfg)
    rho = random_density_matrix(rng, tiny_grid.size, 3)
    expected = k_op @ rho @ k_op.conj().T
    out, prob = pite_step(MixedState(rho, 1, tiny_grid), PiteHamiltonian(tiny_grid, v), cfg)
    assert prob == pytest.approx(np.trace(expected).real, abs=1e-12)
    np.testing.assert_allclose(out.matrix, expected / np.trace(expected).real, atol=1e-12)
    m_hat = matrix_to_momentum(rho, tiny_grid.shape)
    raw = matrix_to_position(pite_map(m_hat, PiteHamiltonian(tiny_grid, v), cfg), tiny_grid.shape)
    np.testing.assert_allclose(raw, expected, atol=1e-12)


def test_pite_with_vanishing_kernel_matches_linear(tiny_grid, rng):
    v = smooth_potential(tiny_grid, 2.0, 1.0)
    cfg = PiteConfig(0.07, 0.2)
    rho = random_density_matrix(rng, tiny_grid.size, 2)
    m_hat = matrix_to_momentum(rho, tiny_grid.shape)
    zero = _plain_kernel(tiny_grid, scale=0.0)
    a = pite_map(m_hat, PiteHamiltonian(tiny_grid, v), cfg)
    b = pite_map(m_hat, PiteHamiltonian(tiny_grid, v, zero), cfg)
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_pite_output_is_a_density_matrix(tiny_grid, rng):
    v = smooth_potential(tiny_grid, 2.0, 1.0)
    kern = _plain_kernel(tiny_grid, 0.5, v1=v, scale=3.0)
    rho = MixedState(random_density_matrix(rng, tiny_grid.size, 2), 1, tiny_grid)
    out, prob = pite_step(rho, PiteHamiltonian(tiny_grid, v, kern), PiteConfig(0.05, 0.1))
    assert 0 < prob <= 1
    assert np.trace(out.matrix).real == pytest.approx(1.0)
    np.testing.assert_allclose(out.matrix, out.matrix.conj().T, atol=1e-13)
    assert np.linalg.eigvalsh(out.matrix).min() > -1e-12


def test_pite_vanishing_success_raises(tiny_grid):
    v = smooth_potential(tiny_grid, 2.0, 1.0)
    dt = 0.1
    w, vecs = np.linalg.eig(trotter_unitary(tiny_grid, v, dt))
    vec = vecs[:, 0] / np.linalg.norm(vecs[:, 0])
    phase = -np.angle(w[0])
    # theta = 0 and an energy offset placing the state exactly on the rejected branch
    cfg = PiteConfig(dt, 0.0, e_ref=(phase - np.pi / 4) / dt)
    with pytest.raises(VanishingSuccessError):
        pite_step(MixedState(np.outer(vec, vec.conj()), 1, tiny_grid), PiteHamiltonian(tiny_grid, v), cfg)


def test_linear_pite_converges_to_ground_state(tiny_grid):
    v = smooth_potential(tiny_grid, 2.0, 1.0)
    h = dense_hamiltonian(tiny_grid, v)
    w, u = np.linalg.eigh(h)
    spread = w[-1] - w[0]
    cfg = PiteConfig.for_spectrum(spread, np.pi / 3, 0.05, e_ref=w[0])
    start = np.full(tiny_grid.size, 1 / np.sqrt(tiny_grid.size), dtype=complex)
    state = encode(start.reshape(tiny_grid.shape) / np.sqrt(tiny_grid.dv), tiny_grid)
    ground = u[:, 0].reshape(tiny_grid.shape) / np.sqrt(tiny_grid.dv)
    run = run_scf_pite(state, None, cfg, 200, v_one_body=v, reference=ground)
    fids = [r["fidelity"] for r in run.rows]
    assert fids[-1] > 0.999
    assert fids[-1] > fids[0]
    assert all(abs(r["purity"] - 1) < 1e-9 for r in run.rows)


def test_exact_ite_state(tiny_grid):
    h = dense_hamiltonian(tiny_grid, smooth_potential(tiny_grid, 2.0, 1.0))
    w, u = np.linalg.eigh(h)
    psi = u[:, 0] + 0.5 * u[:, 1]
    out = exact_ite_state(h, psi, 3.0)
    expected = u[:, 0] + 0.5 * np.exp(-3.0 * (w[1] - w[0])) * u[:, 1]
    np.testing.assert_allclose(out, expected / np.linalg.norm(expected), atol=1e-12)


def test_exact_nonlinear_ite_lowers_energy(tiny_grid):
    rho_in = input_density(0.0, atomic_densities(tiny_grid, tiny_grid.cell.atoms))
    v = ks_potential(rho_in, tiny_grid, tiny_grid.cell.atoms)
    _, psi = lowest_eigenpairs(tiny_grid, v + 0.5 * smooth_potential(tiny_grid, 1.0, 0.7), 1)
    run = run_exact_nonlinear_rte(encode(psi[0], tiny_grid), 30, 0.2, tiny_grid.cell.atoms, flavor="ite")
    energies = [r["energy_estimate_hartree"] for r in run.rows]
    assert energies[-1] < energies[0]
    assert np.all(np.diff(energies)[5:] <= 1e-8)
    with pytest.raises(ValueError):
        run_exact_nonlinear_rte(encode(psi[0], tiny_grid), 1, 0.1, tiny_grid.cell.atoms, flavor="xyz")
