"""Classical plane-wave KS-DFT reference solver and dense test propagators."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, lobpcg

from .dftcore.functional import double_counting, harris_energy, ks_potential
from .dftcore.pseudo import gth_local_potential, ion_ion_energy, valence_electrons
from .lattice import GAMMA, Grid
from .smearing import fermi_bisect, occupation

log = logging.getLogger(__name__)

DENSE_MAX = 4096


class ConvergenceError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def kinetic_diagonal(grid: Grid, k=None) -> np.ndarray:
    """``|G + k|^2 / 2`` in FFT order."""
    return 0.5 * grid.g2(k, centered=False)


def apply_h(psi, v, grid: Grid, k=None) -> np.ndarray:
    """Matrix-free ``(T + V) psi``; ``psi`` has trailing grid axes."""
    psi = np.asarray(psi)
    axes = (-3, -2, -1)
    t = kinetic_diagonal(grid, k)
    return sfft.ifftn(t * sfft.fftn(psi, axes=axes), axes=axes) + v * psi


def dense_hamiltonian(grid: Grid, v, k=None) -> np.ndarray:
    n = grid.size
    if n > DENSE_MAX:
        raise ValueError(f"dense Hamiltonian of dimension {n} exceeds {DENSE_MAX}")
    eye = np.eye(n, dtype=complex).reshape(n, *grid.shape)
    cols = apply_h(eye, v, grid, k).reshape(n, n)
    h = cols.T  # column j is H e_j
    return 0.5 * (h + h.conj().T)


def exact_propagators(h, tau, imaginary: bool = False) -> np.ndarray:
    """Dense ``exp(-i tau H)`` (or ``exp(-tau H)``) by eigendecomposition."""
    h = np.asarray(h)
    if h.shape[0] > DENSE_MAX:
        raise ValueError(f"dimension {h.shape[0]} too large for a dense propagator")
    w, u = np.linalg.eigh(h)
    phase = np.exp(-tau * w) if imaginary else np.exp(-1j * tau * w)
    return (u * phase) @ u.conj().T


def lowest_eigenpairs(grid: Grid, v, m: int, k=None, tol: float = 1e-9, x0=None,
                      dense_max: int = 1024, maxiter: int = 600, extra: int = None, inner: int = 20):
    """Lowest ``m`` eigenpairs of ``T + V``.

    Returns ``(eigenvalues, orbitals)`` with orbitals of shape ``(m, *grid.shape)``
    normalized so that ``sum |psi|^2 dV = 1``. Small grids are solved densely;
    otherwise LOBPCG with a kinetic preconditioner is used.
    """
    n = grid.size
    if m > n:
        raise ValueError(f"requested {m} eigenpairs from a {n}-dimensional problem")
    norm = 1.0 / np.sqrt(grid.dv)
    if n <= dense_max:
        w, u = np.linalg.eigh(dense_hamiltonian(grid, v, k))
        vecs = u[:, :m].T.reshape(m, *grid.shape)
        return w[:m], vecs * norm

    shape = grid.shape
    t = kinetic_diagonal(grid, k)
    def matmat(x):
        x = np.asarray(x).T.reshape(-1, *shape)
        return apply_h(x, v, grid, k).reshape(x.shape[0], -1).T

    precond_shift = 1.0

    def prec(x):
        x = np.asarray(x)
        one = x.ndim == 1
        y = x.reshape(-1, 1) if one else x
        y = y.T.reshape(-1, *shape)
        y = sfft.ifftn(sfft.fftn(y, axes=(-3, -2, -1)) / (t + precond_shift), axes=(-3, -2, -1))
        y = y.reshape(y.shape[0], -1).T
        return y.ravel() if one else y

    a_op = LinearOperator((n, n), matvec=lambda x: matmat(x.reshape(-1, 1)).ravel(), matmat=matmat, dtype=complex)
    m_op = LinearOperator((n, n), matvec=prec, matmat=prec, dtype=complex)
    nblock = m + (extra if extra is not None else max(2, m // 4))
    nblock = min(nblock, n)
    rng = np.random.default_rng(12345)
    x = rng.standard_normal((n, nblock)) + 1j * rng.standard_normal((n, nblock))
    if x0 is not None:
        x0 = np.asarray(x0).reshape(len(x0), -1).T
        x[:, : x0.shape[1]] = x0
    # smooth random start vectors toward low kinetic energy
    x = prec(prec(x))
    x, _ = np.linalg.qr(x)

    res = None
    for attempt in range(max(1, maxiter // inner)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            w, x = lobpcg(a_op, x, M=m_op, tol=tol * 0.1, largest=False, maxiter=inner)
        x, _ = np.linalg.qr(x)
        hx = matmat(x)
        hsub = x.conj().T @ hx
        w, c = np.linalg.eigh(0.5 * (hsub + hsub.conj().T))
        x = x @ c
        hx = hx @ c
        res = np.linalg.norm(hx[:, :m] - x[:, :m] * w[:m], axis=0)
        if np.max(res) < tol:
            break
        log.debug("lobpcg restart %d, max residual %.3g", attempt, np.max(res))
    else:
        raise ConvergenceError(f"eigensolver did not converge: residuals {res}")
    vecs = x[:, :m].T.reshape(m, *shape)
    return w[:m], vecs * norm


def aufbau_occupations(n_bands: int, n_elec: float) -> np.ndarray:
    occ = np.zeros(n_bands)
    left = n_elec
    for i in range(n_bands):
        occ[i] = min(2.0, left)
        left -= occ[i]
    if left > 1e-12:
        raise ValueError(f"{n_bands} bands cannot hold {n_elec} electrons")
    return occ


@dataclass
class OracleResult:
    eigenvalues: np.ndarray  # (nk, nbands) hartree
    orbitals: list  # per k: (nbands, *grid.shape)
    occupations: np.ndarray  # (nk, nbands) including spin and k weight
    density: np.ndarray
    energy: float  # KS total energy incl. ion-ion
    band_energy: float
    ion_ion: float
    fermi_level: float | None = None
    kpoints: list = field(default_factory=list)
    history: list = field(default_factory=list)
    converged: bool = True

    @property
    def iterations(self) -> int:
        return len(self.history)

    def ground_orbital(self, ik: int = 0) -> np.ndarray:
        return self.orbitals[ik][0]

    def summary(self) -> dict:
        return {
            "eigenvalues_hartree": np.asarray(self.eigenvalues).tolist(),
            "energy_hartree": self.energy,
            "band_energy_hartree": self.band_energy,
            "ion_ion_hartree": self.ion_ion,
            "fermi_level_hartree": self.fermi_level,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def solve_bands(grid: Grid, v, n_bands: int, n_elec: float, kpoints=None, sigma=None, tol=1e-9, guess=None):
    """Diagonalize ``T + v`` at each k-point and fill ``n_elec`` electrons.

    Returns ``(eigenvalues, orbitals, occupations, E_F, density, band_energy)``;
    occupations include the factor 2 for spin and the k weights.
    """
    kpoints = kpoints or [GAMMA]
    eigs, orbs = [], []
    for ik, kp in enumerate(kpoints):
        x0 = None if guess is None else guess[ik]
        w, psi = lowest_eigenpairs(grid, v, n_bands, kp, tol=tol, x0=x0)
        eigs.append(w)
        orbs.append(psi)
    eigs = np.array(eigs)
    weights = np.array([kp.weight for kp in kpoints])
    if sigma is None and len(kpoints) == 1:
        occ = aufbau_occupations(n_bands, n_elec)[None, :] * weights[:, None]
        ef = None
    else:
        ef, _ = fermi_bisect(eigs, 2 * np.repeat(weights[:, None], n_bands, axis=1), n_elec, sigma or 0.0)
        occ = 2 * weights[:, None] * occupation(eigs - ef, sigma or 0.0)
    rho = np.zeros(grid.shape)
    for ik in range(len(kpoints)):
        rho += np.einsum("i,i...->...", occ[ik], np.abs(orbs[ik]) ** 2)
    band = float(np.sum(occ * eigs))
    return eigs, orbs, occ, ef, rho, band


def scf_loop(grid: Grid, atoms, rho0, n_elec=None, n_bands=None, beta: float = 0.3, tol: float = 1e-8,
             kpoints=None, sigma=None, max_iter: int = 300, table=None, eig_tol: float = 1e-9) -> OracleResult:
    """Self-consistent KS solution by linear density mixing.

    Stops when ``sum |rho_out - rho_in| dV < tol``. The reported total energy
    is the band energy minus double counting at the final input density, which
    equals the KS energy at self-consistency.
    """
    if not 0 < beta <= 1:
        raise ValueError("mixing parameter must be in (0, 1]")
    atoms = tuple(atoms)
    if n_elec is None:
        n_elec = valence_electrons(atoms, table)
    if n_bands is None:
        n_bands = int(np.ceil(n_elec / 2))
    v_ext = gth_local_potential(grid, atoms, table)
    e_ion = ion_ion_energy(grid.cell.with_atoms(atoms), table) if atoms else 0.0
    rho = np.asarray(rho0, dtype=float).copy()
    history = []
    guess = None
    for it in range(max_iter):
        v = ks_potential(rho, grid, v_ext=v_ext)
        eigs, orbs, occ, ef, rho_out, band = solve_bands(grid, v, n_bands, n_elec, kpoints, sigma, eig_tol, guess)
        guess = orbs
        err = float(np.sum(np.abs(rho_out - rho)) * grid.dv)
        energy = harris_energy(band, rho, grid, ion_ion=e_ion).total_with_ions
        history.append({"iteration": it + 1, "density_change": err, "energy_hartree": energy})
        log.debug("scf %d: drho=%.3e E=%.10f", it + 1, err, energy)
        if err < tol:
            return OracleResult(eigs, orbs, occ, rho_out, energy, band, e_ion, ef, list(kpoints or [GAMMA]), history)
        rho = (1 - beta) * rho + beta * rho_out
    raise ConvergenceError(f"SCF not converged after {max_iter} iterations (last change {err:.3g})", history)


def non_scf_solve(grid: Grid, atoms, rho_in, n_bands=None, n_elec=None, kpoints=None, sigma=None,
                  table=None, eig_tol: float = 1e-9) -> OracleResult:
    """One diagonalization of ``H_KS[rho_in]``; the energy is the Harris energy."""
    atoms = tuple(atoms)
    if n_elec is None:
        n_elec = valence_electrons(atoms, table)
    if n_bands is None:
        n_bands = int(np.ceil(n_elec / 2))
    v = ks_potential(rho_in, grid, atoms, table)
    e_ion = ion_ion_energy(grid.cell.with_atoms(atoms), table) if atoms else 0.0
    eigs, orbs, occ, ef, rho_out, band = solve_bands(grid, v, n_bands, n_elec, kpoints, sigma, eig_tol)
    energy = harris_energy(band, rho_in, grid, ion_ion=e_ion).total_with_ions
    return OracleResult(eigs, orbs, occ, rho_out, energy, band, e_ion, ef, list(kpoints or [GAMMA]), [])


def ks_energy_of_orbitals(orbitals, occupations, grid: Grid, v_ext, k=None) -> float:
    """Direct KS functional ``T_s + int V_ext rho + E_H + E_xc`` (no ion-ion) for given orbitals."""
    orbitals = np.asarray(orbitals)
    t = kinetic_diagonal(grid, k)
    psi_g = sfft.fftn(orbitals, axes=(-3, -2, -1))
    kin = np.sum(np.asarray(occupations)[:, None, None, None] * t * np.abs(psi_g) ** 2) * grid.dv / grid.size
    rho = np.einsum("i,i...->...", np.asarray(occupations), np.abs(orbitals) ** 2)
    eh, _, exc = double_counting(rho, grid)
    return float(kin + np.sum(v_ext * rho) * grid.dv + eh + exc)
