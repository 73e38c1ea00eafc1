"""End-to-end pipelines for the LiH and BCC Li studies (shared by the CLI and the acceptance tests)."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dftcore import atomic_densities, harris_energy, input_density, ks_potential
from .dftcore.functional import HarrisResult, variational_harris_scan
from .dftcore.pseudo import ion_ion_energy, valence_electrons
from .evolution import AteSchedule, PotentialH0, ProjectorH0, run_ate
from .lattice import GAMMA, Atom, Cell, Grid, KPoint, kpoint_mesh
from .oracle import lowest_eigenpairs, non_scf_solve, scf_loop
from .qstate import (
    encode,
    lowest_planewave_vectors,
    planewave_orbitals,
    slater_orbital,
    subspace_fidelity,
)
from .readout import (
    SpectralHistogram,
    auto_tau,
    band_energy_from_dos,
    band_energy_from_phase,
    default_e_shift,
    fermi_level,
    hadamard_test,
    qpe_distribution,
)
from .smearing import fermi_bisect, occupation
from .units import ANGSTROM, EV

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ systems


def lih_cell(bond_length: float, box: float = 10 * ANGSTROM, qubits: int = 5, axis: int = 0) -> Cell:
    """LiH centred in a cubic box, bond along ``axis`` (lengths in bohr)."""
    c = np.full(3, box / 2)
    d = np.zeros(3)
    d[axis] = bond_length / 2
    atoms = (Atom("Li", tuple(c - d)), Atom("H", tuple(c + d)))
    return Cell((box,) * 3, (qubits,) * 3, atoms)


def bcc_li_cell(lattice_constant: float = 3.5 * ANGSTROM, qubits: int = 4) -> Cell:
    a = lattice_constant
    return Cell((a,) * 3, (qubits,) * 3, (Atom("Li", (0.0, 0.0, 0.0)), Atom("Li", (a / 2, a / 2, a / 2))))


def species_position(cell: Cell, species: str) -> np.ndarray:
    return np.asarray(next(a.position for a in cell.atoms if a.species == species))


def initial_center(cell: Cell, ionicity: float, rule: str = "formula") -> np.ndarray:
    """Centre of the Slater start orbital for LiH.

    ``formula``: ``(lam/2) R_H + (1 - lam/2) R_Li``; ``hydrogen``: ``R_H``;
    ``hydrogen-shift``: ``(1 - lam/2) R_H + (lam/2) R_Li``.
    """
    r_h, r_li = species_position(cell, "H"), species_position(cell, "Li")
    if rule == "formula":
        return 0.5 * ionicity * r_h + (1 - 0.5 * ionicity) * r_li
    if rule == "hydrogen":
        return r_h
    if rule == "hydrogen-shift":
        return (1 - 0.5 * ionicity) * r_h + 0.5 * ionicity * r_li
    raise ValueError(f"unknown centre rule {rule!r}")


# ------------------------------------------------------------- LiH Harris


@dataclass
class HarrisAteRun:
    ionicity: float
    harris: HarrisResult
    band_energy: float
    oracle_band_energy: float
    oracle_harris: float  # Harris energy with the oracle band energy (same rho_in)
    fidelity_initial: float
    fidelity_final: float
    tau: float | None
    meta: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.harris.total_with_ions


@dataclass
class LihSetup:
    cell: Cell
    grid: Grid
    densities: dict
    n_elec: float
    ion_ion: float


def lih_setup(bond_length: float, box: float = 10 * ANGSTROM, qubits: int = 5, box_factor: int = 1,
              cache_dir=None) -> LihSetup:
    cell = lih_cell(bond_length, box, qubits)
    grid = Grid(cell)
    dens = atomic_densities(grid, cell.atoms, box_factor=box_factor, cache_dir=cache_dir)
    return LihSetup(cell, grid, dens, valence_electrons(cell.atoms), ion_ion_energy(cell))


def harris_ate(setup: LihSetup, ionicity: float = 0.0, schedule: AteSchedule | None = None, q: float = 0.5 / ANGSTROM,
               center_rule: str = "formula", tau: float | None = None, shots: int | None = None, seed=None,
               substep: float = 0.01) -> HarrisAteRun:
    """Slater start, ATE to the Harris Hamiltonian ``H_KS[rho_in(lam)]``, Hadamard-test band energy."""
    schedule = schedule or AteSchedule(20.0, 100, 1.0)
    grid = setup.grid
    rho_in = input_density(ionicity, setup.densities)
    v = ks_potential(rho_in, grid, setup.cell.atoms)
    n_band = int(np.ceil(setup.n_elec / 2))
    w, ref = lowest_eigenpairs(grid, v, n_band + 1)
    psi0 = slater_orbital(initial_center(setup.cell, ionicity, center_rule), q, grid)
    state0 = encode(psi0, grid)
    h0 = ProjectorH0(psi0[None], schedule.e0) if schedule.splitting == "general" else PotentialH0(np.zeros(grid.shape))
    final, _ = run_ate(state0, schedule, v, h0)
    f0 = subspace_fidelity(state0, ref[:n_band])
    f1 = subspace_fidelity(final, ref[:n_band])
    spread = float(w[n_band - 1] - w[0])
    tau = auto_tau(spread) if tau is None else tau
    ht = hadamard_test(final, v, tau, shots=shots, seed=seed, substep=substep)
    band = band_energy_from_phase(ht.z, tau, n_band)
    oracle_band = float(2 * np.sum(w[:n_band]))
    res = harris_energy(band, rho_in, grid, ionicity, setup.ion_ion)
    oracle_res = harris_energy(oracle_band, rho_in, grid, ionicity, setup.ion_ion)
    return HarrisAteRun(ionicity, res, band, oracle_band, oracle_res.total_with_ions, f0, f1, tau,
                        {"z": [ht.z.real, ht.z.imag], "center_rule": center_rule, "eigenvalues_hartree": w.tolist()})


def lih_oracle_energy(setup: LihSetup, tol: float = 1e-8) -> float:
    """Self-consistent KS total energy (with ion-ion) from the neutral-atom start."""
    return scf_loop(setup.grid, setup.cell.atoms, input_density(0.0, setup.densities), tol=tol).energy


def lambda_scan(setup: LihSetup, ionicities, **kwargs):
    """Variational Harris scan; returns the :class:`HarrisScan` with :class:`HarrisAteRun` results."""
    runs = {}

    def experiment(lam):
        runs[lam] = harris_ate(setup, lam, **kwargs)
        return runs[lam].harris

    scan = variational_harris_scan(ionicities, experiment)
    return scan, [runs[float(l)] for l in scan.ionicities]


# --------------------------------------------------------------- BCC Li


@dataclass
class MetalSetup:
    cell: Cell
    grid: Grid
    rho_in: np.ndarray
    v_ks: np.ndarray
    n_elec: float


def metal_setup(cell: Cell, box_factor: int = 2, cache_dir=None) -> MetalSetup:
    grid = Grid(cell)
    dens = atomic_densities(grid, cell.atoms, box_factor=box_factor, cache_dir=cache_dir)
    rho_in = input_density(0.0, dens, transfer={})
    v = ks_potential(rho_in, grid, cell.atoms)
    return MetalSetup(cell, grid, rho_in, v, valence_electrons(cell.atoms))


def kpoint_histogram(setup: MetalSetup, kpoint: KPoint, n_band: int = 19, schedule: AteSchedule | None = None,
                     dt_qpe: float = 0.15, n_qpe: int = 2048, e_shift: float | None = None,
                     substeps: int = 1, reference: int = 0):
    """Plane-wave start, TV-splitting ATE from ``T`` to ``H_KS``, then QPE at one k-point.

    Returns ``(histogram, fidelity)``; the fidelity against the oracle's lowest
    ``n_band`` states is computed only when ``reference`` is nonzero.
    """
    schedule = schedule or AteSchedule(50 * 0.15, 50, 1.0, "tv")
    grid = setup.grid
    kvecs = lowest_planewave_vectors(n_band, grid, kpoint)
    state = encode(planewave_orbitals(kvecs, grid), grid, kpoint)
    if schedule.splitting == "tv":
        h0 = PotentialH0(np.zeros(grid.shape))
    else:
        h0 = ProjectorH0(planewave_orbitals(kvecs, grid), schedule.e0)
    final, _ = run_ate(state, schedule, setup.v_ks, h0, kpoint)
    fid = None
    if reference:
        _, ref = lowest_eigenpairs(grid, setup.v_ks, n_band, kpoint)
        fid = subspace_fidelity(final, ref)
    es = default_e_shift(setup.v_ks) if e_shift is None else e_shift
    hist = qpe_distribution(final, setup.v_ks, dt_qpe, n_qpe, es, substeps, kpoint)
    return hist, fid


def oracle_band_energy(setup: MetalSetup, kpoints, sigma: float, n_bands: int = 8):
    """Smeared band energy and Fermi level from oracle eigenvalues on a k set."""
    eigs = np.array([lowest_eigenpairs(setup.grid, setup.v_ks, n_bands, kp)[0] for kp in kpoints])
    wk = np.array([kp.weight for kp in kpoints])
    wk = wk / wk.sum()
    weights = 2 * np.repeat(wk[:, None], n_bands, axis=1)
    ef, _ = fermi_bisect(eigs, weights, setup.n_elec, sigma)
    return float(np.sum(weights * eigs * occupation(eigs - ef, sigma))), ef, eigs


@dataclass
class MetalDosRun:
    histograms: list
    fermi: object
    band_energy: float
    oracle_band_energy: float
    oracle_fermi_level: float
    oracle_eigenvalues: np.ndarray
    timings: dict

    @property
    def band_energy_error_per_atom(self) -> float:
        n_atoms = 2
        return abs(self.band_energy - self.oracle_band_energy) / n_atoms


def metal_dos(setup: MetalSetup, mesh: int = 9, sigma: float = 0.05 * EV, n_band: int = 19,
              schedule: AteSchedule | None = None, dt_qpe: float = 0.15, n_qpe: int = 2048, substeps: int = 1,
              progress=None) -> MetalDosRun:
    kpts = kpoint_mesh(setup.cell, mesh, mesh, mesh, reduce=True)
    es = default_e_shift(setup.v_ks)
    hists = []
    t0 = time.time()
    for i, kp in enumerate(kpts):
        h, _ = kpoint_histogram(setup, kp, n_band, schedule, dt_qpe, n_qpe, es, substeps)
        hists.append(h)
        if progress:
            progress(i + 1, len(kpts), time.time() - t0)
    t1 = time.time()
    fs = fermi_level(hists, setup.n_elec, sigma)
    band = band_energy_from_dos(hists, fs)
    ob, oef, eigs = oracle_band_energy(setup, kpts, sigma)
    return MetalDosRun(hists, fs, band, ob, oef, eigs, {"quantum_s": t1 - t0, "oracle_s": time.time() - t1})


def histogram_peaks_match(hist: SpectralHistogram, eigenvalues, threshold: float) -> np.ndarray:
    """Distance in bins from each histogram peak to the nearest eigenvalue."""
    pk = hist.peaks(threshold)
    e = hist.energies[pk]
    return np.array([np.min(np.abs(np.asarray(eigenvalues) - x)) / hist.bin_width for x in e])


# ------------------------------------------------------- LiH copies SCF


@dataclass
class ScfCopiesSetup:
    lih: LihSetup
    rho_in: np.ndarray
    v_harris: np.ndarray
    harris_orbital: np.ndarray
    scf: object  # OracleResult
    kernel: object  # InteractionKernel
    xc_fit: object

    @property
    def grid(self) -> Grid:
        return self.lih.grid

    def initial_state(self):
        return encode(self.harris_orbital, self.grid)

    def reference(self) -> np.ndarray:
        return self.scf.ground_orbital()


def scf_copies_setup(bond_length: float = 1.55 * ANGSTROM, box: float = 5 * ANGSTROM, qubits: int = 4,
                     r_c: float = 0.3, xc_degree: int = 2, rho_floor: float = 1e-3, xc_tolerance: float = 0.25,
                     cache_dir=None) -> ScfCopiesSetup:
    """Harris ground state at ``lam = 0``, the oracle SCF reference and the smoothed copies kernel."""
    from .dftcore import xc_poly_fit
    from .nonlinear import build_kernel

    lih = lih_setup(bond_length, box, qubits, cache_dir=cache_dir)
    grid = lih.grid
    rho_in = input_density(0.0, lih.densities)
    v = ks_potential(rho_in, grid, lih.cell.atoms)
    _, orbs = lowest_eigenpairs(grid, v, 2)
    scf = scf_loop(grid, lih.cell.atoms, rho_in, tol=1e-8)
    top = float(max(rho_in.max(), scf.density.max()))
    fit = xc_poly_fit(rho_floor, top, xc_degree, tolerance=xc_tolerance)
    kern = build_kernel(grid, lih.cell.atoms, rho_in, r_c, fit)
    return ScfCopiesSetup(lih, rho_in, v, orbs[0], scf, kern, fit)


def density_distance(a, b, grid: Grid) -> float:
    """``int |a - b| dV``."""
    return float(np.sum(np.abs(np.asarray(a) - np.asarray(b))) * grid.dv)
