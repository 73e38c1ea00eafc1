"""Band-energy and spectral readout: Hadamard test, QPE histograms, Fermi level, DOS and bands."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .evolution import trotter_step_ks
from .lattice import GAMMA, KPoint
from .qstate import QeState, decode
from .smearing import NoFermiLevelError, fermi_bisect, occupation  # noqa: F401  (re-exported)
from .units import HARTREE_IN_EV


class IllConditionedPhaseError(ValueError):
    pass


# ---------------------------------------------------------------- propagation


def propagate(state: QeState, v_ks, tau: float, substep: float = 0.01, k=None) -> QeState:
    """Trotterized ``exp(-i tau H_KS)`` with symmetric steps no longer than ``substep``."""
    n = max(1, int(np.ceil(abs(tau) / substep - 1e-12)))
    dt = tau / n
    for _ in range(n):
        state = trotter_step_ks(state, dt, v_ks, k)
    return state


def _inner(a: QeState, b: QeState) -> complex:
    return complex(np.vdot(a.amplitudes, b.amplitudes))


# -------------------------------------------------------------- Hadamard test


@dataclass
class HadamardResult:
    z: complex  # estimate of (1/N_band) sum_i <psi_i|R|psi_i>
    p0_real: float
    p0_imag: float
    tau: float
    shots: int | None = None


def hadamard_probabilities(z: complex):
    """Ancilla ``P(0)`` for the real test and for the test with ``S^dagger`` on the ancilla."""
    return 0.5 * (1 + z.real), 0.5 * (1 + z.imag)


def hadamard_test(state: QeState, v_ks, tau: float, shots: int | None = None, seed=None,
                  substep: float = 0.01, k=None) -> HadamardResult:
    """Simulated Hadamard test of ``R = exp(-i tau H_KS)`` on the encoded orbitals.

    With ``shots`` the two ancilla outcomes are binomially sampled and ``z`` is
    rebuilt as ``(2 p0_real - 1) + i (2 p0_imag - 1)``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    evolved = propagate(state, v_ks, tau, substep, k)
    z = _inner(state, evolved)
    p_re, p_im = hadamard_probabilities(z)
    if shots is None:
        return HadamardResult(z, p_re, p_im, tau)
    rng = np.random.default_rng(seed)
    p_re_s = rng.binomial(shots, np.clip(p_re, 0, 1)) / shots
    p_im_s = rng.binomial(shots, np.clip(p_im, 0, 1)) / shots
    return HadamardResult(complex(2 * p_re_s - 1, 2 * p_im_s - 1), p_re_s, p_im_s, tau, shots)


def band_energy_from_phase(z: complex, tau: float, n_band: int, min_modulus: float = 1e-6) -> float:
    """``2 sum_i eps_i = -(2 N_band / tau) arg z``."""
    if abs(z) < min_modulus:
        raise IllConditionedPhaseError(f"|z| = {abs(z):.3g} is too small to read a phase")
    return float(-2 * n_band / tau * np.angle(z))


def auto_tau(spread: float, scale: float = 0.5, cap: float = 1.0) -> float:
    """Default Hadamard-test time ``min(scale / spread, cap)``."""
    return cap if spread <= 0 else min(scale / spread, cap)


# ------------------------------------------------------------------------ QPE


@dataclass
class SpectralHistogram:
    probabilities: np.ndarray
    dt: float
    n_qpe: int
    e_shift: float
    kpoint: KPoint = GAMMA
    n_band: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def weight(self) -> float:
        return self.kpoint.weight

    @property
    def energies(self) -> np.ndarray:
        """Bin energies ``2 pi k / (N dt) - E_shift`` (hartree)."""
        return 2 * np.pi * np.arange(self.n_qpe) / (self.n_qpe * self.dt) - self.e_shift

    @property
    def bin_width(self) -> float:
        return 2 * np.pi / (self.n_qpe * self.dt)

    def peaks(self, threshold: float) -> np.ndarray:
        """Indices of local maxima (cyclic) with probability at least ``threshold``."""
        p = self.probabilities
        left, right = np.roll(p, 1), np.roll(p, -1)
        return np.flatnonzero((p >= threshold) & (p >= left) & (p > right))

    def nearest_bin(self, energy: float) -> int:
        phase = (energy + self.e_shift) * self.dt
        return int(np.round(phase * self.n_qpe / (2 * np.pi))) % self.n_qpe


def autocorrelation(state: QeState, v_ks, dt: float, n: int, e_shift: float = 0.0, substeps: int = 1, k=None):
    """``C(tau) = <psi| R^tau |psi>`` for ``tau = 0..n-1`` with ``R = exp(-i dt (H + E_shift))``.

    ``R`` is ``substeps`` symmetric Trotter steps. The state is carried in
    momentum space shifted by half a kinetic step, so consecutive half steps
    merge and each substep costs one FFT pair. Padding label rows stay zero
    and are skipped.
    """
    k = state.kpoint if k is None else k
    axes = (1, 2, 3)
    sub = dt / substeps
    kin = np.exp(-0.5j * sub * state.grid.g2(k, centered=False))
    half = np.exp(-0.25j * sub * state.grid.g2(k, centered=False))
    pot = np.exp(-1j * sub * np.asarray(v_ks))
    psi_g = sfft.fftn(state.amplitudes[: state.n_band], axes=axes, norm="ortho")
    bra = np.conj(half) * psi_g  # <psi| K_half, applied to the shifted ket
    ket = np.conj(half) * psi_g  # K_half^-1 psi
    shift_phase = np.exp(-1j * dt * e_shift)
    c = np.empty(n, dtype=complex)
    for tau in range(n):
        c[tau] = np.vdot(bra, ket) * shift_phase**tau
        if tau < n - 1:
            for _ in range(substeps):
                ket = sfft.fftn(pot * sfft.ifftn(kin * ket, axes=axes, norm="ortho"), axes=axes, norm="ortho")
    return c


def qpe_from_autocorrelation(c: np.ndarray) -> np.ndarray:
    """``Pr(k) = (1/N^2) sum_{|tau|<N} (N - |tau|) exp(2 pi i k tau / N) C(tau)``, ``C(-tau) = C(tau)*``."""
    n = len(c)
    w = (n - np.arange(n)) * c
    s = n * np.fft.ifft(w)  # sum_tau w_tau exp(+2 pi i k tau / N), tau >= 0
    return (2 * s.real - n * c[0].real) / n**2


def qpe_distribution(state: QeState, v_ks, dt: float, n_qpe: int, e_shift: float, substeps: int = 1,
                     k=None) -> SpectralHistogram:
    """QPE outcome distribution via the autocorrelation identity."""
    k = state.kpoint if k is None else k
    c = autocorrelation(state, v_ks, dt, n_qpe, e_shift, substeps, k)
    p = qpe_from_autocorrelation(c)
    if p.min() < -1e-9:
        raise RuntimeError(f"negative QPE probability {p.min():.3g}")
    p = np.clip(p, 0.0, None)
    return SpectralHistogram(p, dt, n_qpe, e_shift, k, state.n_band, {"substeps": substeps})


def brute_force_qpe(state: QeState, v_ks, dt: float, n_qpe: int, e_shift: float, substeps: int = 1, k=None):
    """Explicit register simulation: ``sum_j |j> (R^dagger)^j |psi> / sqrt(N)``, then inverse QFT."""
    k = state.kpoint if k is None else k
    vec = state.vector
    reg = np.empty((n_qpe, vec.size), dtype=complex)
    cur = state
    sub = dt / substeps
    for j in range(n_qpe):
        reg[j] = cur.vector * np.exp(1j * j * dt * e_shift)
        for _ in range(substeps):
            cur = trotter_step_ks(cur, -sub, v_ks, k)
    reg /= np.sqrt(n_qpe)
    # inverse QFT on the register: amp_k = (1/sqrt N) sum_j exp(-2 pi i j k / N) a_j
    out = np.fft.fft(reg, axis=0) / np.sqrt(n_qpe)
    return np.sum(np.abs(out) ** 2, axis=1)


def default_e_shift(v_ks, margin: float = 0.05) -> float:
    """``-min(V_KS) + margin``: every eigenvalue then satisfies ``eps + E_shift >= margin``."""
    return float(-np.min(v_ks) + margin)


def check_window(v_ks, dt: float, e_shift: float, e_top: float):
    """Raise if levels up to ``e_top`` do not fit in one ``2 pi / dt`` window."""
    lo = np.min(v_ks) + e_shift
    hi = e_top + e_shift
    if lo < 0 or hi * dt >= 2 * np.pi:
        raise ValueError(f"spectrum [{lo:.3g}, {hi:.3g}] (shifted) does not fit the QPE window of width {2 * np.pi / dt:.3g}")


# ---------------------------------------------------------- Fermi / DOS / bands


@dataclass
class FermiSolution:
    fermi_level: float
    sigma: float
    electron_count: float
    n_elec: float

    def as_dict(self) -> dict:
        return {"fermi_level_hartree": self.fermi_level, "fermi_level_ev": self.fermi_level * HARTREE_IN_EV,
                "sigma_hartree": self.sigma, "electron_count": self.electron_count, "n_elec": self.n_elec}


def _stack(hists):
    hists = [hists] if isinstance(hists, SpectralHistogram) else list(hists)
    total_w = sum(h.weight for h in hists)
    e = np.concatenate([h.energies for h in hists])
    w = np.concatenate([2 * h.n_band * h.probabilities * h.weight / total_w for h in hists])
    return e, w


def fermi_level(hists, n_elec: float, sigma: float, tol: float = 1e-10) -> FermiSolution:
    """Solve ``sum_k w_k sum_b 2 N_band Pr(b) f(eps_b - E_F) = N_elec`` by bisection."""
    e, w = _stack(hists)
    ef, count = fermi_bisect(e, w, n_elec, sigma, tol=tol)
    return FermiSolution(ef, sigma, count, n_elec)


def band_energy_from_dos(hists, fermi, sigma: float | None = None) -> float:
    """``sum_k w_k sum_b 2 N_band Pr(b) eps_b f(eps_b - E_F)``."""
    ef = fermi.fermi_level if isinstance(fermi, FermiSolution) else float(fermi)
    if sigma is None:
        sigma = fermi.sigma if isinstance(fermi, FermiSolution) else 0.0
    e, w = _stack(hists)
    return float(np.sum(w * e * occupation(e - ef, sigma)))


def occupations_from_dos(hist: SpectralHistogram, ef: float, sigma: float) -> np.ndarray:
    return occupation(hist.energies - ef, sigma)


def band_structure(kpoints, pipeline):
    """Run ``pipeline(k) -> SpectralHistogram`` along a path and stack the results.

    Returns a list of rows ``(path_coord, energy, probability)`` and the histograms.
    """
    rows, hists = [], []
    for i, kp in enumerate(kpoints):
        h = pipeline(kp)
        hists.append(h)
        coord = kp.path_coord if kp.path_coord is not None else float(i)
        for e, p in zip(h.energies, h.probabilities):
            rows.append((coord, float(e), float(p)))
    return rows, hists


def write_dos_csv(path, hist: SpectralHistogram, ef: float | None = None, sigma: float = 0.0):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    occ = occupations_from_dos(hist, ef, sigma) if ef is not None else np.full(hist.n_qpe, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["energy_ev", "probability", "occupation"])
        for e, p, f in zip(hist.energies, hist.probabilities, occ):
            w.writerow([f"{e * HARTREE_IN_EV:.10g}", f"{p:.10g}", f"{f:.10g}"])
    return path


def write_band_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_coord_inv_bohr", "energy_ev", "probability"])
        for c, e, p in rows:
            w.writerow([f"{c:.10g}", f"{e * HARTREE_IN_EV:.10g}", f"{p:.10g}"])
    return path


def merge_dos(hists) -> tuple:
    """k-weighted DOS on the common bin grid: ``(energies, 2 N_band sum_k w_k Pr_k)``."""
    hists = list(hists)
    total_w = sum(h.weight for h in hists)
    dos = sum(2 * h.n_band * h.weight / total_w * h.probabilities for h in hists)
    return hists[0].energies, dos


# ------------------------------------------------------- N_band convergence


def subspace_leakage(evolved_orbitals, reference_orbitals, grid, n_occ: int) -> np.ndarray:
    """Per occupied reference orbital ``1 - ||P_evolved psi_j||^2``.

    This equals ``sum_{i >= N_band} |U_ij|^2`` when the evolved orbitals are
    written in the reference eigenbasis.
    """
    ev = np.asarray(evolved_orbitals).reshape(len(evolved_orbitals), -1) * np.sqrt(grid.dv)
    q, _ = np.linalg.qr(ev.T)  # orthonormal basis of the evolved span
    ref = np.asarray(reference_orbitals)[:n_occ].reshape(n_occ, -1) * np.sqrt(grid.dv)
    proj = ref.conj() @ q
    return np.clip(1 - np.sum(np.abs(proj) ** 2, axis=1), 0.0, None)


@dataclass
class NbandReport:
    n_bands: list
    band_energies: list
    leakages: list  # per N_band: array of per-occupied-orbital leakage
    tolerance: float
    converged_at: int | None

    def rows(self):
        out = []
        for i, (n, e, l) in enumerate(zip(self.n_bands, self.band_energies, self.leakages)):
            delta = None if i == 0 else e - self.band_energies[i - 1]
            out.append({"n_band": n, "band_energy_hartree": e, "delta_hartree": delta,
                        "max_leakage": float(np.max(l)) if l is not None else None})
        return out


def nband_convergence_check(experiment, n_bands, reference_orbitals=None, grid=None, n_occ: int = 1,
                            tolerance: float = 1e-3) -> NbandReport:
    """Run ``experiment(n_band) -> (band_energy, evolved_state_or_orbitals)`` for each ``n_band``.

    ``converged_at`` is the first ``n_band`` whose band energy agrees with the
    next one within ``tolerance``.
    """
    n_bands = sorted(int(n) for n in n_bands)
    if len(n_bands) < 2:
        raise ValueError("need at least two band counts")
    energies, leaks = [], []
    for n in n_bands:
        e, evolved = experiment(n)
        energies.append(float(e))
        if reference_orbitals is not None and evolved is not None:
            orbs = decode(evolved) if isinstance(evolved, QeState) else np.asarray(evolved)
            g = evolved.grid if isinstance(evolved, QeState) else grid
            leaks.append(subspace_leakage(orbs, reference_orbitals, g, n_occ))
        else:
            leaks.append(None)
    conv = None
    for i in range(len(n_bands) - 1):
        if abs(energies[i + 1] - energies[i]) < tolerance:
            conv = n_bands[i]
            break
    return NbandReport(n_bands, energies, leaks, tolerance, conv)
