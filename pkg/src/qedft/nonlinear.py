"""Readout-free self-consistency: interaction kernels, the exact trace-out channel, SCF-ATE and PITE.

The two-copy interaction traced over the partner copy multiplies the density
matrix elementwise by ``chi(r1, r1') = sum_r2 p(r2) A(r1, r2) conj(A(r1', r2))``
with ``A = exp(-i dt N_elec v2)``. Because the kernel only depends on the
minimum-image displacement, ``A`` is circulant and ``chi`` is assembled in
momentum space as ``diag(a_hat) P_hat diag(conj(a_hat))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.special import erf

from .dftcore import hartree_potential, ks_potential, lda_xc
from .dftcore.xc import XcFit
from .lattice import Grid
from .oracle import ks_energy_of_orbitals
from .qstate import MixedState, QeState, electron_density, leading_eigenvector, marginal_probability

log = logging.getLogger(__name__)


class VanishingSuccessError(RuntimeError):
    pass


class UnsupportedBandCountError(ValueError):
    pass


# ------------------------------------------------------------------ kernel


def displacement_distances(grid: Grid) -> np.ndarray:
    """Minimum-image length of the displacement from grid point 0 to every point."""
    return grid.distance_to((0.0, 0.0, 0.0))


def smoothed_coulomb(r, r_c: float):
    """``erf(r / (sqrt(2) r_c)) / r`` with its ``r -> 0`` limit ``sqrt(2/pi) / r_c``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = erf(r / (np.sqrt(2) * r_c)) / r
    return np.where(r < 1e-12, np.sqrt(2 / np.pi) / r_c, out)


@dataclass
class InteractionKernel:
    grid: Grid
    v1: np.ndarray  # one-body potential (hartree)
    v2_disp: np.ndarray  # v2 as a function of displacement index (hartree)
    r_c: float
    rho_in: np.ndarray
    xc_fit: XcFit
    n_max: int = 2
    meta: dict = field(default_factory=dict)

    def v2_matrix(self) -> np.ndarray:
        """Dense ``v2(r1, r2)``; only for small grids."""
        n = self.grid.size
        if n > 4096:
            raise ValueError("dense kernel only for grids up to 4096 points")
        idx = np.array(np.unravel_index(np.arange(n), self.grid.shape))
        d = (idx[:, :, None] - idx[:, None, :]) % np.array(self.grid.shape)[:, None, None]
        return self.v2_disp[d[0], d[1], d[2]]

    def convolve(self, f) -> np.ndarray:
        """``sum_r2 v2(r1, r2) f(r2)``."""
        return np.real(sfft.ifftn(sfft.fftn(self.v2_disp) * sfft.fftn(f)))

    def higher_order(self, rho) -> np.ndarray:
        """Pointwise ``sum_{alpha >= 3} alpha c_alpha rho**(alpha - 1)``."""
        out = np.zeros(self.grid.shape)
        for a, c in self.xc_fit.coeffs.items():
            if 3 <= a <= self.n_max:
                out = out + a * c * np.asarray(rho) ** (a - 1)
        return out


def build_kernel(grid: Grid, atoms, rho_in, r_c: float, xc_fit: XcFit, n_max: int = 2, table=None) -> InteractionKernel:
    """Smoothed two-body kernel and the one-body remainder that reproduces ``V_KS[rho_in]``."""
    if r_c <= 0:
        raise ValueError("smoothing radius must be positive")
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    c2 = xc_fit.coeffs.get(2, 0.0)
    d = displacement_distances(grid)
    v2 = smoothed_coulomb(d, r_c) + (2 * c2 / grid.dv) * np.exp(-(d**2) / (2 * r_c**2))
    kern = InteractionKernel(grid, np.zeros(grid.shape), v2, r_c, np.asarray(rho_in, float), xc_fit, n_max)
    v_exact = ks_potential(rho_in, grid, atoms, table)
    kern.v1 = v_exact - kern.convolve(rho_in) * grid.dv - kern.higher_order(rho_in)
    kern.meta = {"c2": c2, "r_c_bohr": r_c, "xc_fit_residual": xc_fit.residual}
    return kern


def vks_expansion(rho, kernel: InteractionKernel) -> np.ndarray:
    """``v1 + sum_r2 v2 rho dV`` (+ pointwise higher-order XC terms)."""
    return kernel.v1 + kernel.convolve(rho) * kernel.grid.dv + kernel.higher_order(rho)


# ------------------------------------------------------- density matrices


def _grid_axes(nd: int):
    return tuple(range(nd)), tuple(range(nd, 2 * nd))


def matrix_to_momentum(m: np.ndarray, shape) -> np.ndarray:
    """``F m F^dagger`` for an ``(N, N)`` grid operator (unitary FFT)."""
    n = int(np.prod(shape))
    t = m.reshape(*shape, *shape)
    rows, cols = _grid_axes(len(shape))
    t = sfft.fftn(t, axes=rows, norm="ortho")
    t = sfft.ifftn(t, axes=cols, norm="ortho", overwrite_x=True)
    return t.reshape(n, n)


def matrix_to_position(m: np.ndarray, shape) -> np.ndarray:
    """``F^dagger m F``."""
    n = int(np.prod(shape))
    t = m.reshape(*shape, *shape)
    rows, cols = _grid_axes(len(shape))
    t = sfft.ifftn(t, axes=rows, norm="ortho")
    t = sfft.fftn(t, axes=cols, norm="ortho", overwrite_x=True)
    return t.reshape(n, n)


def _difference_gather(f_hat: np.ndarray) -> np.ndarray:
    """``F[k, k'] = f_hat[k - k']`` over all 3-D momentum pairs."""
    nx, ny, nz = f_hat.shape
    dx = (np.arange(nx)[:, None] - np.arange(nx)[None, :]) % nx
    dy = (np.arange(ny)[:, None] - np.arange(ny)[None, :]) % ny
    dz = (np.arange(nz)[:, None] - np.arange(nz)[None, :]) % nz
    out = f_hat[dx[:, None, None, :, None, None], dy[None, :, None, None, :, None], dz[None, None, :, None, None, :]]
    n = nx * ny * nz
    return out.reshape(n, n)


def channel_factor(kernel: InteractionKernel, p, dt: float, n_elec: float, signs=(1, 1)) -> np.ndarray:
    """``chi = A_l diag(p) A_r^dagger`` with ``A_s = exp(-i s dt N_elec v2)``, via momentum space."""
    grid = kernel.grid
    shape = grid.shape
    n = grid.size
    phase = -1j * dt * n_elec * kernel.v2_disp
    a_l = sfft.fftn(np.exp(signs[0] * phase))
    a_r = sfft.fftn(np.exp(signs[1] * phase))
    p_hat = sfft.fftn(np.asarray(p, dtype=float)) / n
    chi_hat = _difference_gather(p_hat)
    chi_hat *= a_l.reshape(-1)[:, None]
    chi_hat *= np.conj(a_r.reshape(-1))[None, :]
    # chi_hat is F chi F^dagger with unitary F
    return matrix_to_position(chi_hat, shape)


def channel_factor_dense(kernel: InteractionKernel, p, dt: float, n_elec: float, signs=(1, 1)) -> np.ndarray:
    v2 = kernel.v2_matrix()
    a_l = np.exp(-1j * signs[0] * dt * n_elec * v2)
    a_r = np.exp(-1j * signs[1] * dt * n_elec * v2)
    return (a_l * np.asarray(p).reshape(-1)[None, :]) @ a_r.conj().T


def _tile_labels(chi: np.ndarray, label_rows: int) -> np.ndarray:
    return chi if label_rows == 1 else np.tile(chi, (label_rows, label_rows))


def reduced_channel_step(rho: MixedState, kernel: InteractionKernel, dt: float, n_elec: float,
                         include_one_body: bool = True, dense: bool | None = None) -> MixedState:
    """Exact single-copy channel of ``exp(-i dt V_2)`` on two copies, plus the ``v1`` phase.

    ``rho'(x, x') = rho(x, x') chi(r, r')``; the diagonal is untouched.
    """
    if rho.basis != "position":
        raise ValueError("channel acts on position-basis density matrices")
    p = marginal_probability(rho)
    if dense is None:
        dense = kernel.grid.size <= 64
    chi = channel_factor_dense(kernel, p, dt, n_elec) if dense else channel_factor(kernel, p, dt, n_elec)
    m = rho.matrix * _tile_labels(chi, rho.label_rows)
    if include_one_body:
        ph = np.tile(np.exp(-1j * dt * kernel.v1).reshape(-1), rho.label_rows)
        m = m * ph[:, None] * ph.conj()[None, :]
    return rho.with_matrix(m)


def two_copy_channel(rho: MixedState, kernel: InteractionKernel, dt: float, n_elec: float,
                     include_one_body: bool = True) -> MixedState:
    """Brute-force oracle: ``Tr_2[U (rho x rho) U^dagger]`` with ``U = exp(-i dt N_elec V2)`` on the doubled register."""
    d = rho.dim
    if d > 128:
        raise ValueError("two-copy oracle limited to 128-dimensional registers")
    nl = rho.label_rows
    v2 = kernel.v2_matrix()
    v2_full = np.tile(v2, (nl, nl))  # depends only on grid parts of (x1, x2)
    u_diag = np.exp(-1j * dt * n_elec * v2_full).reshape(-1)  # index x1 * d + x2
    if include_one_body:
        ph = np.tile(np.exp(-1j * dt * kernel.v1).reshape(-1), nl)
        u_diag = u_diag * np.repeat(ph, d)
    big = np.kron(rho.matrix, rho.matrix)
    big = u_diag[:, None] * big * u_diag.conj()[None, :]
    reduced = np.trace(big.reshape(d, d, d, d), axis1=1, axis2=3)
    return rho.with_matrix(reduced)


def mean_field_step(rho: MixedState, kernel: InteractionKernel, dt: float, n_elec: float) -> MixedState:
    """First-order form: ``exp(-i dt V2[p]) rho exp(+i dt V2[p])`` with ``V2[p] = N_elec sum v2 p``."""
    p = marginal_probability(rho)
    v = n_elec * kernel.convolve(p)
    ph = np.tile(np.exp(-1j * dt * v).reshape(-1), rho.label_rows)
    return rho.with_matrix(rho.matrix * ph[:, None] * ph.conj()[None, :])


# ------------------------------------------------------------- SCF drivers


@dataclass
class ScfTrajectory:
    rows: list
    final: object
    final_density: np.ndarray
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)


def _kinetic_half(grid: Grid, dt: float, k=None) -> np.ndarray:
    return np.exp(-0.25j * dt * grid.g2(k, centered=False)).reshape(-1)


def _require_single_band(state):
    if state.n_band != 1:
        raise UnsupportedBandCountError("copies-based drivers support a single occupied band only")


def _momentum_vector(psi_orbital, grid: Grid) -> np.ndarray:
    v = np.asarray(psi_orbital).reshape(-1) * np.sqrt(grid.dv)
    return sfft.fftn(v.reshape(grid.shape), norm="ortho").reshape(-1)


def run_scf_ate(initial, n_steps: int, dt: float, kernel: InteractionKernel, v0=None, n_elec: float = 2.0,
                reference=None, ramp: bool = True, log_purity: bool = True) -> ScfTrajectory:
    """Mixed-state SCF-ATE with the copies channel.

    Step ``i`` with ``s = (i - 1/2) / n_steps`` applies ``exp(-i dt T/2)``,
    the one-body phase ``exp(-i dt [(1-s) V0 + s v1])``, the two-copy channel
    with strength ``s dt`` (``dt`` if ``ramp`` is false) and ``exp(-i dt T/2)``.
    ``V0`` defaults to ``V_KS[rho_in]`` so the start state is stationary at ``s = 0``.
    The density matrix is held in momentum space between steps.
    """
    _require_single_band(initial)
    grid = kernel.grid
    shape = grid.shape
    rho = initial if isinstance(initial, MixedState) else None
    if rho is None:
        v = initial.vector
        rho = MixedState(np.outer(v, v.conj()), 1, grid, initial.kpoint)
    v0 = vks_expansion(kernel.rho_in, kernel) if v0 is None else v0
    kh = _kinetic_half(grid, dt, rho.kpoint)
    kin = kh[:, None] * kh.conj()[None, :]
    t_diag = 0.5 * grid.g2(rho.kpoint, centered=False).reshape(-1)
    ref_hat = None if reference is None else _momentum_vector(reference, grid)
    m_hat = matrix_to_momentum(rho.matrix, shape)
    rows = []
    lead = None
    for step in range(1, n_steps + 1):
        s = (step - 0.5) / n_steps
        m_hat *= kin
        m = matrix_to_position(m_hat, shape)
        del m_hat
        p = np.real(np.diagonal(m)).reshape(shape)
        p = p / p.sum()
        strength = s * dt if ramp else dt
        m *= channel_factor(kernel, p, strength, n_elec)
        ph = np.exp(-1j * dt * ((1 - s) * v0 + s * kernel.v1)).reshape(-1)
        m *= ph[:, None]
        m *= ph.conj()[None, :]
        m_hat = matrix_to_momentum(m, shape)
        del m
        m_hat *= kin
        row = {"step": step, "time_au": step * dt, "s": s}
        tr = np.trace(m_hat).real
        if ref_hat is not None:
            row["fidelity"] = float(np.real(np.vdot(ref_hat, m_hat @ ref_hat)) / tr)
        if log_purity:
            val, lead = leading_eigenvector(MixedState(m_hat, 1, grid), v0=lead)
            row["purity"] = val / tr
        row["kinetic_hartree"] = float(np.real(np.sum(np.diagonal(m_hat) * t_diag)) / tr)
        rows.append(row)
    m = matrix_to_position(m_hat, shape)
    final = rho.with_matrix(m)
    dens = electron_density(final, n_elec)
    for r in rows:
        r.setdefault("fidelity", None)
        r.setdefault("purity", None)
    return ScfTrajectory(rows, final, dens, {"mode": "channel", "ramp": ramp, "dt": dt, "n_steps": n_steps})


def exact_potential(rho_e, grid: Grid, atoms, v_ext=None):
    """``V_KS[rho]`` assembled by the DFT core (the density-readout reference)."""
    return ks_potential(rho_e, grid, atoms, v_ext=v_ext)


def run_exact_nonlinear_rte(initial: QeState, n_steps: int, dt: float, atoms, v0=None, flavor: str = "ate",
                            n_elec: float = 2.0, reference=None, v_ext=None) -> ScfTrajectory:
    """Reference nonlinear propagation with explicit density readout each step.

    ``ate``: ``T/2, exp(-i dt [(1-s) V0 + s V_KS[rho(t)]]), T/2``.
    ``ite``: normalized ``exp(-dt T/2) exp(-dt V_KS[rho]) exp(-dt T/2)``; the
    KS energy is logged each step.
    """
    from .dftcore.pseudo import gth_local_potential
    from .evolution import kinetic_phase, potential_phase
    from .qstate import subspace_fidelity

    if flavor not in ("ate", "ite"):
        raise ValueError("flavor must be 'ate' or 'ite'")
    grid = initial.grid
    if v_ext is None:
        v_ext = gth_local_potential(grid, atoms)
    state = initial
    rows = []
    if flavor == "ate":
        if v0 is None:
            v0 = exact_potential(electron_density(initial, n_elec), grid, atoms, v_ext)
        for step in range(1, n_steps + 1):
            s = (step - 0.5) / n_steps
            state = kinetic_phase(state, 0.5 * dt)
            v = exact_potential(electron_density(state, n_elec), grid, atoms, v_ext)
            state = potential_phase(state, dt, (1 - s) * v0 + s * v)
            state = kinetic_phase(state, 0.5 * dt)
            row = {"step": step, "time_au": step * dt, "purity": 1.0}
            row["fidelity"] = subspace_fidelity(state, reference) if reference is not None else None
            rows.append(row)
    else:
        half = np.exp(-0.25 * dt * grid.g2(initial.kpoint, centered=False))
        occ = np.full(initial.n_band, n_elec / initial.n_band)
        for step in range(1, n_steps + 1):
            amp = sfft.ifftn(half * sfft.fftn(state.amplitudes, axes=(1, 2, 3)), axes=(1, 2, 3))
            tmp = state.with_amplitudes(amp)
            v = exact_potential(electron_density(tmp, n_elec), grid, atoms, v_ext)
            amp = amp * np.exp(-dt * v)
            amp = sfft.ifftn(half * sfft.fftn(amp, axes=(1, 2, 3)), axes=(1, 2, 3))
            amp = _orthonormalize_rows(amp, initial.n_band)
            state = state.with_amplitudes(amp)
            orbs = amp[: initial.n_band] * np.sqrt(initial.n_band / grid.dv)
            energy = ks_energy_of_orbitals(orbs, occ, grid, v_ext, initial.kpoint)
            row = {"step": step, "time_au": step * dt, "purity": 1.0, "energy_estimate_hartree": energy}
            row["fidelity"] = subspace_fidelity(state, reference) if reference is not None else None
            rows.append(row)
    return ScfTrajectory(rows, state, electron_density(state, n_elec), {"mode": "exact", "flavor": flavor})


def _orthonormalize_rows(amp, n_band):
    flat = amp[:n_band].reshape(n_band, -1)
    q, r = np.linalg.qr(flat.T)
    q = q * np.sign(np.real(np.diag(r)))[None, :]
    out = np.zeros_like(amp)
    out[:n_band] = (q.T / np.sqrt(n_band)).reshape(n_band, *amp.shape[1:])
    return out


# -------------------------------------------------------------------- PITE


@dataclass(frozen=True)
class PiteConfig:
    dt: float
    theta: float
    steps: int = 1
    e_ref: float = 0.0  # energy subtracted from H before forming R

    def __post_init__(self):
        x0 = self.theta + np.pi / 4
        if not 0 < x0 < np.pi / 2:
            raise ValueError("theta + pi/4 must lie in (0, pi/2)")

    @property
    def imaginary_step(self) -> float:
        return self.dt * np.tan(self.theta + np.pi / 4)

    @classmethod
    def for_spectrum(cls, spread: float, x0: float = np.pi / 3, dt_max: float = 0.05, steps: int = 1,
                     e_ref: float = 0.0) -> "PiteConfig":
        """Largest ``dt <= dt_max`` keeping every level's phase inside ``[x0, pi - x0]``."""
        dt = min(dt_max, (np.pi - 2 * x0) / spread)
        return cls(dt, x0 - np.pi / 4, steps, e_ref)

    @classmethod
    def for_imaginary_step(cls, dt: float, dtau: float, steps: int = 1, e_ref: float = 0.0) -> "PiteConfig":
        """Choose ``theta`` so that ``dt tan(theta + pi/4) = dtau``."""
        return cls(dt, np.arctan(dtau / dt) - np.pi / 4, steps, e_ref)


@dataclass
class PiteHamiltonian:
    """``H = T + v`` with an optional copies kernel supplying the density-dependent part."""

    grid: Grid
    v_one_body: np.ndarray
    kernel: InteractionKernel | None = None
    n_elec: float = 2.0
    strength: float = 1.0  # scales the two-copy interaction


def _pite_terms(m_hat: np.ndarray, ham: PiteHamiltonian, cfg: PiteConfig, kpoint=None):
    """Return ``(T++, T--, T+-)`` with ``T_ab = R_a rho R_b^dagger`` (``R_+ = R``, ``R_- = R^dagger``)."""
    grid = ham.grid
    shape = grid.shape
    dt = cfg.dt
    kh = _kinetic_half(grid, dt, kpoint)  # exp(-i dt T / 2)
    ph = np.exp(-1j * dt * ham.v_one_body).reshape(-1)
    p = None
    terms = {}
    for signs in ((1, 1), (-1, -1), (1, -1)):
        sl, sr = signs
        kl = kh if sl > 0 else kh.conj()
        kr = kh if sr > 0 else kh.conj()
        t = m_hat * (kl[:, None] * kr.conj()[None, :])
        t = matrix_to_position(t, shape)
        if p is None:
            p = np.real(np.diagonal(t)).reshape(shape)
            p = p / p.sum()
        pl = ph if sl > 0 else ph.conj()
        pr = ph if sr > 0 else ph.conj()
        t *= pl[:, None] * pr.conj()[None, :]
        if ham.kernel is not None:
            if signs == (-1, -1):
                t *= np.conj(terms["chi++"])
            else:
                chi = channel_factor(ham.kernel, p, ham.strength * dt, ham.n_elec, signs)
                if signs == (1, 1):
                    terms["chi++"] = chi
                t *= chi
        t = matrix_to_momentum(t, shape)
        t *= kl[:, None] * kr.conj()[None, :]
        terms[signs] = t
    return terms[(1, 1)], terms[(-1, -1)], terms[(1, -1)]


def pite_map(m_hat: np.ndarray, ham: PiteHamiltonian, cfg: PiteConfig, kpoint=None) -> np.ndarray:
    """Unnormalized ``M(rho) = (1/4)[R rho R^+ + R^+ rho R - i e^{-2i th} R rho R + i e^{2i th} R^+ rho R^+]``.

    Works in momentum space; ``e_ref`` enters as ``theta -> theta - dt e_ref``.
    """
    tpp, tmm, tpm = _pite_terms(m_hat, ham, cfg, kpoint)
    th = cfg.theta - cfg.dt * cfg.e_ref
    c = -1j * np.exp(-2j * th)
    out = 0.25 * (tpp + tmm + c * tpm + np.conj(c) * tpm.conj().T)
    # post-selection shrinks the trace, which would amplify rounding noise in the anti-Hermitian part
    return 0.5 * (out + out.conj().T)


def pite_step(rho: MixedState, ham: PiteHamiltonian, cfg: PiteConfig, min_success: float = 1e-14):
    """One post-selected PITE step; returns ``(normalized state, success probability)``."""
    if rho.label_rows != 1:
        raise UnsupportedBandCountError("PITE is implemented for a single band")
    m_hat = matrix_to_momentum(rho.matrix, rho.grid.shape) if rho.basis == "position" else rho.matrix
    out = pite_map(m_hat, ham, cfg, rho.kpoint)
    prob = float(np.trace(out).real / np.trace(m_hat).real)
    if prob < min_success:
        raise VanishingSuccessError(f"PITE success probability {prob:.3g} below {min_success:g}")
    out /= np.trace(out).real
    if rho.basis == "position":
        out = matrix_to_position(out, rho.grid.shape)
    return rho.with_matrix(out), prob


def trotter_unitary(grid: Grid, v, dt: float, kpoint=None) -> np.ndarray:
    """Dense symmetric Trotter step ``exp(-i dt T/2) exp(-i dt V) exp(-i dt T/2)`` (small grids)."""
    n = grid.size
    if n > 4096:
        raise ValueError("dense Trotter step only for small grids")
    eye = np.eye(n, dtype=complex).reshape(n, *grid.shape)
    kh = np.exp(-0.25j * dt * grid.g2(kpoint, centered=False))
    cols = sfft.ifftn(kh * sfft.fftn(eye, axes=(1, 2, 3)), axes=(1, 2, 3))
    cols = cols * np.exp(-1j * dt * np.asarray(v))
    cols = sfft.ifftn(kh * sfft.fftn(cols, axes=(1, 2, 3)), axes=(1, 2, 3))
    return cols.reshape(n, n).T


def pite_kraus(grid: Grid, v, cfg: PiteConfig, kpoint=None) -> np.ndarray:
    """Dense Kraus operator ``K = (R + i e^{2i theta} R^dagger) / 2`` for a linear Hamiltonian."""
    r = trotter_unitary(grid, v, cfg.dt, kpoint)
    th = cfg.theta - cfg.dt * cfg.e_ref
    return 0.5 * (r + 1j * np.exp(2j * th) * r.conj().T)


@dataclass
class PiteRun:
    rows: list
    final: MixedState
    final_density: np.ndarray
    config: PiteConfig


def run_scf_pite(initial, kernel: InteractionKernel | None, cfg: PiteConfig, steps: int | None = None,
                 v_one_body=None, n_elec: float = 2.0, reference=None, log_purity: bool = True) -> PiteRun:
    """Repeated post-selected PITE steps with the copies channel inside every ``R``."""
    if initial.n_band != 1:
        raise UnsupportedBandCountError("PITE collapses to the lowest state; use a single band")
    grid = initial.grid
    shape = grid.shape
    steps = cfg.steps if steps is None else steps
    if isinstance(initial, QeState):
        v = initial.vector
        rho = MixedState(np.outer(v, v.conj()), 1, grid, initial.kpoint)
    else:
        rho = initial
    if v_one_body is None:
        v_one_body = kernel.v1
    ham = PiteHamiltonian(grid, v_one_body, kernel, n_elec)
    ref_hat = None if reference is None else _momentum_vector(reference, grid)
    m_hat = matrix_to_momentum(rho.matrix, shape)
    rows = []
    lead = None
    for step in range(1, steps + 1):
        out = pite_map(m_hat, ham, cfg, rho.kpoint)
        tr_in = np.trace(m_hat).real
        prob = float(np.trace(out).real / tr_in)
        if prob < 1e-14:
            raise VanishingSuccessError(f"PITE success probability {prob:.3g} at step {step}")
        m_hat = out / np.trace(out).real
        row = {"step": step, "success_probability": prob}
        if ref_hat is not None:
            row["fidelity"] = float(np.real(np.vdot(ref_hat, m_hat @ ref_hat)))
        if log_purity:
            val, lead = leading_eigenvector(MixedState(m_hat, 1, grid), v0=lead)
            row["purity"] = val
        rows.append(row)
    final = rho.with_matrix(matrix_to_position(m_hat, shape))
    return PiteRun(rows, final, electron_density(final, n_elec), cfg)


def exact_ite_state(h_dense: np.ndarray, psi, tau: float) -> np.ndarray:
    """Normalized ``exp(-tau H) psi`` using a dense eigendecomposition."""
    w, u = np.linalg.eigh(h_dense)
    c = u.conj().T @ psi
    out = u @ (np.exp(-tau * (w - w[0])) * c)
    return out / np.linalg.norm(out)


def hartree_xc_check(rho, grid: Grid):
    """``(V_H, V_xc)`` of a density; used to compare the kernel expansion with the DFT core."""
    return hartree_potential(rho, grid), lda_xc(rho, grid.dv)[1]
