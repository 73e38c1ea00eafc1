"""Trotterized real-time evolution and the adiabatic (ATE) driver.

Every primitive accepts a :class:`QeState` (acting on the grid register of
each label row) or a :class:`MixedState` (``U rho U^dagger``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .lattice import GAMMA, Grid, KPoint
from .qstate import MixedState, QeState, check_orthonormal, overlap_matrix, subspace_fidelity

ROW_AXES = (1, 2, 3)
COL_AXES = (5, 6, 7)


@dataclass(frozen=True)
class AteSchedule:
    t_final: float
    n_steps: int
    e0: float = 1.0
    splitting: str = "general"  # "general" (projector H0) or "tv" (H0 = T + V0)

    def __post_init__(self):
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.splitting not in ("general", "tv"):
            raise ValueError("splitting must be 'general' or 'tv'")
        if self.splitting == "general" and self.e0 <= 0:
            raise ValueError("projector depth e0 must be positive")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    def time(self, step: int) -> float:
        """Midpoint time of step ``step`` (1-based)."""
        return (step - 0.5) * self.dt

    def s(self, step: int) -> float:
        return self.time(step) / self.t_final


@dataclass(frozen=True)
class ProjectorH0:
    """``H0 = -e0 sum_i |psi_i><psi_i|`` over orthonormal prep orbitals."""

    orbitals: np.ndarray  # (n, Nx, Ny, Nz) normalized as int |psi|^2 = 1
    e0: float


@dataclass(frozen=True)
class PotentialH0:
    """``H0 = T + V0``."""

    v0: np.ndarray


def kinetic_phase_factor(grid: Grid, tau: float, k=None) -> np.ndarray:
    """``exp(-i tau |G+k|^2 / 2)`` in FFT order."""
    return np.exp(-0.5j * tau * grid.g2(k, centered=False))


def _apply_rows_cols(t: np.ndarray, fn) -> np.ndarray:
    """``U rho U^dagger`` for a tensor ``(L,x,y,z,L,x,y,z)`` given ``fn(x, axes)`` applying ``U``."""
    t = fn(t, ROW_AXES)
    return np.conj(fn(np.conj(t), COL_AXES))


def kinetic_phase(state, tau: float, k: KPoint | None = None):
    """Kinetic propagator ``exp(-i tau T)``: CQFT, diagonal phase, inverse CQFT.

    The centered shift commutes with the diagonal phase, so the plain FFT
    ordering is used internally.
    """
    if tau == 0:
        return state
    k = state.kpoint if k is None else k
    phase = kinetic_phase_factor(state.grid, tau, k)
    if isinstance(state, QeState):
        psi = sfft.ifftn(phase * sfft.fftn(state.amplitudes, axes=ROW_AXES), axes=ROW_AXES)
        return state.with_amplitudes(psi)

    def apply(x, axes):
        shp = [1] * 8
        for ax, n in zip(axes, state.grid.shape):
            shp[ax] = n
        return sfft.ifftn(phase.reshape(shp) * sfft.fftn(x, axes=axes), axes=axes)

    t = _apply_rows_cols(state.tensor(), apply)
    return state.with_matrix(t.reshape(state.dim, state.dim))


def potential_phase(state, tau: float, v):
    """Diagonal ``exp(-i tau V(r))`` on the grid register."""
    phase = np.exp(-1j * tau * np.asarray(v))
    if isinstance(state, QeState):
        return state.with_amplitudes(state.amplitudes * phase)
    row = np.broadcast_to(phase, (state.label_rows, *state.grid.shape)).reshape(-1)
    return state.with_matrix(state.matrix * row[:, None] * row.conj()[None, :])


def h0_projector_phase(state, tau: float, e0: float, prep, tol: float = 1e-8):
    """``exp(-i tau H0)`` with ``H0 = -e0 P``: components in span(prep) gain ``exp(i tau e0)``."""
    prep = np.asarray(prep, dtype=complex)
    if prep.ndim == 3:
        prep = prep[None]
    grid = state.grid
    check_orthonormal(prep, grid, tol)
    basis = prep.reshape(len(prep), -1) * np.sqrt(grid.dv)  # unit rows
    factor = np.exp(1j * tau * e0) - 1.0
    if isinstance(state, QeState):
        amp = state.amplitudes.reshape(state.amplitudes.shape[0], -1)
        coeff = amp @ basis.conj().T  # (L, n)
        amp = amp + factor * coeff @ basis
        return state.with_amplitudes(amp.reshape(state.amplitudes.shape))
    nl = state.label_rows
    ng = grid.size
    m = state.matrix.reshape(nl, ng, nl * ng)
    proj = np.einsum("nr,lrc->lnc", basis.conj(), m)
    m = m + factor * np.einsum("nr,lnc->lrc", basis, proj)
    m = m.reshape(nl * ng, nl, ng)
    proj = np.einsum("arc,nc->arn", m, basis)  # rho P
    m = m + np.conj(factor) * np.einsum("arn,nc->arc", proj, basis.conj())
    return state.with_matrix(m.reshape(nl * ng, nl * ng))


def trotter_step_general(state, s: float, dt: float, v_ks, h0: ProjectorH0, k=None):
    """Five-factor symmetric step for ``H = (1-s) H0 + s (T + V_KS)``."""
    half = 0.5 * s * dt
    state = kinetic_phase(state, half, k)
    state = potential_phase(state, half, v_ks)
    state = h0_projector_phase(state, (1 - s) * dt, h0.e0, h0.orbitals)
    state = potential_phase(state, half, v_ks)
    return kinetic_phase(state, half, k)


def trotter_step_tv(state, s: float, dt: float, v0, v_ks, k=None):
    """Three-factor step for ``H = T + (1-s) V0 + s V_KS``."""
    state = kinetic_phase(state, 0.5 * dt, k)
    state = potential_phase(state, dt, (1 - s) * np.asarray(v0) + s * np.asarray(v_ks))
    return kinetic_phase(state, 0.5 * dt, k)


def trotter_step_ks(state, dt: float, v_ks, k=None):
    """Symmetric ``T/2, V, T/2`` step of the fixed KS Hamiltonian."""
    state = kinetic_phase(state, 0.5 * dt, k)
    state = potential_phase(state, dt, v_ks)
    return kinetic_phase(state, 0.5 * dt, k)


def ate_step(state, schedule: AteSchedule, step: int, v_ks, h0, k=None):
    s = schedule.s(step)
    if schedule.splitting == "general":
        return trotter_step_general(state, s, schedule.dt, v_ks, h0, k)
    v0 = h0.v0 if isinstance(h0, PotentialH0) else np.zeros(state.grid.shape)
    return trotter_step_tv(state, s, schedule.dt, v0, v_ks, k)


TRAJECTORY_FIELDS = ("step", "time_au", "fidelity", "purity", "overlap_drift")


def run_ate(state, schedule: AteSchedule, v_ks, h0=None, k=None, reference=None, log_every: int = 0,
            trajectory_path=None):
    """Apply ``schedule.n_steps`` ATE steps; returns ``(final_state, trajectory)``.

    ``reference`` (orbitals) enables fidelity logging. For pure states the
    drift of the overlap matrix from its initial value is logged as well.
    """
    if schedule.splitting == "general" and not isinstance(h0, ProjectorH0):
        raise ValueError("general splitting needs a ProjectorH0")
    s0 = overlap_matrix(state, state) if isinstance(state, QeState) else None
    traj = []

    def record(step, st):
        row = {"step": step, "time_au": step * schedule.dt, "fidelity": None, "purity": None, "overlap_drift": None}
        if reference is not None:
            row["fidelity"] = subspace_fidelity(st, reference)
        if s0 is not None:
            row["overlap_drift"] = float(np.max(np.abs(overlap_matrix(st, st) - s0)))
        traj.append(row)

    if log_every:
        record(0, state)
    for step in range(1, schedule.n_steps + 1):
        state = ate_step(state, schedule, step, v_ks, h0, k)
        if log_every and (step % log_every == 0 or step == schedule.n_steps):
            record(step, state)
    if trajectory_path is not None:
        write_trajectory(trajectory_path, traj)
    return state, traj


def write_trajectory(path, rows, fields=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(fields or (rows[0].keys() if rows else TRAJECTORY_FIELDS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({f: ("" if r.get(f) is None else r.get(f)) for f in fields})
    return path
