"""Qubit-efficient multi-orbital states, density matrices, CQFT and state metrics.

A :class:`QeState` stores amplitudes ``amp[i, x, y, z]`` over a band-label
register of ``2**ceil(log2 N_band)`` rows times the grid register. Active rows
hold ``sqrt(dV / N_band) * psi_i(r)``; padding rows are exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import eigsh

from .binio import read_array, write_array
from .lattice import GAMMA, Cell, Grid, KPoint

GRID_AXES = (-3, -2, -1)


class NonOrthonormalError(ValueError):
    def __init__(self, message, gram=None):
        super().__init__(message)
        self.gram = gram


def label_rows(n_band: int) -> int:
    """Rows of the band-label register: ``2**ceil(log2 n_band)``."""
    if n_band < 1:
        raise ValueError("need at least one band")
    return 1 << int(np.ceil(np.log2(n_band))) if n_band > 1 else 1


@dataclass
class QeState:
    amplitudes: np.ndarray  # (label_rows, Nx, Ny, Nz), complex
    n_band: int
    grid: Grid
    kpoint: KPoint = GAMMA
    basis: str = "position"  # or "momentum" after a forward CQFT

    @property
    def label_qubits(self) -> int:
        return int(np.log2(self.amplitudes.shape[0]))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "QeState":
        return replace(self, amplitudes=self.amplitudes.copy())

    def with_amplitudes(self, amplitudes) -> "QeState":
        return replace(self, amplitudes=np.asarray(amplitudes, dtype=complex))


@dataclass
class MixedState:
    """Density matrix over (label, grid) x (label, grid)."""

    matrix: np.ndarray  # (D, D) with D = label_rows * N_grid
    n_band: int
    grid: Grid
    kpoint: KPoint = GAMMA
    basis: str = "position"
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def label_rows(self) -> int:
        return self.dim // self.grid.size

    def tensor(self) -> np.ndarray:
        """View as ``(L, Nx, Ny, Nz, L, Nx, Ny, Nz)``."""
        shp = (self.label_rows, *self.grid.shape)
        return self.matrix.reshape(*shp, *shp)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def normalized(self) -> "MixedState":
        return replace(self, matrix=self.matrix / self.trace().real)

    def copy(self) -> "MixedState":
        return replace(self, matrix=self.matrix.copy(), meta=dict(self.meta))

    def with_matrix(self, matrix) -> "MixedState":
        return replace(self, matrix=matrix)


def gram_matrix(orbitals, grid: Grid) -> np.ndarray:
    flat = np.asarray(orbitals).reshape(len(orbitals), -1)
    return flat.conj() @ flat.T * grid.dv


def check_orthonormal(orbitals, grid: Grid, tol: float = 1e-8) -> np.ndarray:
    gram = gram_matrix(orbitals, grid)
    err = np.max(np.abs(gram - np.eye(len(gram))))
    if err > tol:
        raise NonOrthonormalError(f"orbitals are not orthonormal (max Gram deviation {err:.3g}):\n{np.round(gram, 6)}", gram)
    return gram


def encode(orbitals, grid: Grid, kpoint: KPoint = GAMMA, tol: float = 1e-8) -> QeState:
    """Pack orthonormal orbitals (``int |psi|^2 = 1``) into the qubit-efficient register."""
    orbitals = np.asarray(orbitals, dtype=complex)
    if orbitals.ndim == 3:
        orbitals = orbitals[None]
    if orbitals.shape[1:] != tuple(grid.shape):
        raise ValueError(f"orbital shape {orbitals.shape[1:]} does not match grid {grid.shape}")
    check_orthonormal(orbitals, grid, tol)
    n_band = len(orbitals)
    amp = np.zeros((label_rows(n_band), *grid.shape), dtype=complex)
    amp[:n_band] = np.sqrt(grid.dv / n_band) * orbitals
    return QeState(amp, n_band, grid, kpoint)


def decode(state: QeState) -> np.ndarray:
    """Orbitals ``psi_i(r)`` from a position-basis state."""
    if state.basis != "position":
        state = cqft(state, "inverse")
    return state.amplitudes[: state.n_band] * np.sqrt(state.n_band / state.grid.dv)


def slater_orbital(center, q: float, grid: Grid) -> np.ndarray:
    """``exp(-q (|dx| + |dy| + |dz|))`` about ``center`` (minimum image), normalized on the grid."""
    if q <= 0:
        raise ValueError("decay constant q must be positive")
    d = grid.min_image(grid.points - np.asarray(center, dtype=float))
    psi = np.exp(-q * np.sum(np.abs(d), axis=-1)).astype(complex)
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dv)


def planewave_orbitals(kvecs, grid: Grid) -> np.ndarray:
    """``V**-1/2 exp(2 pi i K.r / L)`` for integer vectors ``K``."""
    kvecs = np.asarray(kvecs, dtype=int).reshape(-1, 3)
    if len({tuple(k) for k in kvecs}) != len(kvecs):
        raise ValueError("duplicate plane-wave vectors")
    lengths = np.asarray(grid.lengths)
    phase = np.einsum("kd,xyzd->kxyz", kvecs / lengths, grid.points)
    return np.exp(2j * np.pi * phase) / np.sqrt(grid.volume)


def integer_shells(max_k2: int) -> np.ndarray:
    """Integer vectors with ``|K|**2 <= max_k2`` sorted by length."""
    r = int(np.floor(np.sqrt(max_k2)))
    ks = [(a, b, c) for a in range(-r, r + 1) for b in range(-r, r + 1) for c in range(-r, r + 1)
          if a * a + b * b + c * c <= max_k2]
    ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2 + k[2] ** 2, k))
    return np.array(ks)


def cqft_array(x, inverse: bool = False, axes=GRID_AXES) -> np.ndarray:
    """Centered unitary DFT along ``axes``; forward uses ``exp(-i G.r)``.

    Centered momentum index ``m`` sits at array position ``m + N/2``.
    """
    if inverse:
        return sfft.ifftn(sfft.ifftshift(x, axes=axes), axes=axes, norm="ortho")
    return sfft.fftshift(sfft.fftn(x, axes=axes, norm="ortho"), axes=axes)


def cqft(state, direction: str = "forward"):
    """Apply the CQFT to the grid register of a pure or mixed state."""
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    inv = direction == "inverse"
    target = "position" if inv else "momentum"
    if isinstance(state, QeState):
        return replace(state, amplitudes=cqft_array(state.amplitudes, inv), basis=target)
    if isinstance(state, MixedState):
        t = state.tensor()
        t = cqft_array(t, inv, axes=(1, 2, 3))
        t = cqft_array(t.conj(), inv, axes=(5, 6, 7)).conj()
        return replace(state, matrix=t.reshape(state.dim, state.dim), basis=target)
    return cqft_array(np.asarray(state), inv)


def overlap_matrix(a: QeState, b: QeState) -> np.ndarray:
    """``S_ij = N_band * sum_r conj(amp_a[i, r]) amp_b[j, r]`` (the orbital overlaps)."""
    if a.n_band != b.n_band or a.amplitudes.shape != b.amplitudes.shape:
        raise ValueError("states have different band counts or grids")
    n = a.n_band
    fa = a.amplitudes[:n].reshape(n, -1)
    fb = b.amplitudes[:n].reshape(n, -1)
    return n * (fa.conj() @ fb.T)


def _reference_vectors(reference, grid: Grid) -> np.ndarray:
    """Unit vectors ``sqrt(dV) psi_ref`` as rows."""
    ref = np.asarray(reference, dtype=complex)
    if ref.ndim == 3:
        ref = ref[None]
    return ref.reshape(len(ref), -1) * np.sqrt(grid.dv)


def subspace_fidelity(state, reference, tol: float = 1e-8) -> float:
    """Overlap of a state with reference orbitals.

    Single band: ``|<psi_ref|psi>|**2``. Several bands: the projector overlap
    ``(1/N_band) sum_ij |<psi_ref_i|psi_j>|**2``. Mixed states use
    ``sum_ij <j, ref_i| rho |j, ref_i> / tr rho``, the same quantity for pure input.
    """
    grid = state.grid
    check_orthonormal(np.asarray(reference).reshape(-1, *grid.shape), grid, tol)
    refs = _reference_vectors(reference, grid)
    if isinstance(state, QeState):
        if state.basis != "position":
            state = cqft(state, "inverse")
        n = state.n_band
        psi = state.amplitudes[:n].reshape(n, -1)
        s = refs.conj() @ psi.T  # <ref_i | amp_j>, = S_ij / sqrt(N)
        return float(np.sum(np.abs(s) ** 2))
    if state.basis != "position":
        state = cqft(state, "inverse")
    t = state.tensor()
    nl = state.label_rows
    ng = grid.size
    blocks = t.reshape(nl, ng, nl, ng)
    total = 0.0
    for j in range(state.n_band):
        blk = blocks[j, :, j, :]
        total += np.real(np.einsum("ir,rs,is->", refs.conj(), blk, refs))
    return float(total / state.trace().real)


def to_mixed(state: QeState) -> MixedState:
    v = state.vector
    return MixedState(np.outer(v, v.conj()), state.n_band, state.grid, state.kpoint, state.basis)


def purity(rho: MixedState | np.ndarray, v0=None, dense_below: int = 512) -> float:
    """Largest eigenvalue of a normalized density matrix."""
    m = rho.matrix if isinstance(rho, MixedState) else np.asarray(rho)
    tr = np.trace(m).real
    if m.shape[0] <= dense_below:
        return float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[-1] / tr)
    w = eigsh(m, k=1, which="LA", v0=v0, tol=1e-12, return_eigenvectors=False)
    return float(w[0] / tr)


def leading_eigenvector(rho: MixedState, v0=None):
    """``(eigenvalue, vector)`` of the largest eigenvalue."""
    m = rho.matrix
    if m.shape[0] <= 512:
        w, u = np.linalg.eigh(0.5 * (m + m.conj().T))
        return float(w[-1]), u[:, -1]
    w, u = eigsh(m, k=1, which="LA", v0=v0, tol=1e-12)
    return float(w[0]), u[:, 0]


def marginal_probability(state) -> np.ndarray:
    """Grid-register probability ``p(r) = sum_i |amp(i, r)|**2`` (or the mixed diagonal)."""
    if isinstance(state, QeState):
        if state.basis != "position":
            state = cqft(state, "inverse")
        return np.sum(np.abs(state.amplitudes) ** 2, axis=0)
    if state.basis != "position":
        state = cqft(state, "inverse")
    d = np.real(np.diagonal(state.matrix)).reshape(state.label_rows, *state.grid.shape)
    return d.sum(axis=0) / state.trace().real


def electron_density(state, n_elec: float | None = None) -> np.ndarray:
    """Electron density ``N_elec p(r) / dV``; ``N_elec`` defaults to ``2 N_band``."""
    n_elec = 2 * state.n_band if n_elec is None else n_elec
    return n_elec * marginal_probability(state) / state.grid.dv


def dump_state(path, state: QeState):
    k = state.kpoint
    header = {"kind": "QeState", "grid_shape": list(state.grid.shape), "lengths_bohr": list(state.grid.lengths),
              "qubits": list(state.grid.cell.qubits), "periodic": state.grid.cell.periodic,
              "n_band": state.n_band, "kpoint_frac": list(k.frac), "kpoint_weight": k.weight, "basis": state.basis}
    return write_array(path, state.amplitudes, header)


def load_state(path, grid: Grid | None = None) -> QeState:
    amp, meta = read_array(path)
    if meta.get("kind") != "QeState":
        raise ValueError(f"{path} does not hold a QeState")
    if grid is None:
        grid = Grid(Cell(tuple(meta["lengths_bohr"]), tuple(meta["qubits"]), (), meta["periodic"]))
    elif list(grid.shape) != meta["grid_shape"]:
        raise ValueError("grid does not match the stored state")
    return QeState(amp, meta["n_band"], grid, KPoint(tuple(meta["kpoint_frac"]), meta["kpoint_weight"]), meta["basis"])


def lowest_planewave_vectors(n: int, grid: Grid, kpoint: KPoint = GAMMA) -> np.ndarray:
    """Integer vectors of the ``n`` plane waves with the smallest ``|G + k|**2``.

    Ties are broken by the integer vector so the choice is deterministic.
    """
    reach = int(np.ceil(n ** (1 / 3))) + 2
    rng = np.arange(-reach, reach + 1)
    cand = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), -1).reshape(-1, 3)
    g = 2 * np.pi * cand / np.asarray(grid.lengths) + kpoint.cartesian(grid)
    e = np.round(np.sum(g**2, axis=1), 10)
    order = np.lexsort((cand[:, 2], cand[:, 1], cand[:, 0], e))
    return cand[order[:n]]
