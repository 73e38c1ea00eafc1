"""Local GTH pseudopotentials and the ion-ion energy."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import erf, erfc

from ..lattice import Grid


class ConfigurationError(ValueError):
    """Missing or inconsistent physical input (e.g. unknown species)."""


@dataclass(frozen=True)
class GthParams:
    species: str
    z_ion: float
    r_loc: float
    coeffs: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.r_loc <= 0:
            raise ValueError(f"r_loc must be positive for {self.species}")
        c = tuple(float(x) for x in self.coeffs) + (0.0,) * (4 - len(self.coeffs))
        object.__setattr__(self, "coeffs", c[:4])

    def radial(self, r):
        """Real-space local potential of one ion at distance ``r`` (hartree)."""
        r = np.asarray(r, dtype=float)
        x2 = (r / self.r_loc) ** 2
        c1, c2, c3, c4 = self.coeffs
        gauss = np.exp(-0.5 * x2) * (c1 + c2 * x2 + c3 * x2**2 + c4 * x2**3)
        with np.errstate(divide="ignore", invalid="ignore"):
            coul = -self.z_ion * erf(r / (np.sqrt(2.0) * self.r_loc)) / r
        coul = np.where(r < 1e-10, -self.z_ion * np.sqrt(2.0 / np.pi) / self.r_loc, coul)
        return coul + gauss

    def fourier(self, g2, volume):
        """Fourier coefficient per unit cell, ``(1/volume) * int V(r) exp(-iGr) dr``.

        The ``G = 0`` entry is set to zero.
        """
        g2 = np.asarray(g2, dtype=float)
        rl = self.r_loc
        y = g2 * rl**2
        gauss = np.exp(-0.5 * y)
        c1, c2, c3, c4 = self.coeffs
        poly = c1 + c2 * (3 - y) + c3 * (15 - 10 * y + y**2) + c4 * (105 - 105 * y + 21 * y**2 - y**3)
        with np.errstate(divide="ignore", invalid="ignore"):
            coul = -4 * np.pi * self.z_ion / g2 * gauss
        out = (coul + np.sqrt(8 * np.pi**3) * rl**3 * gauss * poly) / volume
        return np.where(g2 == 0, 0.0, out)


def _default_table_path():
    return resources.files("qedft") / "data" / "gth_lda.txt"


def load_gth_table(path=None) -> dict:
    """Read a whitespace table: species z_ion r_loc C1 [C2 C3 C4]."""
    text = Path(path).read_text() if path is not None else _default_table_path().read_text()
    table = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4:
            raise ConfigurationError(f"malformed pseudopotential line: {line!r}")
        sp = parts[0]
        nums = [float(x) for x in parts[1:]]
        table[sp] = GthParams(sp, nums[0], nums[1], tuple(nums[2:]))
    return table


_DEFAULT_TABLE = None


def default_table() -> dict:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = load_gth_table()
    return _DEFAULT_TABLE


def params_for(atom, table=None) -> GthParams:
    table = default_table() if table is None else table
    if atom.species not in table:
        raise ConfigurationError(f"no pseudopotential parameters for species {atom.species!r}")
    p = table[atom.species]
    if atom.z_ion is not None and abs(atom.z_ion - p.z_ion) > 1e-12:
        raise ConfigurationError(f"atom {atom.species} has z_ion={atom.z_ion} but the table says {p.z_ion}")
    return p


def valence_electrons(atoms, table=None) -> float:
    return float(sum(params_for(a, table).z_ion for a in atoms))


def gth_local_potential(grid: Grid, atoms, table=None) -> np.ndarray:
    """External potential on the grid.

    Periodic cells are built in reciprocal space on the grid's G set with the
    G = 0 component removed; isolated cells are sampled directly in real space.
    """
    v = np.zeros(grid.shape)
    if not atoms:
        return v
    if not grid.cell.periodic:
        for a in atoms:
            v += params_for(a, table).radial(grid.distance_to(a.position))
        return v

    gx, gy, gz = grid.g_axes_fft
    g2 = grid.g2(centered=False)
    vg = np.zeros(grid.shape, dtype=complex)
    for a in atoms:
        p = params_for(a, table)
        x, y, z = a.position
        phase = np.exp(-1j * gx * x)[:, None, None] * np.exp(-1j * gy * y)[None, :, None] * np.exp(-1j * gz * z)[None, None, :]
        vg += p.fourier(g2, grid.volume) * phase
    return np.real(np.fft.ifftn(vg)) * grid.size


def ion_ion_energy(cell, table=None, eta=None) -> float:
    """Ewald energy of the point ions with a neutralizing background.

    Isolated cells use the bare pairwise Coulomb sum.
    """
    atoms = cell.atoms
    if not atoms:
        return 0.0
    z = np.array([params_for(a, table).z_ion for a in atoms])
    pos = np.array([a.position for a in atoms])
    if not cell.periodic:
        e = 0.0
        for i in range(len(atoms)):
            for j in range(i):
                e += z[i] * z[j] / np.linalg.norm(pos[i] - pos[j])
        return float(e)

    lengths = np.asarray(cell.lengths)
    volume = cell.volume
    if eta is None:
        eta = np.sqrt(np.pi) / volume ** (1 / 3)
    tol = 1e-14
    rcut = np.sqrt(-np.log(tol)) / eta
    gcut = 2 * eta * np.sqrt(-np.log(tol))

    nmax = np.ceil(rcut / lengths).astype(int) + 1
    ranges = [np.arange(-n, n + 1) for n in nmax]
    shifts = np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, 3) * lengths
    e_real = 0.0
    for i in range(len(atoms)):
        for j in range(len(atoms)):
            d = np.linalg.norm(pos[i] - pos[j] + shifts, axis=1)
            if i == j:
                d = d[d > 1e-12]
            d = d[d < rcut]
            e_real += 0.5 * z[i] * z[j] * np.sum(erfc(eta * d) / d)

    mmax = np.ceil(gcut * lengths / (2 * np.pi)).astype(int)
    ranges = [np.arange(-m, m + 1) for m in mmax]
    gvec = np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, 3) * (2 * np.pi / lengths)
    g2 = np.sum(gvec**2, axis=1)
    keep = (g2 > 0) & (g2 < gcut**2)
    gvec, g2 = gvec[keep], g2[keep]
    sfac = np.exp(1j * gvec @ pos.T) @ z
    e_recip = 2 * np.pi / volume * np.sum(np.exp(-g2 / (4 * eta**2)) / g2 * np.abs(sfac) ** 2)

    e_self = -eta / np.sqrt(np.pi) * np.sum(z**2)
    e_bg = -np.pi * np.sum(z) ** 2 / (2 * volume * eta**2)
    return float(e_real + e_recip + e_self + e_bg)
