"""Kohn-Sham potential assembly and Harris / KS total energies."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..lattice import Grid
from .hartree import hartree_energy, hartree_potential
from .pseudo import gth_local_potential
from .xc import lda_xc


def check_density(rho, grid: Grid, n_elec=None, tol: float = 1e-8):
    rho = np.asarray(rho)
    if rho.shape != tuple(grid.shape):
        raise ValueError(f"density shape {rho.shape} does not match grid {grid.shape}")
    if np.any(rho < 0):
        raise ValueError("density has negative values")
    if n_elec is not None:
        total = grid.integrate(rho)
        if abs(total - n_elec) > tol * max(1.0, n_elec):
            raise ValueError(f"density integrates to {total}, expected {n_elec}")
    return rho


def ks_potential(rho, grid: Grid, atoms=(), table=None, v_ext=None) -> np.ndarray:
    """``V_ext + V_H[rho] + V_xc[rho]`` on the grid."""
    if v_ext is None:
        v_ext = gth_local_potential(grid, atoms, table)
    _, v_xc, _ = lda_xc(rho, grid.dv)
    return v_ext + hartree_potential(rho, grid) + v_xc


@dataclass
class HarrisResult:
    band: float
    hartree: float  # E_H[rho]
    xc_double_counting: float  # sum V_xc[rho] rho dV
    xc: float  # E_xc[rho]
    ionicity: float | None = None
    ion_ion: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.band - self.hartree - self.xc_double_counting + self.xc

    @property
    def total_with_ions(self) -> float:
        return self.total + self.ion_ion

    def as_dict(self) -> dict:
        return {
            "band_energy_hartree": self.band,
            "hartree_energy_hartree": self.hartree,
            "xc_double_counting_hartree": self.xc_double_counting,
            "xc_energy_hartree": self.xc,
            "total_electronic_hartree": self.total,
            "ion_ion_hartree": self.ion_ion,
            "total_hartree": self.total_with_ions,
            "ionicity": self.ionicity,
        }


def double_counting(rho, grid: Grid):
    """Return ``(E_H, int V_xc rho, E_xc)`` for a density."""
    e_xc, v_xc, _ = lda_xc(rho, grid.dv)
    return hartree_energy(rho, grid), float(np.sum(v_xc * rho) * grid.dv), e_xc


def harris_energy(band_energy: float, rho_in, grid: Grid, ionicity=None, ion_ion: float = 0.0) -> HarrisResult:
    """Harris functional: band energy with double counting taken at the input density."""
    rho_in = np.asarray(rho_in, dtype=float)
    eh, vxc_rho, exc = double_counting(rho_in, grid)
    return HarrisResult(float(band_energy), eh, vxc_rho, exc, ionicity, ion_ion)


def ks_total_energy(band_energy: float, rho_out, grid: Grid, ion_ion: float = 0.0) -> float:
    """KS total energy via band energy minus double counting at the output density."""
    return harris_energy(band_energy, rho_out, grid, ion_ion=ion_ion).total_with_ions


def input_density(ionicity: float, atom_densities: dict, transfer: dict | None = None) -> np.ndarray:
    """Charge-transfer input density built from per-species isolated-atom densities.

    ``atom_densities`` maps species to the (summed) isolated density of all
    atoms of that species. ``transfer`` gives each species' fractional charge
    change per unit ionicity; the default describes LiH, H gaining and Li
    losing an electron: ``rho = (1+lam) rho_H + (1-lam) rho_Li``.
    """
    if not 0.0 <= ionicity <= 1.0:
        warnings.warn(f"ionicity {ionicity} outside [0, 1]", stacklevel=2)
    if transfer is None:
        transfer = {"H": 1.0, "Li": -1.0}
    rho = 0.0
    for sp, dens in atom_densities.items():
        rho = rho + (1.0 + ionicity * transfer.get(sp, 0.0)) * np.asarray(dens)
    return rho


@dataclass
class HarrisScan:
    ionicities: np.ndarray
    results: list
    best_index: int
    boundary: bool

    @property
    def best_ionicity(self) -> float:
        return float(self.ionicities[self.best_index])

    @property
    def best(self):
        return self.results[self.best_index]


def variational_harris_scan(ionicities, experiment) -> HarrisScan:
    """Evaluate ``experiment(lam)`` on each ionicity and keep the maximum energy.

    ``experiment`` returns a :class:`HarrisResult` or a plain energy. Ties go
    to the smaller ionicity; a maximum on either end of the scan is flagged.
    """
    lams = np.asarray(sorted(ionicities), dtype=float)
    results = [experiment(float(lam)) for lam in lams]
    energies = np.array([r.total_with_ions if isinstance(r, HarrisResult) else float(r) for r in results])
    best = int(np.argmax(energies))  # first occurrence -> smaller lambda on ties
    return HarrisScan(lams, results, best, best in (0, len(lams) - 1))
