"""Hartree potential and energy from a reciprocal-space Poisson solve (G = 0 dropped)."""

import numpy as np

from ..lattice import Grid


def _inv_g2(grid: Grid):
    g2 = grid.g2(centered=False)
    with np.errstate(divide="ignore"):
        inv = np.where(g2 > 0, 1.0 / g2, 0.0)
    return inv


def hartree_potential(rho, grid: Grid) -> np.ndarray:
    rho_g = np.fft.fftn(rho)
    return np.real(np.fft.ifftn(4 * np.pi * rho_g * _inv_g2(grid)))


def hartree_energy(rho, grid: Grid, v_h=None) -> float:
    if v_h is None:
        v_h = hartree_potential(rho, grid)
    return 0.5 * float(np.sum(v_h * rho) * grid.dv)


def hartree_energy_reciprocal(rho, grid: Grid) -> float:
    """``sum_{G != 0} 2 pi |rho(G)|^2 / G^2`` times the cell volume."""
    rho_g = np.fft.fftn(rho) * grid.dv / grid.volume  # Fourier coefficients of rho
    return float(2 * np.pi * grid.volume * np.sum(np.abs(rho_g) ** 2 * _inv_g2(grid)))
