"""Gaussian (erfc) smearing and Fermi-level bisection shared by the oracle and the readout."""

import numpy as np
from scipy.special import erfc


class NoFermiLevelError(RuntimeError):
    pass


def occupation(x, sigma: float):
    """``f(x) = erfc(x / sigma) / 2``; a step function when ``sigma == 0``."""
    x = np.asarray(x, dtype=float)
    if sigma <= 0:
        return np.where(x < 0, 1.0, np.where(x > 0, 0.0, 0.5))
    return 0.5 * erfc(x / sigma)


def fermi_bisect(energies, weights, n_elec: float, sigma: float, tol: float = 1e-10,
                 count_tol: float = 1e-8, lo=None, hi=None):
    """Solve ``sum(weights * f(energies - E_F)) = n_elec`` for ``E_F``.

    ``weights`` already include the spin factor (two electrons per fully
    occupied state of unit weight).
    """
    e = np.asarray(energies, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    capacity = float(np.sum(w))
    if n_elec > capacity + count_tol:
        raise NoFermiLevelError(f"only {capacity:.6g} electrons fit in the available states, need {n_elec}")

    def count(ef):
        return float(np.sum(w * occupation(e - ef, sigma)))

    span = max(10 * sigma, 1e-3)
    lo = float(e.min() - span) if lo is None else lo
    hi = float(e.max() + span) if hi is None else hi
    if count(hi) < n_elec - count_tol or count(lo) > n_elec + count_tol:
        raise NoFermiLevelError("no Fermi level in the energy window")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if count(mid) < n_elec:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    ef = 0.5 * (lo + hi)
    if sigma > 0:
        # Newton polish removes the residual count error left by the finite bracket.
        for _ in range(5):
            dens = float(np.sum(w * np.exp(-(((e - ef) / sigma) ** 2)) / (np.sqrt(np.pi) * sigma)))
            if dens <= 0:
                break
            step = (n_elec - count(ef)) / dens
            if abs(step) > 1e-6:
                break
            ef += step
    return ef, count(ef)
