"""Spin-unpolarized LDA: Dirac exchange plus Perdew-Wang 1992 correlation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

XC_NAME = "LDA: Dirac exchange + PW92 correlation (unpolarized, A=0.031091)"

# PW92 unpolarized parameters (p = 1)
_A = 0.031091
_ALPHA1 = 0.21370
_BETA = (7.5957, 3.5876, 1.6382, 0.49294)

_RHO_FLOOR = 1e-30


def _pw92(rs):
    b1, b2, b3, b4 = _BETA
    srs = np.sqrt(rs)
    q0 = -2 * _A * (1 + _ALPHA1 * rs)
    q1 = 2 * _A * (b1 * srs + b2 * rs + b3 * rs * srs + b4 * rs**2)
    dq1 = _A * (b1 / srs + 2 * b2 + 3 * b3 * srs + 4 * b4 * rs)
    log = np.log1p(1.0 / q1)
    ec = q0 * log
    dec = -2 * _A * _ALPHA1 * log - q0 * dq1 / (q1**2 + q1)
    return ec, dec


def xc_energy_density(rho):
    """Return ``(eps_xc, v_xc)`` pointwise; both vanish where ``rho == 0``."""
    rho = np.asarray(rho, dtype=float)
    eps = np.zeros_like(rho)
    v = np.zeros_like(rho)
    m = rho > _RHO_FLOOR
    r = rho[m]
    ex = -0.75 * (3 * r / np.pi) ** (1 / 3)
    rs = (3 / (4 * np.pi * r)) ** (1 / 3)
    ec, dec = _pw92(rs)
    eps[m] = ex + ec
    v[m] = 4 / 3 * ex + ec - rs / 3 * dec
    return eps, v


def lda_xc(rho, dv: float = 1.0):
    """Return ``(E_xc, V_xc, eps_xc)``. ``E_xc = sum(rho * eps_xc) * dv``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("LDA needs a non-negative density")
    eps, v = xc_energy_density(rho)
    return float(np.sum(rho * eps) * dv), v, eps


@dataclass(frozen=True)
class XcFit:
    """``rho * eps_xc(rho) ~ sum_alpha c_alpha rho**alpha`` for alpha >= 2."""

    coeffs: dict
    rho_min: float
    rho_max: float
    residual: float = 0.0
    tolerance: float = np.inf
    meta: dict = field(default_factory=dict)

    @property
    def degree(self) -> int:
        return max(self.coeffs)

    def energy_density(self, rho):
        rho = np.asarray(rho, dtype=float)
        return sum(c * rho**a for a, c in self.coeffs.items())

    def potential(self, rho):
        rho = np.asarray(rho, dtype=float)
        return sum(a * c * rho ** (a - 1) for a, c in self.coeffs.items())


def xc_poly_fit(rho_min: float, rho_max: float, degree: int = 2, n_samples: int = 400,
                tolerance: float = 0.1, func=None, max_condition: float = 1e10) -> XcFit:
    """Least-squares polynomial fit of the LDA energy density per volume.

    The fit uses log-spaced samples on ``[rho_min, rho_max]`` and no linear
    term. ``residual`` is the relative RMS error over the samples; a fit whose
    residual exceeds ``tolerance`` raises.
    """
    if not 0 < rho_min < rho_max:
        raise ValueError("need 0 < rho_min < rho_max")
    if degree < 2:
        raise ValueError("degree must be >= 2")
    rho = np.geomspace(rho_min, rho_max, n_samples)
    if func is None:
        target = rho * xc_energy_density(rho)[0]
    else:
        target = np.asarray(func(rho), dtype=float)
    powers = np.arange(2, degree + 1)
    basis = rho[:, None] ** powers[None, :]
    scale = np.linalg.norm(basis, axis=0)
    a = basis / scale
    cond = np.linalg.cond(a)
    if cond > max_condition:
        raise ValueError(f"ill-conditioned XC fit (cond={cond:.3g}); use a narrower density range or a lower degree")
    sol, *_ = np.linalg.lstsq(a, target, rcond=None)
    c = sol / scale
    resid = np.linalg.norm(a @ sol - target) / max(np.linalg.norm(target), 1e-300)
    if resid > tolerance:
        raise ValueError(f"XC fit residual {resid:.3g} exceeds tolerance {tolerance:.3g}")
    return XcFit({int(p): float(ci) for p, ci in zip(powers, c)}, float(rho_min), float(rho_max),
                 float(resid), float(tolerance), {"condition": float(cond), "functional": XC_NAME})
