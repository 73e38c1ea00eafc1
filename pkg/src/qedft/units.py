"""Unit conversions. Everything internal is Hartree atomic units."""

# CODATA 2018
BOHR_IN_ANGSTROM = 0.529177210903
HARTREE_IN_EV = 27.211386245988

ANGSTROM = 1.0 / BOHR_IN_ANGSTROM  # bohr per angstrom
EV = 1.0 / HARTREE_IN_EV  # hartree per eV

_LENGTH = {"bohr": 1.0, "au": 1.0, "angstrom": ANGSTROM, "a": ANGSTROM, "nm": 10 * ANGSTROM}
_ENERGY = {"hartree": 1.0, "ha": 1.0, "au": 1.0, "ev": EV, "mev": 1e-3 * EV, "ry": 0.5}
_TIME = {"au": 1.0}
_INVLENGTH = {"1/bohr": 1.0, "1/angstrom": 1.0 / ANGSTROM, "1/a": 1.0 / ANGSTROM}

KINDS = {"length": _LENGTH, "energy": _ENERGY, "time": _TIME, "inverse_length": _INVLENGTH}


def to_internal(value, unit: str, kind: str):
    """Convert ``value`` expressed in ``unit`` to atomic units."""
    table = KINDS[kind]
    key = unit.strip().lower()
    if key not in table:
        raise ValueError(f"unknown {kind} unit {unit!r}; expected one of {sorted(table)}")
    return value * table[key]


def angstrom_to_bohr(x):
    return x * ANGSTROM


def bohr_to_angstrom(x):
    return x / ANGSTROM


def hartree_to_ev(x):
    return x * HARTREE_IN_EV


def ev_to_hartree(x):
    return x * EV
