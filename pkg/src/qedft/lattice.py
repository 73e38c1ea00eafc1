"""Simulation cells, uniform real-space grids, centered reciprocal vectors and k-points."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class UnsupportedSymmetryError(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    species: str
    position: tuple  # bohr
    z_ion: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        if len(self.position) != 3:
            raise ValueError("atom position must have three components")


@dataclass(frozen=True)
class Cell:
    """Orthorhombic simulation box discretized with ``2**n`` points per axis.

    ``lengths`` are in bohr. Atom positions outside the box are wrapped when
    the cell is periodic and rejected otherwise.
    """

    lengths: tuple
    qubits: tuple
    atoms: tuple = ()
    periodic: bool = True

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        qubits = tuple(int(n) for n in self.qubits)
        if len(lengths) != 3 or len(qubits) != 3:
            raise ValueError("Cell needs three lengths and three qubit counts")
        if min(lengths) <= 0:
            raise ValueError(f"cell lengths must be positive, got {lengths}")
        if min(qubits) < 0 or sum(qubits) < 1:
            raise ValueError(f"qubit counts must be >= 0 with at least one in total, got {qubits}")
        atoms = []
        for a in self.atoms:
            pos = np.asarray(a.position, dtype=float)
            if self.periodic:
                pos = np.mod(pos, lengths)
            elif np.any(pos < 0) or np.any(pos >= lengths):
                raise ValueError(f"atom {a.species} at {a.position} lies outside the box")
            atoms.append(Atom(a.species, tuple(pos), a.z_ion))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "qubits", qubits)
        object.__setattr__(self, "atoms", tuple(atoms))

    @property
    def shape(self) -> tuple:
        return tuple(2**n for n in self.qubits)

    @property
    def n_grid_qubits(self) -> int:
        return sum(self.qubits)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def is_cubic(self) -> bool:
        return len(set(self.lengths)) == 1 and len(set(self.qubits)) == 1

    def with_atoms(self, atoms) -> "Cell":
        return Cell(self.lengths, self.qubits, tuple(atoms), self.periodic)

    def key(self) -> str:
        """Stable text key used for caching."""
        return "L=" + ",".join(f"{x:.10f}" for x in self.lengths) + ";n=" + ",".join(map(str, self.qubits))


@dataclass(frozen=True)
class KPoint:
    frac: tuple = (0.0, 0.0, 0.0)
    weight: float = 1.0
    label: str | None = None
    path_coord: float | None = None

    def cartesian(self, cell_or_grid) -> np.ndarray:
        lengths = np.asarray(cell_or_grid.lengths)
        return 2 * np.pi * np.asarray(self.frac, dtype=float) / lengths


GAMMA = KPoint()


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid over a :class:`Cell`.

    Flat index ``(i * Ny + j) * Nz + k`` is plain C ordering of an array with
    shape ``(Nx, Ny, Nz)``. Reciprocal vectors are stored per axis in centered
    order, ``m = -N/2 .. N/2-1`` and ``G = 2 pi m / L``.
    """

    cell: Cell
    shape: tuple = field(init=False)
    lengths: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", self.cell.shape)
        object.__setattr__(self, "lengths", self.cell.lengths)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.lengths) / np.asarray(self.shape)

    @property
    def dv(self) -> float:
        return self.cell.volume / self.size

    @property
    def volume(self) -> float:
        return self.cell.volume

    @cached_property
    def axes(self) -> tuple:
        return tuple(np.arange(n) * length / n for n, length in zip(self.shape, self.lengths))

    @cached_property
    def points(self) -> np.ndarray:
        """Coordinates of all grid points, shape ``(Nx, Ny, Nz, 3)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def m_axes(self) -> tuple:
        return tuple(np.arange(n) - n // 2 for n in self.shape)

    @cached_property
    def g_axes(self) -> tuple:
        """Centered reciprocal vectors per axis (1/bohr)."""
        return tuple(2 * np.pi * m / length for m, length in zip(self.m_axes, self.lengths))

    @cached_property
    def g_axes_fft(self) -> tuple:
        """Reciprocal vectors per axis in FFT (unshifted) order."""
        return tuple(2 * np.pi * np.fft.fftfreq(n, d=length / n) for n, length in zip(self.shape, self.lengths))

    def g2(self, k=None, centered: bool = True) -> np.ndarray:
        """``|G + k|**2`` on the full reciprocal grid."""
        kc = np.zeros(3) if k is None else (k.cartesian(self) if isinstance(k, KPoint) else np.asarray(k, float))
        axes = self.g_axes if centered else self.g_axes_fft
        gx, gy, gz = (g + kk for g, kk in zip(axes, kc))
        return gx[:, None, None] ** 2 + gy[None, :, None] ** 2 + gz[None, None, :] ** 2

    def min_image(self, delta: np.ndarray) -> np.ndarray:
        """Minimum-image displacement (periodic cells only)."""
        if not self.cell.periodic:
            return delta
        lengths = np.asarray(self.lengths)
        return delta - lengths * np.round(delta / lengths)

    def distance_to(self, position) -> np.ndarray:
        d = self.min_image(self.points - np.asarray(position, dtype=float))
        return np.sqrt(np.sum(d**2, axis=-1))

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.dv)


def build_grid(cell: Cell) -> Grid:
    return Grid(cell)


_CUBIC_OPS = [
    (perm, signs)
    for perm in itertools.permutations(range(3))
    for signs in itertools.product((1, -1), repeat=3)
]


def _wrap_frac(frac):
    frac = np.asarray(frac, dtype=float)
    return np.mod(frac + 0.5, 1.0) - 0.5


def kpoint_mesh(cell: Cell, n1: int, n2: int, n3: int, reduce: bool = False) -> list:
    """Gamma-centered uniform mesh, optionally folded by the cubic point group.

    Time reversal is contained in the 48-element group (inversion), so folding
    with it covers both.
    """
    ns = (int(n1), int(n2), int(n3))
    if min(ns) < 1:
        raise ValueError(f"mesh counts must be >= 1, got {ns}")
    if reduce and not (cell.is_cubic() and len(set(ns)) == 1):
        raise UnsupportedSymmetryError("symmetry reduction is only implemented for cubic cells with an n x n x n mesh")
    total = ns[0] * ns[1] * ns[2]
    points = list(itertools.product(*(range(n) for n in ns)))
    if not reduce:
        return [KPoint(tuple(_wrap_frac(np.array(p) / ns)), 1.0 / total) for p in points]

    n = ns[0]
    counts: dict = {}
    for p in points:
        images = []
        for perm, signs in _CUBIC_OPS:
            images.append(tuple((signs[a] * p[perm[a]]) % n for a in range(3)))
        rep = min(images)
        counts[rep] = counts.get(rep, 0) + 1
    return [KPoint(tuple(_wrap_frac(np.array(rep) / n)), c / total) for rep, c in sorted(counts.items())]


BCC_CONVENTIONAL_PATH = [
    ("G", (0.0, 0.0, 0.0)),
    ("X", (0.0, 0.0, 0.5)),
    ("M", (0.0, 0.5, 0.5)),
    ("R", (0.5, 0.5, 0.5)),
    ("G", (0.0, 0.0, 0.0)),
    ("M", (0.0, 0.5, 0.5)),
]


def kpath(cell: Cell, waypoints, points_per_segment: int) -> list:
    """Evenly spaced k-points along straight segments between waypoints.

    Each segment contributes ``points_per_segment`` points including both of
    its ends (joints are not repeated); with one point per segment only the
    segment end is kept.
    """
    if len(waypoints) < 2:
        raise ValueError("a k-path needs at least two waypoints")
    if points_per_segment < 1:
        raise ValueError("empty segment: points_per_segment must be >= 1")
    lengths = np.asarray(cell.lengths)
    out = []
    coord = 0.0
    for s, ((la, a), (lb, b)) in enumerate(zip(waypoints[:-1], waypoints[1:])):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        seg = np.linalg.norm(2 * np.pi * (b - a) / lengths)
        if seg == 0:
            raise ValueError(f"empty segment {la}->{lb}")
        if points_per_segment == 1:
            ts = [1.0]
        else:
            ts = np.linspace(0.0, 1.0, points_per_segment)
            if s > 0:
                ts = ts[1:]
        for t in ts:
            label = la if t == 0 else (lb if t == 1 else None)
            out.append((tuple(a + t * (b - a)), label, coord + t * seg))
        coord += seg
    return [KPoint(f, 1.0 / len(out), label, c) for f, label, c in out]
