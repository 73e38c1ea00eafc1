"""Densities, local pseudopotentials, LDA, Hartree and Harris/KS energy assembly."""

from .atoms import atomic_densities, fold_density, isolated_atom_density
from .functional import (
    HarrisResult,
    HarrisScan,
    check_density,
    double_counting,
    harris_energy,
    input_density,
    ks_potential,
    ks_total_energy,
    variational_harris_scan,
)
from .hartree import hartree_energy, hartree_energy_reciprocal, hartree_potential
from .pseudo import (
    ConfigurationError,
    GthParams,
    default_table,
    gth_local_potential,
    ion_ion_energy,
    load_gth_table,
    params_for,
    valence_electrons,
)
from .xc import XcFit, lda_xc, xc_energy_density, xc_poly_fit
