"""weylscope: topology of 3D tight-binding Weyl semimetals.

Build finite-range tight-binding models, hunt band crossings and their
chiralities, compute gauge-invariant slice Chern profiles and Dirac
strings, and probe surface physics (slab spectra, spectral flow, Fermi
arcs) of the half-space truncation.
"""

from .berry import (
    BandProjector,
    ChernProfile,
    DiracString,
    band_projector,
    berry_flux_sphere,
    chern_number_slice,
    chern_profile,
    dirac_string,
    plaquette_chern,
)
from .bloch import (
    HoppingTerm,
    PauliDecomposition,
    TightBindingModel,
    angles_equal,
    bloch_matrix,
    build_model,
    minimal_model,
    pauli_decompose,
    reduce_angles,
    torus_delta,
    torus_distance,
)
from .eig import SpectralDecomposition, eigh, eigh2, eigh_partial
from .errors import (
    ConvergenceError,
    GapClosureError,
    ModelError,
    NumericalError,
    WeylscopeError,
)
from .nodes import (
    NodeSet,
    WeylNode,
    check_cancellation,
    find_nodes,
    refine_node,
    scan_nodes,
    sphere_degree,
)
from .surface import (
    FermiArc,
    SlabConfig,
    SlabSpectrum,
    SpectralFlowResult,
    essential_spectrum_intervals,
    fermi_arc,
    slab_hamiltonian,
    spectral_flow,
    surface_spectrum,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BandProjector",
    "ChernProfile",
    "ConvergenceError",
    "DiracString",
    "FermiArc",
    "GapClosureError",
    "HoppingTerm",
    "ModelError",
    "NodeSet",
    "NumericalError",
    "PauliDecomposition",
    "SlabConfig",
    "SlabSpectrum",
    "SpectralDecomposition",
    "SpectralFlowResult",
    "TightBindingModel",
    "WeylNode",
    "WeylscopeError",
    "angles_equal",
    "band_projector",
    "berry_flux_sphere",
    "bloch_matrix",
    "build_model",
    "chern_number_slice",
    "chern_profile",
    "check_cancellation",
    "dirac_string",
    "eigh",
    "eigh2",
    "eigh_partial",
    "essential_spectrum_intervals",
    "fermi_arc",
    "find_nodes",
    "minimal_model",
    "pauli_decompose",
    "plaquette_chern",
    "reduce_angles",
    "refine_node",
    "scan_nodes",
    "slab_hamiltonian",
    "spectral_flow",
    "sphere_degree",
    "surface_spectrum",
    "torus_delta",
    "torus_distance",
]
