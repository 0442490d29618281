"""Gap solitons in 2D photonic crystals: band structure, coupled mode
equations and the slowly-varying-envelope approximation for out-of-plane
Maxwell fields.

The package is organized bottom-up:

- ``lattice``:  Bravais/reciprocal lattices, Brillouin zone, k-paths.
- ``medium``:   periodic dielectric and cubic susceptibility fields.
- ``bloch``:    plane-wave Bloch eigenproblems, E-field recovery,
                projections, Helmholtz decomposition.
- ``bands``:    band sweeps, gap detection, edge location, Hessians.
- ``cme``:      coupled mode equations (assembly, Newton solver,
                non-degeneracy diagnostics).
- ``soliton``:  supercell envelope ansatz, Maxwell residual, direct
                Newton corrector and the small-parameter scaling study.
- ``cli``:      pipeline orchestration (``gapsol`` command).
"""

from . import lattice, medium, bloch, bands, cme, soliton

__version__ = "0.1.0"

__all__ = ["lattice", "medium", "bloch", "bands", "cme", "soliton", "__version__"]
