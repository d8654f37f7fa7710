"""Pseudo-spectral simulation and stability certificates for non-isothermal
electrokinetic flows.

The package models N ionic species advected by an incompressible solvent and
coupled to a self-consistent electric potential and a temperature field
(a Poisson-Nernst-Planck-Fourier system) on a periodic box.  It provides:

``model``
    Physical coefficient sets, equilibrium states, and the global
    admissibility assumptions on the transport coefficients.
``admissibility``
    Energy-method certificates: positive weight/splitting constants whose
    inequality margins guarantee dissipativity, with a constructive recipe,
    a randomized sampler for certifiable equilibria, and a search fallback.
``spectral``
    Periodic pseudo-spectral toolbox: FFT grids, derivative and inverse
    Laplacian operators, divergence-free projection, dealiasing, and exact
    Sobolev norms.
``dynamics``
    The perturbation equations around an equilibrium: elliptic solves for
    potential and solvent flow, nonlinear terms, the per-mode linear symbol,
    IMEX time stepping, and the simulation driver.
``diagnostics``
    Energy/dissipation functionals, integration-by-parts cancellation
    checks, and decay audits of recorded trajectories.
``cli``
    Text-config driven command line front end (check / certify / spectrum /
    simulate).
"""

from . import model
from . import spectral
from . import admissibility
from . import dynamics
from . import diagnostics
from . import cli

__version__ = "0.1.0"

__all__ = [
    "model",
    "spectral",
    "admissibility",
    "dynamics",
    "diagnostics",
    "cli",
]
