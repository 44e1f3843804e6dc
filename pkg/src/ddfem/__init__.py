"""Data-driven finite element solvers for hyperelastic solids.

The package solves boundary value problems directly on discrete
strain-stress data instead of a fitted constitutive law.  Two solvers are
provided: a linearized scheme working on deformation-gradient /
first-Piola-Kirchhoff tuples and a geometrically nonlinear scheme working
on right-Cauchy-Green / second-Piola-Kirchhoff tuples.  Supporting modules
cover dataset generation and augmentation, a classical linear-elastic
reference solver, and a multi-level data refinement driver.
"""

from .phase_space import DataSet, DataTuple, PairingKind, auto_mu0, load_dataset, save_dataset
from .fem import BoundaryConditions, ElementType, Mesh, load_mesh, save_mesh
from .solver_fp import FpConfig, solve_fp
from .solver_cs import CsConfig, solve_cs
from .report import SolveReport

__all__ = [
    "BoundaryConditions",
    "CsConfig",
    "DataSet",
    "DataTuple",
    "ElementType",
    "FpConfig",
    "Mesh",
    "PairingKind",
    "SolveReport",
    "auto_mu0",
    "load_dataset",
    "load_mesh",
    "save_dataset",
    "save_mesh",
    "solve_cs",
    "solve_fp",
]

__version__ = "0.1.0"
