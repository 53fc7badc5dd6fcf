"""Ensemble eddy-viscosity (EEV) finite element solver for stochastic
incompressible flow.

The package simulates J realizations of the incompressible Navier-Stokes
equations with uncertain viscosity/data on Q2/Q1 (Taylor-Hood) quadrilateral
meshes.  The linearized IMEX BDF time steppers share one saddle-point
coefficient matrix across all realizations per step, so a single sparse LU
factorization serves J right-hand sides.
"""

from .mesh import Mesh, unit_square_mesh, step_channel_mesh, cavity_mesh, refine
from .fem import TaylorHoodSpace, QuadratureRule, ReferenceElement
from .scheme import BE_EEV, BDF2_EEV, SchemeDescriptor, StepParams, EnsembleStepper
from .ensemble import EnsembleState, ViscosityEnsemble, sample_uniform_viscosity

__all__ = [
    "Mesh",
    "unit_square_mesh",
    "step_channel_mesh",
    "cavity_mesh",
    "refine",
    "TaylorHoodSpace",
    "QuadratureRule",
    "ReferenceElement",
    "BE_EEV",
    "BDF2_EEV",
    "SchemeDescriptor",
    "StepParams",
    "EnsembleStepper",
    "EnsembleState",
    "ViscosityEnsemble",
    "sample_uniform_viscosity",
]

__version__ = "0.1.0"
