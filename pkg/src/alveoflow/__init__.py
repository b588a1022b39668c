"""Finite-element simulation of airflow and CO2 exchange in a moving
alveolar-sac geometry, on a fixed reference domain via a prescribed
domain map, with anisotropic equal-order pressure stabilisation."""

__version__ = "0.1.0"

from .ale import AlveolarSinMap, AxisScaleMap, IdentityMap
from .analysis import ConvergenceFit, eval_errors, eval_functional, fit_convergence
from .flow import (FlowState, ManufacturedStokes, PhysParams,
                   navier_stokes_step, reynolds_number, solve_stokes)
from .linalg import NumericallySingular, factor_solve
from .mesh import (QuadMesh, SacGeometry, generate_alveolar_sac_mesh,
                   generate_half_lens_mesh, uniform_refine)
from .stabilization import StabConfig
from .transport import TransportState, peclet_number, transport_step

__all__ = [
    "AlveolarSinMap", "AxisScaleMap", "IdentityMap", "ConvergenceFit",
    "eval_errors", "eval_functional", "fit_convergence", "FlowState",
    "ManufacturedStokes", "PhysParams", "navier_stokes_step",
    "reynolds_number", "solve_stokes", "NumericallySingular", "factor_solve",
    "QuadMesh", "SacGeometry", "generate_alveolar_sac_mesh",
    "generate_half_lens_mesh", "uniform_refine", "StabConfig",
    "TransportState", "peclet_number", "transport_step",
]
