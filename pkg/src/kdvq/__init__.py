"""Exact controllability and Cauchy theory for quasi-linear KdV on the circle,
made computational: spectral fields, the reduction to constant coefficients,
linear solvers, HUM steering and a discrete Nash-Moser iteration."""
import os as _os

# KDVQ_THREADS caps the threads of the numerical libraries; it must be set
# before numpy is first imported to take effect.
if _os.environ.get("KDVQ_THREADS"):
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_v, _os.environ["KDVQ_THREADS"])

from .errors import (ConfigError, DivergenceError, IdentityError, KdvqError, ObservabilityError,  # noqa: E402
                     ReductionDomainError, SmallnessError, SolverStagnationError, StructuralError)
from .spectral import PeriodicField, SpaceTimeField, TimeGrid, smooth, sobolev_norm, traj_norm  # noqa: E402
from .nonlinearity import (NonlinearitySpec, airy_spec, get_spec, kdv_spec, lower_order_spec,  # noqa: E402
                           quasilinear_spec)
from .reduction import ReductionThresholds, build_chain, trivial_chain  # noqa: E402
from .cauchy import CauchyProblem, solve, solve_L5  # noqa: E402
from .control import ControlProblem, Cutoff, Window, hum_solve, observability_ratio  # noqa: E402
from .nash_moser import NMProblem, ScaleParams, run, solve_control, solve_ivp  # noqa: E402

__all__ = [
    "ConfigError", "DivergenceError", "IdentityError", "KdvqError", "ObservabilityError",
    "ReductionDomainError", "SmallnessError", "SolverStagnationError", "StructuralError",
    "PeriodicField", "SpaceTimeField", "TimeGrid", "smooth", "sobolev_norm", "traj_norm",
    "NonlinearitySpec", "airy_spec", "get_spec", "kdv_spec", "lower_order_spec", "quasilinear_spec",
    "ReductionThresholds", "build_chain", "trivial_chain", "CauchyProblem", "solve", "solve_L5",
    "ControlProblem", "Cutoff", "Window", "hum_solve", "observability_ratio",
    "NMProblem", "ScaleParams", "run", "solve_control", "solve_ivp",
]
__version__ = "0.1.0"
