"""Integral sliding-mode parallel control for piecewise affine models.

Modules: ``palm`` (PWA modeling), ``lmi`` (LMI feasibility), ``synthesis``
(gains, offsets, surface), ``sim`` (closed-loop simulation), ``bench``
(Chua and pendulum fixtures), ``verify`` and ``cli``.
"""

from .errors import *  # noqa: F401,F403
from .palm import ErrorBounds, NonlinearSystem, PartitionSpec, PwaModel, build_pwa, estimate_error_bounds
from .lmi import FeasibilityProblem, check_residuals, solve_feasibility
from .synthesis import ControllerDesign, DesignOptions, design_controller
from .sim import SimConfig, simulate_nominal, simulate_practical, simulate_sliding_motion

__version__ = "0.1.0"
