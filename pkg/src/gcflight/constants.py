"""Numerical tolerances and shared defaults, kept in one place for testability."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    quat_norm: float = 1e-9          # allowed |‖q‖ - 1| before a warning is raised
    intersection_tol: float = 1e-10  # Dykstra stopping tolerance
    intersection_max_iter: int = 200
    membership: float = 1e-9         # slack used by FeasibleSet.contains
    bisection_iter: int = 200        # multiplier bisections (half-space coupling)
    bcd_tol: float = 1e-14           # relative step tolerance of the weighted solver
    bcd_max_iter: int = 5000
    horizon_tol: float = 1e-9        # relative projected-gradient step tolerance
    horizon_max_iter: int = 5000
    horizon_stall: int = 200         # window for the flat-objective stopping test
    airspeed_floor: float = 1e-6     # below this the airflow is degenerate
    rate_nondim_floor: float = 0.5   # V_a floor used only for p·b/(2V_a) etc.
    fd_step: float = 1e-5            # central-difference step for shooting


TOL = Tolerances()

GRAVITY = 9.8

# w_g >> w_t >> w_e, three decades apart
DEFAULT_WEIGHTS = (1e4, 1e2, 1.0)
