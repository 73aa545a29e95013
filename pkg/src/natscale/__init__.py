"""natscale: martingale classification of natural-scale diffusions.

Given a speed measure on an open interval, the package constructs the
monotone eigenfunctions of the generator d^2/(dm dx), evaluates the
resolvent and the martingale defect, classifies the stopped diffusion as
martingale / strict submartingale / strict supermartingale, and validates
every verdict against an independent Monte Carlo path oracle.
"""

__version__ = "0.1.0"

from .errors import (AuditError, ConvergenceError, MeasureError,
                     NatscaleError, SimulationError, UndecidableTailError)
from .measure import (Interval, SpeedMeasure, TailMoment, brownian_measure,
                      build_measure, constant_measure, double_power_measure,
                      first_moment_tail, hybrid_measure,
                      inverse_bessel_measure, load_measure, mass,
                      power_tail_measure, reflect, scale_measure,
                      tabulated_measure)
from .eigen import (Eigenfunction, EigenPair, SolverOptions, auto_window,
                    default_expansion_point, derivative_ladder,
                    hitting_laplace, integral_residual, killed_f_minus,
                    picard_basis, solve_f_minus, solve_f_plus, solve_pair,
                    wronskian)
from .resolvent import (DefectCurve, TauberianResult, defect_curve,
                        gaver_stehfest, green, invert_stopped_mean,
                        martingale_defect, stopped_mean_laplace,
                        stopped_mean_quadrature, tauberian_limit)
from .classify import (AuditReport, CrosscheckReport, Verdict,
                       alpha_tail_crosscheck, classify, consistency_audit,
                       fprime_divergence)
from .simulate import (MCEstimate, PathEnsemble, StepControl,
                       estimate_hitting_laplace, estimate_stopped_mean,
                       simulate_paths)

__all__ = [name for name in dir() if not name.startswith("_")]
