"""Simulation and verification lab for an adaptive PI passivity-based
controller of a fuel-cell boost-converter system."""

from .control import (AdaptiveController, ControllerGains, ControllerState,
                      FullInfoController, adaptive_controller,
                      full_info_controller, integrator_at_equilibrium,
                      passive_output, pi_pbc_step)
from .equilibrium import (EquilibriumPoint, NoRootError, ParameterVector,
                          SetpointSpec, assignability_condition,
                          equilibrium_polynomial, equilibrium_polynomial_slope,
                          solve_equilibrium)
from .estimation import (EstimatorGains, EstimatorState, FilterState,
                         ParameterEstimate, RegressionSample, estimate,
                         filter_step, gradient_step, iandi_step, initial_state,
                         regression_sample, replay_estimates)
from .model import (ControlInput, FcCurveParams, PlantParams, PlantState,
                    PolarizationDomainError, monotonicity_constant,
                    plant_derivative, plant_derivative_matrix_form,
                    polarization_current, polarization_slope)
from .sim import (BatchResult, EstimatorInit, NumericalBlowupError,
                  ScenarioSpec, SimConfig, SimTrace, constant_scenario,
                  run_batch, run_simulation)

__version__ = "0.1.0"
