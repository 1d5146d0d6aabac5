"""Iterative construction of Euler-Reynolds states with decreasing stress."""

from .cutoffs import CutoffFamily, chi, chi_derivative
from .energy import EnergyProfile
from .schedule import Check, ParamSchedule, ScheduleError, beta_from_b, ell_formula, mu_formula
from .state import EulerReynoldsState, StateSample, er_residual, er_residual_norm, nonlinear_flux
from .driver import IterationResult, default_solvers, run_iteration, time_step
from .step import (DIAGNOSTIC_COLUMNS, EnergyGapError, Perturbation, StepConfig, StepConstants,
                   StepContext, StepError, StepResult, constants, doublesum_check, energy_gap,
                   new_pressure, new_stress, oscillation_check, perturbation, run_step, stage_times)

__all__ = ["IterationResult", "default_solvers", "run_iteration", "time_step", "CutoffFamily", "chi", "chi_derivative", "EnergyProfile", "Check", "ParamSchedule",
           "ScheduleError", "beta_from_b", "ell_formula", "mu_formula", "EulerReynoldsState",
           "StateSample", "er_residual", "er_residual_norm", "nonlinear_flux", "DIAGNOSTIC_COLUMNS",
           "EnergyGapError", "Perturbation", "StepConfig", "StepConstants", "StepContext",
           "StepError", "StepResult", "constants", "doublesum_check", "energy_gap", "new_pressure",
           "new_stress", "oscillation_check", "perturbation", "run_step", "stage_times"]
