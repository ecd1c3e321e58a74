"""Simulation of the Lohe tensor model and its sphere, matrix and group reductions."""
from .diagnostics import (DiagnosticsFrame, Monitor, ThresholdReport, alpha_threshold, det_phase_spread,
                          diameters, dissimilarity_functional, dm_dissipation, dum_dissipation,
                          fit_decay_rate, inequality_monitor, locking_constants, locking_metrics,
                          potential_lt, potential_product, separability_residual, total_functional)
from .integrator import (IntegratorConfig, MonitorViolation, NumericalError, Trajectory, integrate,
                         retract, rk4_step, unitarity_defect)
from .models import (CouplingSpec, Ensemble, FrequencySpec, build_kappa, build_lt_freq_from_dm,
                     build_lt_freq_from_dm_hermitian, build_lt_freq_from_mm, build_lt_freq_from_mm_hermitian,
                     dm_rhs, dsom_rhs, dum_rhs, lt_rhs, mm_rhs, mum_rhs, sds_rhs, sms_rhs)
from .scenarios import (PRESETS, ConfigError, RunSummary, ScenarioConfig, gen_frequencies,
                        gen_near_identity_ensemble, gen_random_unitary, preset, run_scenario, sweep)
from .tensor import (complement, contract_freq, cubic_coupling_term, frobenius_inner, matricize,
                     tensor_product, unmatricize)

__version__ = "0.1.0"
