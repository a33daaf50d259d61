from .characteristics import (PhaseState, ForceSpec, GriddedField, SpectralSeriesField, Trajectory, GronwallReport,
                              lorentz_factor, relativistic_velocity, perp, constant_vector, constant_scalar,
                              rk4_step, step_count, steps, integrate, angle_rate, speed_rate, w1inf_norm,
                              gronwall_compare)
from .absorption import (LABELS, GammaSets, AbsorptionConfig, PicardConfig, ParticleEnsemble, StepTally,
                         TransportRecord, PicardResult, FixedPointReport, KappaScan, KineticTrajectory, outward_normal,
                         classify, opacity, sample_ensemble, make_neutral_fill, deposit_moments,
                         ConservationPatch, ball_current_patch, enforce_charge_conservation, absorbing_step,
                         push_with_absorption, extend_neutral,
                         free_transport_moments, compatible_state, picard_step, moment_distance,
                         fixed_point_solve, kappa_scan, solve_kinetic, rescale_solution, kinetic_residual,
                         residual_rescaled, large_time_pipeline)

__all__ = ['PhaseState', 'ForceSpec', 'GriddedField', 'SpectralSeriesField', 'Trajectory', 'GronwallReport',
           'lorentz_factor', 'relativistic_velocity', 'perp', 'constant_vector', 'constant_scalar',
           'rk4_step', 'step_count', 'steps', 'integrate', 'angle_rate', 'speed_rate', 'w1inf_norm',
           'gronwall_compare',
           'LABELS', 'GammaSets', 'AbsorptionConfig', 'PicardConfig', 'ParticleEnsemble', 'StepTally',
           'TransportRecord', 'PicardResult', 'FixedPointReport', 'KappaScan', 'KineticTrajectory', 'outward_normal',
           'classify', 'opacity', 'sample_ensemble', 'make_neutral_fill', 'deposit_moments',
           'ConservationPatch', 'ball_current_patch', 'enforce_charge_conservation', 'absorbing_step',
           'push_with_absorption', 'extend_neutral',
           'free_transport_moments', 'compatible_state', 'picard_step', 'moment_distance',
           'fixed_point_solve', 'kappa_scan', 'solve_kinetic', 'rescale_solution', 'kinetic_residual',
           'residual_rescaled', 'large_time_pipeline']
