from .maxwell_control import (ControlElement, ControlBasis, SteeringProblem, ReachabilityMap, SteeringResult,
                              bump, assemble_reachability, solve_steering, reverse_steering,
                              constant_field_problem, random_target_problem)
from .reference_builder import (BumpProfile, KineticProfile, AccelField, AccelReport, SpectralPotential,
                                ChargeCorrection, PlanSegment, ReferencePlan, PlanCensus, CensusResult, PLAN_MODES,
                                make_bumps, lift_current, lift_moments, time_bump, far_line,
                                check_accel_field, build_accel_field, charge_correction, reverse_plan,
                                check_reversibility, transport_source, source_support, run_census, calibrate_wait,
                                maxwell_poisson_deviation, c_sweep, assemble_reference_strip,
                                assemble_reference_gcc)

__all__ = ['ControlElement', 'ControlBasis', 'SteeringProblem', 'ReachabilityMap', 'SteeringResult',
           'bump', 'assemble_reachability', 'solve_steering', 'reverse_steering',
           'constant_field_problem', 'random_target_problem',
           'BumpProfile', 'KineticProfile', 'AccelField', 'AccelReport', 'SpectralPotential',
           'ChargeCorrection', 'PlanSegment', 'ReferencePlan', 'PlanCensus', 'CensusResult', 'PLAN_MODES',
           'make_bumps', 'lift_current', 'lift_moments', 'time_bump', 'far_line',
           'check_accel_field', 'build_accel_field', 'charge_correction', 'reverse_plan',
           'check_reversibility', 'transport_source', 'source_support', 'run_census', 'calibrate_wait',
           'maxwell_poisson_deviation', 'c_sweep', 'assemble_reference_strip',
           'assemble_reference_gcc']
