from .errors import (VMTorusError, GridError, FieldError, ChargeConservationError, ZeroMeanCurrentError,
                     SteeringError, SupportError, TrajectoryError, GeometryError, InfeasibleParametersError,
                     MomentError, ConstructionError, HodgeObstructionError, CensusFailure, ConvergenceError,
                     ConfigError)
from .helpers import (setup_logger, get_logger, set_console_level, log_duration,
                      write_field_dump, read_field_dump, write_particle_dump, read_particle_dump,
                      write_csv, write_field_csv, ensure_dir, make_rng, smoothstep, map_chunks)

__all__ = ['VMTorusError', 'GridError', 'FieldError', 'ChargeConservationError', 'ZeroMeanCurrentError',
           'SteeringError', 'SupportError', 'TrajectoryError', 'GeometryError', 'InfeasibleParametersError',
           'MomentError', 'ConstructionError', 'HodgeObstructionError', 'CensusFailure', 'ConvergenceError',
           'ConfigError',
           'setup_logger', 'get_logger', 'set_console_level', 'log_duration',
           'write_field_dump', 'read_field_dump', 'write_particle_dump', 'read_particle_dump',
           'write_csv', 'write_field_csv', 'ensure_dir', 'make_rng', 'smoothstep', 'map_chunks']
