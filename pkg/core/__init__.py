from .application import ExperimentRunner, RunReport, exit_code

__all__ = ['ExperimentRunner', 'RunReport', 'exit_code']
