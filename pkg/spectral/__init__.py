from .core import (GridSpec, ScalarField, VectorField, SpectralScalar, SpectralVector,
                   spectral_coeffs, real_values, to_spectral, to_real, is_hermitian,
                   gradient, divergence, curl_vec, curl_scal, laplacian, inverse_laplacian, mean,
                   l2_norm_squared, grid_l2_squared, evaluate_series, scalar_field, vector_field)
from .maxwell import (EMState, SourceMoments, EMTrajectory, TildeFields, ApproxBound, CompatibilityReport,
                      ApproxReport, time_derivative, uniform_times, gauss_residual, check_compatibility,
                      charge_residual, check_charge_conservation, check_zero_mean_current, poisson_hat,
                      solve_poisson, tilde_hat, compute_tilde_fields, evolve_maxwell, field_energy,
                      step_maxwell_rk4, approx_constants, verify_approx_lemma, approx_sweep_source)

__all__ = ['GridSpec', 'ScalarField', 'VectorField', 'SpectralScalar', 'SpectralVector',
           'spectral_coeffs', 'real_values', 'to_spectral', 'to_real', 'is_hermitian',
           'gradient', 'divergence', 'curl_vec', 'curl_scal', 'laplacian', 'inverse_laplacian', 'mean',
           'l2_norm_squared', 'grid_l2_squared', 'evaluate_series', 'scalar_field', 'vector_field',
           'EMState', 'SourceMoments', 'EMTrajectory', 'TildeFields', 'ApproxBound', 'CompatibilityReport',
           'ApproxReport', 'time_derivative', 'uniform_times', 'gauss_residual', 'check_compatibility',
           'charge_residual', 'check_charge_conservation', 'check_zero_mean_current', 'poisson_hat',
           'solve_poisson', 'tilde_hat', 'compute_tilde_fields', 'evolve_maxwell', 'field_energy',
           'step_maxwell_rk4', 'approx_constants', 'verify_approx_lemma', 'approx_sweep_source']
