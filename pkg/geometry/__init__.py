from .conditions import (ControlSet, WholeTorus, Strip, BallUnion, GridMask, GCCReport, MagneticCertificate,
                         BendingParams, BendingCensus, whole, control_set_from_spec, first_ball_hit, ray_grid,
                         check_gcc, enumerate_bad_directions, direction_angles, min_angular_gap, bending_gamma,
                         certify_bending, derive_bending_params, census_samples, verify_bending_lemma)

__all__ = ['ControlSet', 'WholeTorus', 'Strip', 'BallUnion', 'GridMask', 'GCCReport', 'MagneticCertificate',
           'BendingParams', 'BendingCensus', 'whole', 'control_set_from_spec', 'first_ball_hit', 'ray_grid',
           'check_gcc', 'enumerate_bad_directions', 'direction_angles', 'min_angular_gap', 'bending_gamma',
           'certify_bending', 'derive_bending_params', 'census_samples', 'verify_bending_lemma']
