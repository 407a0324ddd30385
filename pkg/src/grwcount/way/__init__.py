"""Measurement limits imposed by an additive conserved quantity."""

from .model import (
    DegenerateObservableError,
    DistortingMeasurementError,
    PreconditionsUnmet,
    WAYModel,
    chain_identity_residual,
    commutant_basis,
    commutator_obstruction,
    conservation_residual,
    controlled_shift_model,
    model_from_json,
    model_to_json,
    outcome_overlaps,
    outcome_states,
    random_conserving_unitary,
    spin_matrices,
    total_conserved,
)
from .sweep import SpinConservingFamily, nonideality_sweep, scaling_slope, sweep_to_csv
