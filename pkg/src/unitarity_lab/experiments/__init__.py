"""Time-scale measurements, collapse ensembles and the two-weight oracle."""

from .born import BornResult, BornSetup, TrialOutcome, born_ensemble, collapse_trial, run_trials, trial_seeds
from .gambler import gambler_exact, gambler_oracle
from .timescales import (
    LimitsTable,
    ScalingResult,
    TimescaleSetup,
    first_crossing_times,
    fit_power_law,
    limits_table,
    localization_time,
    relocation_time,
    scaling_sweep,
)
