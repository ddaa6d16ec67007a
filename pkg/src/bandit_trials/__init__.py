"""Adaptive allocation rules and testing calibration for multi-armed trials."""

from .engine import TrialRecord, TrialScenario, run_replicates, run_trial
from .gittins import (
    DpConfig,
    GittinsTable,
    GittinsTableError,
    compute_index_table,
    gittins_index,
    load_index_table,
    save_index_table,
)
from .inference import (
    CriticalValue,
    apply_test,
    calibrate_critical_value,
    fwer_critical_value,
    sample_size,
    z_statistic,
)
from .operating import (
    BiasTrajectory,
    OperatingCharacteristics,
    aggregate,
    bias_trajectories,
    z_histogram,
)
from .policies import ArmState, PolicySpec

__all__ = [
    "ArmState",
    "BiasTrajectory",
    "CriticalValue",
    "DpConfig",
    "GittinsTable",
    "GittinsTableError",
    "OperatingCharacteristics",
    "PolicySpec",
    "TrialRecord",
    "TrialScenario",
    "aggregate",
    "apply_test",
    "bias_trajectories",
    "calibrate_critical_value",
    "compute_index_table",
    "fwer_critical_value",
    "gittins_index",
    "load_index_table",
    "run_replicates",
    "run_trial",
    "sample_size",
    "save_index_table",
    "z_histogram",
    "z_statistic",
]
