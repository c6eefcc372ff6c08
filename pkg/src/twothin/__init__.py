"""Two-thinning balls-into-bins: allocation engine, strategies and oracles."""

from .engine import (BLOCK, Decision, LoadState, RandomStream, RunTrace, StepRecord, run,
                     scaled_load, step, trial_seed_sequence)
from .point_process import (PointProcessEnsemble, drift_policy, next_allocation,
                            standardizing_diagnostic, varying_drift_policy)
from .strategies import *  # noqa: F401,F403
from .strategies import __all__ as _strategy_names

__version__ = "0.1.0"

__all__ = [
    "BLOCK", "Decision", "LoadState", "RandomStream", "RunTrace", "StepRecord", "run",
    "scaled_load", "step", "trial_seed_sequence", "PointProcessEnsemble", "drift_policy",
    "next_allocation", "standardizing_diagnostic", "varying_drift_policy",
    *_strategy_names,
]
