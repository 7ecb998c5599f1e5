from sddp_tsto.tracker.tracker import CompositeTracker, NoopConfig, NoopTracker, Tracker, TrackerConfig
from sddp_tsto.tracker.tracker_fns import (
    current_tracker,
    get_tracker,
    log_configuration,
    log_hyperparameters,
    log_metrics,
    log_summary,
    set_global_tracker,
)


__all__ = [
    "Tracker",
    "TrackerConfig",
    "CompositeTracker",
    "NoopTracker",
    "NoopConfig",
    "current_tracker",
    "get_tracker",
    "log_configuration",
    "log_metrics",
    "log_summary",
    "log_hyperparameters",
    "set_global_tracker",
]
