"""
Module-level access to the global tracker, so hooks and commands can log without threading a tracker through.
"""
import dataclasses
import logging
import os
import tempfile
import typing
import warnings
from contextlib import AbstractContextManager
from typing import Any, Literal, Optional

import draccus

from sddp_tsto.tracker.helpers import hparams_to_dict
from sddp_tsto.tracker.json import JsonTracker
from sddp_tsto.tracker.tracker import CompositeTracker, Tracker
from sddp_tsto.tracker.wandb import WandbTracker


logger = logging.getLogger(__name__)


_global_tracker: Optional[Tracker] = None


def _require_tracker() -> Tracker:
    if _global_tracker is None:
        raise RuntimeError("No global tracker set. Call RunConfig.initialize() or enter a tracker first.")
    return _global_tracker


def log_metrics(metrics: dict[str, Any], *, step: Optional[int]):
    """Logs one iteration's metrics to the global tracker."""
    _require_tracker().log(metrics, step=step)


def log_summary(metrics: dict[str, Any]):
    _require_tracker().log_summary(metrics)


def log_hyperparameters(hparams: dict[str, Any]):
    _require_tracker().log_hyperparameters(hparams)


def log_configuration(config: Any, config_name: str = "config.yaml"):
    """
    Logs a command's config as hyperparameters. Dataclass configs are also dumped with draccus and logged as a
    ``config`` artifact, so the run can be replayed with ``--config_path``.
    """
    tracker = _require_tracker()
    tracker.log_hyperparameters(hparams_to_dict(config))

    if dataclasses.is_dataclass(config):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, config_name)
            with open(path, "w") as f:
                draccus.dump(config, f, encoding="utf-8")
            tracker.log_artifact(path, name=config_name, type="config")


def set_global_tracker(tracker: Tracker):
    """
    Installs ``tracker`` for the rest of the process. Not thread-safe; commands call this once, through
    ``RunConfig.initialize``. Elsewhere prefer ``with current_tracker(tracker):``.
    """
    global _global_tracker
    if _global_tracker is not None:
        warnings.warn(f"Replacing global tracker {_global_tracker.name} with {tracker.name}")
    _global_tracker = tracker


@typing.overload
def current_tracker() -> Tracker:
    ...


@typing.overload
def current_tracker(tracker: Tracker) -> typing.ContextManager:
    ...


def current_tracker(tracker: Optional[Tracker] = None) -> Tracker | typing.ContextManager:
    """Without an argument, returns the global tracker. With one, returns a context manager that installs it."""
    if tracker is None:
        return _require_tracker()
    return _TrackerScope(tracker)


@typing.overload
def get_tracker(name: Literal["wandb"]) -> WandbTracker:
    ...


@typing.overload
def get_tracker(name: Literal["json"]) -> JsonTracker:
    ...


@typing.overload
def get_tracker(name: str) -> Tracker:
    ...


def get_tracker(name: str) -> Tracker:
    """Finds the tracker called ``name`` in the global tracker, looking inside a composite."""
    tracker = current_tracker()
    candidates = tracker.trackers if isinstance(tracker, CompositeTracker) else [tracker]
    for candidate in candidates:
        if candidate.name == name:
            return candidate
    raise KeyError(f"Tracker with name {name} not found")


class _TrackerScope(AbstractContextManager):
    def __init__(self, tracker: Tracker):
        self.tracker = tracker
        self.previous: Optional[Tracker] = None

    def __enter__(self):
        global _global_tracker
        self.previous = _global_tracker
        _global_tracker = self.tracker
        return self.tracker

    def __exit__(self, exc_type, exc_val, exc_tb):
        global _global_tracker
        _global_tracker = self.previous
