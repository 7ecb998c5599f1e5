import abc
import dataclasses
from typing import Any, List, Optional, Sequence

import draccus


class Tracker(abc.ABC):
    """
    Receives what a solver run reports: its configuration once, one metrics dict per iteration, a summary at the end,
    and file artifacts such as the config dump. Usually installed as the global tracker by
    [sddp_tsto.engine.RunConfig.initialize][], or temporarily with ``with tracker: ...``.

    Examples:
        >>> from sddp_tsto.tracker import log_metrics
        >>> from sddp_tsto.tracker.json import JsonTracker
        >>> with JsonTracker("memory://run/metrics.jsonl"):
        ...     log_metrics({"bounds/lower": -1.0}, step=1)
    """

    name: str

    @abc.abstractmethod
    def log_hyperparameters(self, hparams: dict[str, Any]):
        pass

    @abc.abstractmethod
    def log(self, metrics: dict[str, Any], *, step: Optional[int]):
        """Metrics of one iteration. Values may be None, e.g. the upper bound before the first full window."""

    @abc.abstractmethod
    def log_summary(self, metrics: dict[str, Any]):
        pass

    @abc.abstractmethod
    def log_artifact(self, artifact_path, *, name: Optional[str] = None, type: Optional[str] = None):
        pass

    def finish(self):
        pass

    def __enter__(self):
        from sddp_tsto.tracker.tracker_fns import current_tracker

        if getattr(self, "_scope", None) is not None:
            raise RuntimeError(f"Tracker {self.name} is already the global tracker")
        self._scope = current_tracker(self)
        self._scope.__enter__()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        scope = getattr(self, "_scope", None)
        if scope is None:
            raise RuntimeError(f"Tracker {self.name} is not the global tracker")
        self._scope = None
        scope.__exit__(exc_type, exc_val, exc_tb)


class CompositeTracker(Tracker):
    """Fans every call out to several trackers, e.g. json files plus wandb."""

    name: str = "composite"

    def __init__(self, trackers: Sequence[Tracker]):
        self.trackers: List[Tracker] = list(trackers)

    def log_hyperparameters(self, hparams: dict[str, Any]):
        for tracker in self.trackers:
            tracker.log_hyperparameters(hparams)

    def log(self, metrics: dict[str, Any], *, step: Optional[int]):
        for tracker in self.trackers:
            tracker.log(metrics, step=step)

    def log_summary(self, metrics: dict[str, Any]):
        for tracker in self.trackers:
            tracker.log_summary(metrics)

    def log_artifact(self, artifact_path, *, name: Optional[str] = None, type: Optional[str] = None):
        for tracker in self.trackers:
            tracker.log_artifact(artifact_path, name=name, type=type)

    def finish(self):
        for tracker in self.trackers:
            tracker.finish()


class TrackerConfig(draccus.PluginRegistry, abc.ABC):
    """Selected in YAML with ``type:``; one of noop (the default), json or wandb."""

    discover_packages_path = "sddp_tsto.tracker"

    @abc.abstractmethod
    def init(self, run_id: Optional[str]) -> Tracker:
        raise NotImplementedError

    @classmethod
    def default_choice_name(cls) -> Optional[str]:
        return "noop"


class NoopTracker(Tracker):
    name: str = "noop"

    def log_hyperparameters(self, hparams: dict[str, Any]):
        pass

    def log(self, metrics: dict[str, Any], *, step: Optional[int]):
        pass

    def log_summary(self, metrics: dict[str, Any]):
        pass

    def log_artifact(self, artifact_path, *, name: Optional[str] = None, type: Optional[str] = None):
        pass


@TrackerConfig.register_subclass("noop")
@dataclasses.dataclass
class NoopConfig(TrackerConfig):
    def init(self, run_id: Optional[str]) -> Tracker:
        return NoopTracker()
