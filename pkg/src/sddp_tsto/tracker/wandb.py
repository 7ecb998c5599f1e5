import logging
import typing
import warnings
from dataclasses import dataclass
from typing import Any, List, Optional, Union

from draccus import field

from sddp_tsto.tracker.helpers import scalar_metrics
from sddp_tsto.tracker.tracker import Tracker, TrackerConfig


if typing.TYPE_CHECKING:
    import wandb
    import wandb.sdk.lib.disabled


logger = logging.getLogger(__name__)

WandbRun = Union["wandb.sdk.wandb_run.Run", "wandb.sdk.lib.disabled.RunDisabled"]

# the run table should show the best bound reached, not the last one logged
BEST_VALUE_SUMMARIES = {
    "bounds/lower": "max",
    "bounds/upper": "min",
    "bounds/gap": "min",
}


class WandbTracker(Tracker):
    name: str = "wandb"
    run: WandbRun

    def __init__(self, run: WandbRun):
        self.run = run
        for key, summary in BEST_VALUE_SUMMARIES.items():
            self.run.define_metric(key, summary=summary)

    def log_hyperparameters(self, hparams: dict[str, Any]):
        self.run.config.update(hparams, allow_val_change=True)

    def log(self, metrics: dict[str, Any], *, step: Optional[int]):
        metrics = scalar_metrics(metrics)
        if metrics:
            self.run.log(metrics, step=step)

    def log_summary(self, metrics: dict[str, Any]):
        self.run.summary.update(scalar_metrics(metrics))

    def log_artifact(self, artifact_path, *, name: Optional[str] = None, type: Optional[str] = None):
        self.run.log_artifact(str(artifact_path), name=name, type=type)

    def finish(self):
        self.run.finish()


@TrackerConfig.register_subclass("wandb")
@dataclass
class WandbConfig(TrackerConfig):
    entity: Optional[str] = None  # username or team
    project: Optional[str] = "sddp-tsto"
    name: Optional[str] = None
    """display name; defaults to the run id"""
    tags: List[str] = field(default_factory=list)
    id: Optional[str] = None
    """wandb run id, for resuming. Defaults to the run id"""
    group: Optional[str] = None  # e.g. one group per (n, costs) cell of a sweep
    mode: Optional[str] = None  # "online", "offline" or "disabled"; None lets wandb decide
    resume: Optional[Union[bool, str]] = None
    """"allow", "must", "never", "auto" or None"""

    def init(self, run_id: Optional[str]) -> WandbTracker:
        import wandb

        if run_id is not None and self.id is not None and run_id != self.id:
            warnings.warn(f"Run id {run_id} differs from the configured wandb id {self.id}; wandb uses {self.id}")

        run = wandb.init(
            entity=self.entity,
            project=self.project,
            name=self.name or run_id,
            tags=self.tags,
            id=self.id or run_id,
            group=self.group,
            resume=self.resume,
            mode=self.mode,
            allow_val_change=True,
        )
        if run is None:
            raise RuntimeError("wandb.init did not return a run")
        return WandbTracker(run)
