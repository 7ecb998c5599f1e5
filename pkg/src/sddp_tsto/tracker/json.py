import dataclasses
import logging
import os
import threading
from typing import Any, Dict, List, Optional

import fsspec

from sddp_tsto.tracker.helpers import scalar_metrics
from sddp_tsto.tracker.tracker import Tracker, TrackerConfig
from sddp_tsto.utils.json_utils import dumps_canonical, write_json


logger = logging.getLogger(__name__)


class JsonTracker(Tracker):
    """
    Appends one canonical JSON line per logged step to ``path``. Hyperparameters and the summary are written next to
    it as ``hparams.json`` and ``summary.json``.
    """

    name: str = "json"

    def __init__(self, path: str):
        self.path = path
        self.directory = path.rsplit("/", 1)[0] if "/" in path else "."
        self.summary: Dict[str, Any] = {}
        self.hparams: Dict[str, Any] = {}
        self.artifacts: List[Dict[str, Optional[str]]] = []
        self._lock = threading.Lock()
        fs, _, (plain,) = fsspec.get_fs_token_paths(path)
        if "/" in plain:
            fs.makedirs(plain.rsplit("/", 1)[0], exist_ok=True)
        with fsspec.open(path, "w"):
            pass

    def log_hyperparameters(self, hparams: dict[str, Any]):
        self.hparams.update(hparams)
        write_json(f"{self.directory}/hparams.json", self.hparams)

    def log(self, metrics: dict[str, Any], *, step: Optional[int]):
        line = dumps_canonical({"step": step, **scalar_metrics(metrics)})
        with self._lock:
            with fsspec.open(self.path, "a") as f:
                f.write(line + "\n")

    def log_summary(self, metrics: dict[str, Any]):
        self.summary.update(scalar_metrics(metrics))
        write_json(f"{self.directory}/summary.json", self.summary)

    def log_artifact(self, artifact_path, *, name: Optional[str] = None, type: Optional[str] = None):
        name = name or os.path.basename(str(artifact_path))
        fs = fsspec.core.url_to_fs(self.directory)[0]
        fs.put(str(artifact_path), f"{self.directory}/{name}")
        self.artifacts.append({"name": name, "type": type})


@TrackerConfig.register_subclass("json")
@dataclasses.dataclass
class JsonConfig(TrackerConfig):
    logdir: str = "logs"
    """metrics go to {logdir}/{run_id}/metrics.jsonl"""

    def init(self, run_id: Optional[str]) -> JsonTracker:
        run_dir = f"{self.logdir.rstrip('/')}/{run_id or 'run'}"
        logger.info(f"Writing metrics to {run_dir}/metrics.jsonl")
        return JsonTracker(f"{run_dir}/metrics.jsonl")
