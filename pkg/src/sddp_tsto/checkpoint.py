import datetime
import logging
import os
import urllib.parse
from dataclasses import dataclass
from datetime import timedelta
from typing import Any, Callable, Dict, Mapping, Optional

import fsspec
from fsspec import AbstractFileSystem

from sddp_tsto.cuts import CutPool, pool_from_json, pool_to_json
from sddp_tsto.engine import IterationInfo
from sddp_tsto.errors import DimensionMismatch
from sddp_tsto.utils.json_utils import PathLike, read_json, write_json


logger = logging.getLogger(__name__)

POLICY_FILE = "policy.json"
METADATA_FILE = "metadata.json"


@dataclass(frozen=True, eq=False)
class PolicyDocument:
    """A trained set of cut pools, as stored on disk."""

    label: str
    t_max: int
    state_dim: int
    iteration: int
    pools: Dict[int, CutPool]


def policy_to_json(
    pools: Mapping[int, CutPool], *, label: str, t_max: int, state_dim: int, iteration: int
) -> Dict[str, Any]:
    return {
        "label": label,
        "t_max": t_max,
        "state_dim": state_dim,
        "iteration": iteration,
        "pools": [pool_to_json(pools[t]) for t in sorted(pools)],
    }


def policy_from_json(doc: Dict[str, Any]) -> PolicyDocument:
    state_dim = int(doc["state_dim"])
    pools = {}
    for entry in doc["pools"]:
        pool = pool_from_json(entry, state_dim)
        pools[pool.stage] = pool
    t_max = int(doc["t_max"])
    if sorted(pools) != list(range(2, t_max + 1)):
        raise DimensionMismatch(f"Policy for t_max={t_max} has pools for stages {sorted(pools)}")
    return PolicyDocument(
        label=str(doc["label"]), t_max=t_max, state_dim=state_dim, iteration=int(doc["iteration"]), pools=pools
    )


def save_policy(path: PathLike, pools: Mapping[int, CutPool], *, label: str, iteration: int) -> None:
    t_max = max(pools)
    state_dim = pools[t_max].dim
    write_json(path, policy_to_json(pools, label=label, t_max=t_max, state_dim=state_dim, iteration=iteration))
    logger.info(f"Saved policy {label} ({sum(len(p) for p in pools.values())} cuts) to {path}")


def load_policy(path: PathLike) -> PolicyDocument:
    policy = policy_from_json(read_json(path))
    logger.info(f"Loaded policy {policy.label} from {path} (iteration {policy.iteration})")
    return policy


class PolicyCheckpointer:
    """
    Saves the cut pools with two overlapping policies: time and iteration.

    Time policy: we save at least every `save_interval`. Iteration policy: we save every `every` iterations.
    Time checkpoints are deleted once the next checkpoint is saved. Iteration checkpoints are never deleted.
    """

    def __init__(
        self,
        base_path: PathLike,
        save_interval: Optional[datetime.timedelta],
        every: Optional[int],
        *,
        label: str = "sddp_tsto",
        dt_now_injection: Optional[Callable[[], datetime.datetime]] = None,
    ):
        """
        Args:
            base_path: where checkpoints go. Anything fsspec can write to.
            save_interval: the minimum amount of time between checkpoints
            every: save a permanent checkpoint every this many iterations. None disables the iteration policy.
            label: policy label written into each checkpoint
            dt_now_injection: a function that returns the current time. useful for testing
        """
        self.base_path = str(base_path)
        self.save_interval = save_interval
        self.every = every
        self.label = label
        self._dt_now_injection = dt_now_injection or datetime.datetime.now
        self._last_save_time = self._dt_now_injection()
        self._last_save_iteration = 0
        self._last_temporary_checkpoint: Optional[str] = None

    def on_iteration(self, info: IterationInfo, force: bool = False):
        iteration = info.iteration
        force = force or info.final

        if iteration == self._last_save_iteration:
            return

        should_save = force
        save_permanent = force
        since_last_save = self._dt_now_injection() - self._last_save_time
        if self.every is not None and iteration % self.every == 0:
            should_save = True
            save_permanent = True
        elif self.save_interval and since_last_save >= self.save_interval:
            should_save = True
            save_permanent = False

        if not should_save:
            return

        if save_permanent:
            logger.info(f"Saving checkpoint at iteration {iteration}.")
        else:
            logger.info(f"Saving temporary checkpoint at iteration {iteration}.")

        last_checkpoint = self._last_temporary_checkpoint
        destination = f"iter-{iteration}"
        self.save_checkpoint(info.pools, iteration, destination)

        self._last_temporary_checkpoint = None if save_permanent else destination
        if last_checkpoint is not None:
            self._rm_checkpoint(last_checkpoint)

    def save_checkpoint(self, pools: Mapping[int, CutPool], iteration: int, destination: str) -> str:
        path = os.path.join(self.base_path, destination)
        save_policy(os.path.join(path, POLICY_FILE), pools, label=self.label, iteration=iteration)
        write_json(
            os.path.join(path, METADATA_FILE),
            {"iteration": iteration, "timestamp": self._dt_now_injection().isoformat()},
        )
        self._last_save_iteration = iteration
        self._last_save_time = self._dt_now_injection()
        return path

    def _rm_checkpoint(self, checkpoint: str):
        fs, plain_path = _get_fs_and_plain_path(self.base_path)
        try:
            cp_path = os.path.join(plain_path, checkpoint)
            logger.info(f"Deleting checkpoint {checkpoint} from {cp_path}")
            fs.rm(cp_path, recursive=True)
        # don't let this take down a run
        except Exception:  # pylint: disable=broad-except
            logger.exception("Failed to delete checkpoint", exc_info=True)


def load_metadata(checkpoint_path: PathLike) -> Dict[str, Any]:
    return read_json(os.path.join(str(checkpoint_path), METADATA_FILE))


def discover_latest_checkpoint(checkpoint_path: PathLike) -> Optional[str]:
    """
    Discover the latest checkpoint under a given path.
    """
    checkpoint_path = str(checkpoint_path)
    fs: AbstractFileSystem
    fs, _ = _get_fs_and_plain_path(checkpoint_path)

    def is_checkpoint_dir(path: str):
        return fs.exists(os.path.join(path, METADATA_FILE))

    def maybe_unstrip_protocol(path: str):
        base_path_protocol = urllib.parse.urlparse(checkpoint_path).scheme
        if base_path_protocol != "" and urllib.parse.urlparse(path).scheme == "":
            return f"{base_path_protocol}://{path.lstrip('/')}"
        return path

    ckpt_dirs = [maybe_unstrip_protocol(d) for d in fs.glob(os.path.join(checkpoint_path, "*")) if fs.isdir(d)]
    ckpt_dirs.append(checkpoint_path)
    ckpt_dirs = [d for d in ckpt_dirs if is_checkpoint_dir(d)]

    def checkpoint_sort_key(ckpt_dir):
        metadata = load_metadata(ckpt_dir)
        return (metadata["iteration"], datetime.datetime.fromisoformat(metadata["timestamp"]))

    if len(ckpt_dirs) > 0:
        out = max(ckpt_dirs, key=checkpoint_sort_key)
        logger.info(f"Discovered latest checkpoint from {checkpoint_path} at {out}")
        return out
    else:
        logger.warning(f"No checkpoints found in {checkpoint_path}")
        return None


def load_checkpoint(checkpoint_path: PathLike, *, discover_latest: bool = True) -> PolicyDocument:
    path: Optional[str] = str(checkpoint_path)
    if discover_latest:
        path = discover_latest_checkpoint(str(checkpoint_path))
    if path is None:
        raise FileNotFoundError(f"Could not find checkpoint at {checkpoint_path}")
    return load_policy(os.path.join(path, POLICY_FILE))


def _get_fs_and_plain_path(path, fs=None):
    if fs is None:
        fs, _, (path_to_open,) = fsspec.get_fs_token_paths(str(path))
    else:
        path_to_open = path
    return fs, path_to_open


@dataclass
class CheckpointerConfig:
    base_path: str = "checkpoints/"
    save_interval: timedelta = timedelta(minutes=15)
    every: Optional[int] = None
    """also keep a permanent checkpoint every this many iterations"""

    def expanded_path(self, run_id) -> str:
        return os.path.expanduser(os.path.join(self.base_path, run_id))

    def create(self, run_id, label: str = "sddp_tsto") -> PolicyCheckpointer:
        return PolicyCheckpointer(
            base_path=self.expanded_path(run_id), save_interval=self.save_interval, every=self.every, label=label
        )

    def __post_init__(self):
        self.base_path = os.path.expanduser(self.base_path)
        if self.every is not None and self.every < 1:
            raise ValueError(f"every must be positive, got {self.every}")
