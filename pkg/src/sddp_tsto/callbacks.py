import copy
import logging as pylogging
from typing import Optional

from tqdm import tqdm

import sddp_tsto.tracker
from sddp_tsto.engine import IterationInfo
from sddp_tsto.tracker.helpers import prefixed, scalar_metrics
from sddp_tsto.utils.datetime_utils import format_seconds


logger = pylogging.getLogger(__name__)


def log_bounds(info: IterationInfo):
    record = info.record
    metrics = {
        "bounds/lower": record.lower,
        "bounds/upper": record.upper,
        "bounds/gap": record.gap,
        "bounds/sigma": record.sigma_hat,
        "forward/cost": record.cost,
        "forward/horizon": record.horizon,
        "time/iteration": info.duration,
    }
    sddp_tsto.tracker.log_metrics(scalar_metrics(metrics), step=info.iteration)

    if info.final:
        summary = {
            "termination": info.termination.value if info.termination else None,
            "iterations": info.iteration,
            "wall_time": info.elapsed,
            **prefixed({"lower": record.lower, "upper": record.upper, "gap": record.gap}, "bounds"),
        }
        sddp_tsto.tracker.log_summary(scalar_metrics(summary))


def log_iteration(every: int = 10):
    """INFO line with the bounds every ``every`` iterations and on the last one."""

    def fn(info: IterationInfo):
        if info.iteration % every != 0 and not info.final:
            return
        r = info.record
        upper = "n/a" if r.upper is None else f"{r.upper:.6g}"
        gap = "n/a" if r.gap is None else f"{r.gap:.4%}"
        logger.info(
            f"iter {r.iteration}: lower={r.lower:.6g} upper={upper} gap={gap} T={r.horizon}"
            f" ({format_seconds(info.duration)}, {format_seconds(info.elapsed)} total)"
        )

    return fn


def pbar_logger(total: Optional[int] = None, desc="sddp", initial: int = 0, **tqdm_mkwargs):
    """Progress bar over global iteration numbers; a warm-started run passes its start iteration as ``initial``."""
    kwargs = copy.copy(tqdm_mkwargs)
    if "desc" not in kwargs:
        kwargs["desc"] = desc
    kwargs["total"] = total
    kwargs["initial"] = initial
    pbar = tqdm(**kwargs)

    def update_pbar(info: IterationInfo):
        pbar.update(info.iteration - pbar.n)
        postfix = {"lower": f"{info.record.lower:.6g}"}
        if info.record.gap is not None:
            postfix["gap"] = f"{info.record.gap:.3%}"
        pbar.set_postfix(**postfix)
        if info.final:
            pbar.close()

    return update_pbar
