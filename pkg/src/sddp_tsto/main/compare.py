import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

import sddp_tsto
from sddp_tsto.checkpoint import load_policy
from sddp_tsto.errors import DimensionMismatch
from sddp_tsto.evaluation import PolicySnapshot, compare, report_summary, write_report_csv
from sddp_tsto.logging import init_logging
from sddp_tsto.portfolio import PortfolioStageModel, instance_from_json
from sddp_tsto.stage import StageModel
from sddp_tsto.utils.json_utils import read_json, write_json


logger = logging.getLogger(__name__)


@dataclass
class CompareConfig:
    instance_in: str = "instance.json"
    policy_a: str = "policy_tsto.json"
    policy_b: str = "policy_fixed.json"
    n_sims: int = 500
    seed: int = 1
    threshold: float = 0.9
    """the comparison passes if at least this share of paired differences is nonnegative"""
    bins: int = 20
    alpha: float = 0.05
    csv_out: str = "comparison.csv"
    summary_out: str = "summary.json"
    threads: Optional[int] = None
    log_dir: Path = Path("logs/")


def _snapshot(path: str, model: StageModel) -> PolicySnapshot:
    doc = load_policy(path)
    if doc.t_max != model.t_max or doc.state_dim != model.state_dim:
        raise DimensionMismatch(
            f"Policy {path} is for t_max={doc.t_max}, state_dim={doc.state_dim}; the instance has"
            f" t_max={model.t_max}, state_dim={model.state_dim}"
        )
    return PolicySnapshot(pools=doc.pools, model=model, label=doc.label, iteration=doc.iteration)


def main(config: CompareConfig):
    init_logging(config.log_dir, "compare")
    instance = instance_from_json(read_json(config.instance_in))
    # both policies act in the random-horizon world, whatever horizon they were trained for
    model = PortfolioStageModel(instance)
    policy_a = _snapshot(config.policy_a, model)
    policy_b = _snapshot(config.policy_b, model)

    report = compare(
        policy_a,
        policy_b,
        instance.horizon,
        instance.stages,
        n_sims=config.n_sims,
        seed=config.seed,
        threshold=config.threshold,
        bins=config.bins,
        threads=config.threads,
    )

    write_report_csv(report, config.csv_out)
    summary = report_summary(report, config.alpha)
    summary["instance"] = {
        "path": config.instance_in,
        "n": instance.n,
        "t_max": instance.t_max,
        "costs": float(np.mean(instance.eta[1:])),
    }
    write_json(config.summary_out, summary)
    logger.info(f"Wrote {config.csv_out} and {config.summary_out}")


if __name__ == "__main__":
    sddp_tsto.config.main(main)()
