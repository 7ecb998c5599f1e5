"""
Runs the full experiment matrix: for every (n, cost) pair, generate an instance, train the random-horizon and the
fixed-horizon policies, and compare them. Finishes with a report over all pairs.

    python scripts/sweep.py --config_path config/sweep.yaml
"""
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import sddp_tsto
from sddp_tsto.engine import RunConfig
from sddp_tsto.logging import init_logging
from sddp_tsto.main import compare, generate, report, train


logger = logging.getLogger(__name__)


@dataclass
class SweepConfig:
    out_dir: str = "runs/sweep"
    n_values: List[int] = field(default_factory=lambda: [4, 8, 20])
    cost_values: List[float] = field(default_factory=lambda: [0.01, 0.1, 0.3, 0.5, 0.7])
    instance: generate.InstanceConfig = field(default_factory=generate.InstanceConfig)
    run: RunConfig = field(default_factory=RunConfig)
    n_sims: int = 500
    eval_seed: int = 1
    log_dir: Path = Path("logs/")


def run_pair(config: SweepConfig, n: int, costs: float) -> str:
    """Returns the path of the comparison summary."""
    work = os.path.join(config.out_dir, f"n{n}_c{costs:g}")
    instance_path = os.path.join(work, "instance.json")
    generate.main(
        generate.GenerateConfig(
            instance=dataclasses.replace(config.instance, n=n, costs=costs),
            instance_out=instance_path,
            log_dir=config.log_dir,
        )
    )

    policies = {}
    for mode in train.TrainMode:
        policies[mode] = os.path.join(work, f"policy_{mode.value}.json")
        train.main(
            train.TrainConfig(
                instance_in=instance_path,
                mode=mode.value,
                run=dataclasses.replace(config.run, id=f"n{n}_c{costs:g}_{mode.value}", log_dir=config.log_dir),
                policy_out=policies[mode],
                results_out=os.path.join(work, f"results_{mode.value}.json"),
                progress=False,
            )
        )

    summary_path = os.path.join(work, "summary.json")
    compare.main(
        compare.CompareConfig(
            instance_in=instance_path,
            policy_a=policies[train.TrainMode.TSTO],
            policy_b=policies[train.TrainMode.FIXED],
            n_sims=config.n_sims,
            seed=config.eval_seed,
            csv_out=os.path.join(work, "comparison.csv"),
            summary_out=summary_path,
            log_dir=config.log_dir,
        )
    )
    return summary_path


def main(config: SweepConfig):
    init_logging(config.log_dir, "sweep")
    summaries = []
    results = []
    for n in config.n_values:
        for costs in config.cost_values:
            logger.info(f"Running n={n}, costs={costs}")
            summaries.append(run_pair(config, n, costs))
            work = os.path.dirname(summaries[-1])
            results += [os.path.join(work, f"results_{mode.value}.json") for mode in train.TrainMode]

    report.main(
        report.ReportConfig(summaries=summaries, results=results, out=os.path.join(config.out_dir, "report.json"))
    )


if __name__ == "__main__":
    sddp_tsto.config.main(main)()
