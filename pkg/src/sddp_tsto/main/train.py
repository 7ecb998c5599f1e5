import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import sddp_tsto
import sddp_tsto.tracker
from sddp_tsto import callbacks
from sddp_tsto.checkpoint import CheckpointerConfig, PolicyDocument, load_checkpoint, load_policy, save_policy
from sddp_tsto.engine import RunConfig, SddpTsto
from sddp_tsto.errors import DimensionMismatch
from sddp_tsto.evaluation import PolicyLabel
from sddp_tsto.portfolio import PortfolioStageModel, instance_from_json
from sddp_tsto.scenario import fixed_horizon
from sddp_tsto.utils.json_utils import read_json, write_json


logger = logging.getLogger(__name__)


class TrainMode(str, enum.Enum):
    TSTO = "tsto"
    """the random horizon of the instance"""
    FIXED = "fixed"
    """classical SDDP: T = t_max surely"""

    @property
    def label(self) -> str:
        return PolicyLabel.SDDP_TSTO.value if self == TrainMode.TSTO else PolicyLabel.SDDP_FIXED_HORIZON.value


@dataclass
class TrainConfig:
    instance_in: str = "instance.json"
    mode: str = TrainMode.TSTO.value
    """tsto trains for the instance's random horizon, fixed for T = t_max"""
    run: RunConfig = field(default_factory=RunConfig)
    policy_out: str = "policy.json"
    results_out: str = "results.json"
    checkpointer: Optional[CheckpointerConfig] = None
    initial_policy: Optional[str] = None
    """warm start from a policy file, or from the latest checkpoint under a directory"""
    log_every: int = 10
    progress: bool = True


def _load_initial_policy(path: str) -> PolicyDocument:
    if path.endswith(".json"):
        return load_policy(path)
    return load_checkpoint(path)


def main(config: TrainConfig):
    run_id = config.run.initialize()
    mode = TrainMode(config.mode)
    sddp_tsto.tracker.log_configuration(config)

    instance = instance_from_json(read_json(config.instance_in))
    if mode == TrainMode.FIXED:
        instance = instance.with_horizon(fixed_horizon(instance.t_max))
    model = PortfolioStageModel(instance)

    solver = SddpTsto(model, instance.horizon, instance.stages, config.run)

    start_iteration = 0
    if config.initial_policy is not None:
        policy = _load_initial_policy(config.initial_policy)
        if policy.t_max != model.t_max or policy.state_dim != model.state_dim:
            raise DimensionMismatch(
                f"Policy is for t_max={policy.t_max}, state_dim={policy.state_dim}; the instance has"
                f" t_max={model.t_max}, state_dim={model.state_dim}"
            )
        solver.reset_pools(policy.pools)
        start_iteration = policy.iteration

    solver.add_hook(callbacks.log_bounds)
    solver.add_hook(callbacks.log_iteration(config.log_every))
    if config.progress:
        total = start_iteration + config.run.max_iters
        solver.add_hook(callbacks.pbar_logger(total=total, initial=start_iteration, desc=mode.label))
    if config.checkpointer is not None:
        solver.add_hook(config.checkpointer.create(run_id, mode.label).on_iteration)

    try:
        result = solver.run(start_iteration=start_iteration)
    finally:
        sddp_tsto.tracker.current_tracker().finish()

    save_policy(config.policy_out, result.pools, label=mode.label, iteration=start_iteration + result.iterations)
    results = result.to_json()
    results["label"] = mode.label
    results["start_iteration"] = start_iteration
    write_json(config.results_out, results)
    logger.info(f"Wrote results to {config.results_out}")


if __name__ == "__main__":
    sddp_tsto.config.main(main)()
