import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import sddp_tsto
from sddp_tsto.logging import init_logging
from sddp_tsto.portfolio import PortfolioInstance, generate_instance, instance_to_json
from sddp_tsto.utils.json_utils import write_json


logger = logging.getLogger(__name__)


@dataclass
class InstanceConfig:
    """Parameters of a random portfolio instance. The defaults are the n=4, cost 0.01 experiment."""

    n: int = 4
    """number of risky assets; must be even"""
    t_max: int = 10
    m_realizations: int = 20
    horizon_rate: float = 0.15
    costs: float = 0.01
    """proportional transaction cost, used for both buying and selling"""
    rf_rate: float = 1.01
    seed: int = 0

    def build(self) -> PortfolioInstance:
        return generate_instance(
            n=self.n,
            t_max=self.t_max,
            m_realizations=self.m_realizations,
            lam=self.horizon_rate,
            costs=self.costs,
            rf_rate=self.rf_rate,
            seed=self.seed,
        )


@dataclass
class GenerateConfig:
    instance: InstanceConfig = field(default_factory=InstanceConfig)
    instance_out: str = "instance.json"
    log_dir: Path = Path("logs/")


def main(config: GenerateConfig):
    init_logging(config.log_dir, "generate")
    instance = config.instance.build()
    doc = instance_to_json(instance)
    doc["generator"] = dataclasses.asdict(config.instance)
    write_json(config.instance_out, doc)
    logger.info(f"Wrote instance to {config.instance_out} (E[T]={instance.horizon.mean():.3f})")


if __name__ == "__main__":
    sddp_tsto.config.main(main)()
