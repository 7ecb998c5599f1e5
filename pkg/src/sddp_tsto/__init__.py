import sddp_tsto.config as config
import sddp_tsto.cuts as cuts
import sddp_tsto.engine as engine
import sddp_tsto.logging as logging
import sddp_tsto.lp as lp
import sddp_tsto.scenario as scenario
import sddp_tsto.tracker as tracker
from sddp_tsto.cuts import Cut, CutPool
from sddp_tsto.engine import RunConfig, SddpTsto, run
from sddp_tsto.scenario import HorizonDistribution, StageDistribution, fixed_horizon, truncated_exponential_horizon
from sddp_tsto.tracker import current_tracker


__version__ = "0.1.0"
