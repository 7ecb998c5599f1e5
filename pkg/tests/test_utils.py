import glob
import os
from typing import Optional

import draccus
import numpy as np
import pytest

from sddp_tsto.cuts import Cut
from sddp_tsto.lp import LpSolution, LpSubproblem
from sddp_tsto.portfolio import PortfolioInstance, generate_instance
from sddp_tsto.scenario import HorizonDistribution, StageDistribution
from sddp_tsto.stage import LinearStageModel


def tiny_portfolio(seed: int = 0, t_max: int = 3, horizon: Optional[HorizonDistribution] = None) -> PortfolioInstance:
    """Two risky assets plus cash, two realizations per stage. Small enough for the scenario-tree oracle."""
    instance = generate_instance(n=2, t_max=t_max, m_realizations=2, lam=0.15, costs=0.01, rf_rate=1.01, seed=seed)
    if horizon is not None:
        instance = instance.with_horizon(horizon)
    return instance


def inventory_model(t_max: int = 3):
    """
    A one-product inventory: x = (stock, order, shortfall), stock_t = stock_{t-1} + order_t + shortfall_t - demand_t.
    Orders cost 1 per unit, shortfalls 4; leftover stock at the horizon costs 0.5 per unit.
    """
    a = [np.array([[1.0, -1.0, -1.0]])] * t_max
    b = [np.array([[-1.0, 0.0, 0.0]])] * t_max
    c = [np.array([0.0, 1.0, 4.0])] * t_max
    cbar = [np.array([0.5, 1.0, 4.0])] * t_max
    # costs are nonnegative, so zero is a valid lower bound everywhere
    cuts = {t: Cut(0.0, np.zeros(3)) for t in range(2, t_max + 1)}
    model = LinearStageModel(a, b, c, cbar, np.zeros(3), cuts)
    demand = StageDistribution.uniform([[-1.0], [-3.0]])
    stages = [StageDistribution.deterministic([-2.0])] + [demand] * (t_max - 1)
    return model, stages


def assert_lp_certificate(problem: LpSubproblem, solution: LpSolution, tol: float = 1e-7):
    """Primal feasibility, dual sign conventions and a zero duality gap."""
    assert solution.is_optimal
    assert problem.max_violation(solution.x) <= 1e-8 * problem.rhs_scale()
    assert np.all(solution.duals_ub <= tol)

    x, rc = solution.x, solution.reduced_costs
    slack = 1e-7 * max(1.0, float(np.max(np.abs(x), initial=0.0)))
    at_lower = np.isfinite(problem.lower) & (x <= problem.lower + slack)
    at_upper = np.isfinite(problem.upper) & (x >= problem.upper - slack)
    interior = ~at_lower & ~at_upper
    scale = 1.0 + float(np.max(np.abs(problem.c), initial=0.0))
    assert np.all(rc[interior] == pytest.approx(0.0, abs=tol * scale))
    assert np.all(rc[at_lower & ~at_upper] >= -tol * scale)
    assert np.all(rc[at_upper & ~at_lower] <= tol * scale)

    gap = abs(solution.dual_objective(problem) - solution.objective)
    assert gap <= tol * (1.0 + abs(solution.objective))


def parameterize_with_configs(pattern, config_path=None):
    test_path = os.path.dirname(os.path.abspath(__file__))
    if config_path is None:
        config_path = os.path.join(test_path, "..", "config")

    configs = glob.glob(os.path.join(config_path, pattern))
    return pytest.mark.parametrize("config_file", configs, ids=lambda x: f"{os.path.basename(x)}")


def check_load_config(config_class, config_file):
    try:
        draccus.parse(config_class, config_file, args=[])
    except Exception as e:
        raise Exception(f"failed to parse {config_file}") from e
