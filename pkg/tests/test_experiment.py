import numpy as np
import pytest

from sddp_tsto.engine import RunConfig, SddpTsto, TerminationReason
from sddp_tsto.evaluation import PolicyLabel, PolicySnapshot, compare
from sddp_tsto.main.generate import InstanceConfig
from sddp_tsto.portfolio import PortfolioStageModel
from sddp_tsto.scenario import fixed_horizon


def _train(instance, label):
    model = PortfolioStageModel(instance)
    config = RunConfig(n_window=200, alpha=0.05, tol=0.05, max_iters=2000, seed=0)
    result = SddpTsto(model, instance.horizon, instance.stages, config).run()
    return PolicySnapshot(result.pools, model, label=label, iteration=result.iterations)


@pytest.mark.slow
@pytest.mark.parametrize("costs", [0.01, 0.3, 0.7])
def test_random_horizon_policy_beats_the_fixed_horizon_policy(costs):
    instance = InstanceConfig(n=4, costs=costs).build()
    tsto = _train(instance, PolicyLabel.SDDP_TSTO.value)
    fixed = _train(instance.with_horizon(fixed_horizon(instance.t_max)), PolicyLabel.SDDP_FIXED_HORIZON.value)
    # the fixed-horizon policy is still evaluated where the process can stop early
    fixed = PolicySnapshot(fixed.pools, tsto.model, label=fixed.label, iteration=fixed.iteration)

    report = compare(tsto, fixed, instance.horizon, instance.stages, n_sims=500, seed=1)
    assert report.mean_a >= report.mean_b
    assert report.frac_nonnegative >= 0.9


@pytest.mark.slow
def test_long_run_with_low_costs_keeps_the_lp_basis_sound():
    # cheap trades pile up nearly parallel cuts, the hardest case for the simplex
    instance = InstanceConfig(n=4, costs=0.01).build()
    model = PortfolioStageModel(instance)
    config = RunConfig(n_window=200, alpha=0.05, tol=1e-12, max_iters=300, seed=0)
    result = SddpTsto(model, instance.horizon, instance.stages, config).run()

    assert result.termination in (TerminationReason.MAX_ITERS, TerminationReason.CONVERGED)
    lowers = np.array([r.lower for r in result.history])
    assert np.all(np.isfinite(lowers))
    assert np.all(np.diff(lowers) >= -1e-7 * np.maximum(1.0, np.abs(lowers[:-1])))
