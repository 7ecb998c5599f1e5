import csv

import numpy as np
import pytest

from sddp_tsto.cuts import CutPool
from sddp_tsto.engine import RunConfig, SddpTsto
from sddp_tsto.errors import InvalidParameter
from sddp_tsto.evaluation import (
    REPORT_COLUMNS,
    PolicyLabel,
    PolicySnapshot,
    compare,
    evaluation_trajectories,
    report_summary,
    simulate_policy,
    summarize_incomes,
    write_report_csv,
)
from sddp_tsto.portfolio import PortfolioStageModel, cash_only_instance
from sddp_tsto.scenario import fixed_horizon, truncated_exponential_horizon
from test_utils import tiny_portfolio


def _policy(instance, label=PolicyLabel.SDDP_TSTO.value, iters=20):
    model = PortfolioStageModel(instance)
    result = SddpTsto(model, instance.horizon, instance.stages, RunConfig(n_window=50, max_iters=iters)).run()
    return PolicySnapshot(result.pools, model, label=label, iteration=result.iterations)


def test_policy_needs_every_stage():
    instance = tiny_portfolio()
    model = PortfolioStageModel(instance)
    with pytest.raises(InvalidParameter):
        PolicySnapshot({2: CutPool(2, model.state_dim, [model.initial_cut(2)])}, model)


def test_cash_only_incomes_are_compounded_wealth():
    horizon = truncated_exponential_horizon(0.5, 3)
    instance = cash_only_instance(t_max=3, horizon=horizon, wealth=100.0, rf_rate=1.02)
    policy = _policy(instance)
    trajectories = evaluation_trajectories(horizon, instance.stages, 50, seed=3)
    incomes = simulate_policy(policy, trajectories)
    expected = [100.0 * 1.02 ** (traj.horizon + 1) for traj in trajectories]
    np.testing.assert_allclose(incomes, expected, rtol=1e-9)


def test_simulation_is_thread_independent():
    instance = tiny_portfolio(seed=2)
    policy = _policy(instance)
    trajectories = evaluation_trajectories(instance.horizon, instance.stages, 30, seed=0)
    np.testing.assert_array_equal(
        simulate_policy(policy, trajectories), simulate_policy(policy, trajectories, threads=3)
    )


def test_self_comparison_is_a_tie():
    instance = tiny_portfolio(seed=1)
    policy = _policy(instance)
    report = compare(policy, policy, instance.horizon, instance.stages, n_sims=40, seed=5)
    assert report.n_sims == 40
    np.testing.assert_array_equal(report.diff, 0.0)
    np.testing.assert_allclose(report.ratio, 1.0)
    assert report.frac_nonnegative == 1.0
    assert report.passes_threshold
    assert report.mean_a == report.mean_b


def test_comparison_is_deterministic_in_the_seed():
    instance = tiny_portfolio(seed=3)
    a = _policy(instance)
    b = _policy(instance.with_horizon(fixed_horizon(3)), PolicyLabel.SDDP_FIXED_HORIZON.value)
    b = PolicySnapshot(b.pools, a.model, label=b.label)

    first = compare(a, b, instance.horizon, instance.stages, n_sims=25, seed=9)
    second = compare(a, b, instance.horizon, instance.stages, n_sims=25, seed=9)
    other = compare(a, b, instance.horizon, instance.stages, n_sims=25, seed=10)
    assert first.checksum == second.checksum
    np.testing.assert_array_equal(first.income_a, second.income_a)
    np.testing.assert_array_equal(first.diff, second.diff)
    assert first.checksum != other.checksum
    assert first.labels == ("sddp_tsto", "sddp_fixed_horizon")


def test_comparison_parameters_are_checked():
    instance = tiny_portfolio()
    policy = _policy(instance, iters=2)
    with pytest.raises(InvalidParameter):
        compare(policy, policy, instance.horizon, instance.stages, n_sims=10, seed=0, threshold=0.0)
    with pytest.raises(InvalidParameter):
        compare(policy, policy, instance.horizon, instance.stages, n_sims=0, seed=0)


def test_summarize_incomes():
    summary = summarize_incomes([1.0, 3.0], alpha=0.05)
    assert summary.mean == 2.0
    assert summary.std == 1.0
    assert summary.lower < summary.mean

    single = summarize_incomes([4.0])
    assert single.mean == 4.0
    assert single.std == 0.0
    assert single.lower is None
    with pytest.raises(InvalidParameter):
        summarize_incomes([])


def test_single_simulation_summary_has_no_confidence_bound():
    instance = tiny_portfolio(seed=4)
    policy = _policy(instance, iters=2)
    report = compare(policy, policy, instance.horizon, instance.stages, n_sims=1, seed=1)

    summary = report_summary(report)
    assert summary["n_sims"] == 1
    assert summary["income_a"]["lower"] is None
    assert summary["income_b"]["n"] == 1
    assert summary["mean_diff"] == 0.0


def test_report_files(tmp_path):
    instance = tiny_portfolio(seed=4)
    policy = _policy(instance)
    report = compare(policy, policy, instance.horizon, instance.stages, n_sims=12, seed=1, bins=4)

    path = tmp_path / "comparison.csv"
    write_report_csv(report, path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 13
    assert [int(row[1]) for row in rows[1:]] == report.horizons.tolist()
    assert float(rows[1][2]) == report.income_a[0]

    summary = report_summary(report)
    assert summary["n_sims"] == 12
    assert summary["mean_diff"] == 0.0
    assert summary["mean_ratio"] == pytest.approx(1.0)
    assert sum(summary["diff_hist"]["counts"]) == 12
    assert len(summary["ratio_hist"]["edges"]) == 5
