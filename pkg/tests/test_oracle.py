import numpy as np
import pytest

from sddp_tsto.errors import TreeTooLarge
from sddp_tsto.lp import LpSubproblem, solve
from sddp_tsto.oracle import (
    ExactValues,
    NodeKind,
    TreeBudget,
    build_joint_tree,
    exact_dp,
    extensive_form_value,
)
from sddp_tsto.portfolio import PortfolioInstance, PortfolioStageModel, cash_only_instance
from sddp_tsto.scenario import StageDistribution, fixed_horizon, truncated_exponential_horizon
from sddp_tsto.stage import Branch
from test_utils import inventory_model, tiny_portfolio


def test_tree_shape():
    instance = tiny_portfolio()
    tree = build_joint_tree(instance.horizon, instance.stages)
    # stage 2: 2 living + 2 death; stage 3: 4 children per living node, one dead child per death node
    assert tree.num_nodes == 1 + 4 + 10
    kinds = [node.kind for node in tree.nodes if node.stage == 3]
    assert kinds.count(NodeKind.DEAD) == 2
    assert kinds.count(NodeKind.DEATH) == 4
    assert len(tree.decision_nodes()) == 13


def test_leaf_probabilities_follow_the_horizon_law():
    horizon = truncated_exponential_horizon(0.15, 4)
    law = StageDistribution([[1.0], [2.0], [3.0]], [0.2, 0.3, 0.5])
    stages = [StageDistribution.deterministic([1.0])] + [law] * 3
    tree = build_joint_tree(horizon, stages)

    by_stage = tree.leaf_probability_by_death_stage()
    np.testing.assert_allclose([by_stage[t] for t in range(2, 5)], horizon.pmf, atol=1e-12)
    assert sum(by_stage.values()) == pytest.approx(1.0, abs=1e-12)


def test_budget_is_enforced():
    instance = tiny_portfolio(t_max=5)
    with pytest.raises(TreeTooLarge):
        build_joint_tree(instance.horizon, instance.stages)
    with pytest.raises(TreeTooLarge):
        build_joint_tree(tiny_portfolio().horizon, tiny_portfolio().stages, TreeBudget(max_nodes=10))
    with pytest.raises(TreeTooLarge):
        ExactValues(instance.horizon, instance.stages, PortfolioStageModel(instance))


def test_extensive_form_matches_the_recursion():
    instance = tiny_portfolio(seed=6)
    model = PortfolioStageModel(instance)
    tree = build_joint_tree(instance.horizon, instance.stages)
    ef = extensive_form_value(tree, model)

    exact = ExactValues(instance.horizon, instance.stages, model)
    xi1 = instance.stages[0].support[0]
    root_cost = float(model.stage_lp(1, xi1, Branch.CONTINUE).c @ ef.root_x)
    x1 = model.state(1, ef.root_x)
    assert ef.value == pytest.approx(root_cost + exact.value(2, x1), abs=1e-8 * max(1.0, abs(ef.value)))


def test_value_after_the_last_stage_and_after_death_is_zero():
    instance = tiny_portfolio()
    exact = ExactValues(instance.horizon, instance.stages, PortfolioStageModel(instance))
    assert exact.value(instance.t_max + 1, instance.x0) == 0.0
    assert exact.value(2, instance.x0, alive=False) == 0.0


def test_exact_dp_on_the_inventory_model():
    model, stages = inventory_model()
    horizon = truncated_exponential_horizon(0.5, 3)
    # stage 3 is the last one: leftovers cost 0.5, orders 1, shortfalls 4
    values = exact_dp(horizon, stages, model, [(3, np.array([2.0, 0.0, 0.0])), (3, np.array([0.0, 0.0, 0.0]))])
    # ordering (1) is cheaper than a shortfall (4): with 2 in stock either 1 is left over or 1 is ordered
    assert values[0] == pytest.approx(0.5 * 0.5 + 0.5 * 1.0)
    assert values[1] == pytest.approx(0.5 * 1.0 + 0.5 * 3.0)


def test_values_are_memoized():
    instance = tiny_portfolio()
    exact = ExactValues(instance.horizon, instance.stages, PortfolioStageModel(instance))
    x = instance.x0 * 0.5
    first = exact.value(2, x)
    assert exact.value(2, x.copy()) == first
    assert len(exact._cache) == 1


def _fixed_horizon_stage_two_value(model, stages, x):
    """Q_2(x) of a three-stage fixed-horizon problem, one deterministic equivalent per stage 2 realization."""
    last = stages[2]
    total = 0.0
    for p, xi2 in zip(stages[1].probs, stages[1].support):
        first = model.stage_lp(2, xi2, Branch.CONTINUE)
        children = [model.stage_lp(3, xi3, Branch.STOP) for xi3 in last.support]
        offsets = np.cumsum([0, first.n_vars] + [lp.n_vars for lp in children])

        def block(a, k):
            rows = np.zeros((a.shape[0], offsets[-1]))
            rows[:, offsets[k] : offsets[k + 1]] = a
            return rows

        a_eq, b_eq = [block(first.a_eq, 0)], [first.b_eq0 + first.jac_eq @ x]
        a_ub, b_ub = [block(first.a_ub, 0)], [first.b_ub0 + first.jac_ub @ x]
        for k, lp in enumerate(children, start=1):
            eq = block(lp.a_eq, k)
            eq[:, first.state_index] -= lp.jac_eq
            ub = block(lp.a_ub, k)
            ub[:, first.state_index] -= lp.jac_ub
            a_eq.append(eq)
            b_eq.append(lp.b_eq0)
            a_ub.append(ub)
            b_ub.append(lp.b_ub0)

        problem = LpSubproblem(
            c=np.concatenate([first.c] + [q * lp.c for q, lp in zip(last.probs, children)]),
            a_eq=np.vstack(a_eq),
            b_eq=np.concatenate(b_eq),
            a_ub=np.vstack(a_ub),
            b_ub=np.concatenate(b_ub),
            lower=np.concatenate([first.lower] + [lp.lower for lp in children]),
            upper=np.concatenate([first.upper] + [lp.upper for lp in children]),
        )
        total += p * solve(problem).objective
    return total


def test_no_interior_stops_match_the_fixed_horizon_recursion():
    horizon = fixed_horizon(3)
    instance = tiny_portfolio(seed=10, horizon=horizon)
    model = PortfolioStageModel(instance)
    assert horizon.q[2] == 0.0

    rng = np.random.default_rng(2)
    states = [instance.x0] + [rng.uniform(0.0, 1000.0, instance.n + 1) for _ in range(4)]
    values = exact_dp(horizon, instance.stages, model, [(2, x) for x in states])
    for x, value in zip(states, values):
        expected = _fixed_horizon_stage_two_value(model, instance.stages, x)
        assert value == pytest.approx(expected, rel=1e-8, abs=1e-8)


def test_a_risk_free_stage_scales_the_value_by_the_rate():
    rf = 1.03
    values = []
    for t_max in (2, 3):
        instance = cash_only_instance(t_max=t_max, horizon=fixed_horizon(t_max), wealth=250.0, rf_rate=rf)
        tree = build_joint_tree(instance.horizon, instance.stages)
        values.append(extensive_form_value(tree, PortfolioStageModel(instance)).value)
    assert values[1] == pytest.approx(rf * values[0], rel=1e-10)
    assert values[0] == pytest.approx(-250.0 * rf**3, rel=1e-10)


def test_single_asset_two_stage_value_by_hand():
    # one asset returning 10% against 2% cash; buying once at stage 1 and holding is optimal
    wealth, rf, asset, cost = 100.0, 1.02, 1.10, 0.01
    law = StageDistribution.deterministic([asset, rf])
    instance = PortfolioInstance(
        n=1,
        t_max=2,
        rf_rate=rf,
        stages=[law, law],
        mean_returns=np.array([[0.0, 0.0], [asset, rf], [asset, rf], [asset, rf]]),
        eta=np.full((3, 1), cost),
        nu=np.full((3, 1), cost),
        u=np.ones(1),
        x0=np.array([0.0, wealth]),
        horizon=fixed_horizon(2),
    )
    model = PortfolioStageModel(instance)
    value = extensive_form_value(build_joint_tree(instance.horizon, instance.stages), model).value

    units_bought = rf * wealth / (1.0 + cost)
    assert value == pytest.approx(-asset * asset * units_bought, rel=1e-9)
    held = exact_dp(instance.horizon, instance.stages, model, [(2, np.array([units_bought, 0.0]))])
    assert held[0] == pytest.approx(-asset * asset * units_bought, rel=1e-9)
