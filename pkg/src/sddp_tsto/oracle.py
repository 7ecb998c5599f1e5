"""
Exact reference values for small instances, by enumerating the joint (noise, death) scenario tree and solving its
deterministic equivalent as one LP.
"""
import dataclasses
import enum
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sddp_tsto.errors import SubproblemInfeasible, TreeTooLarge
from sddp_tsto.lp import LpSolution, LpSubproblem, SimplexOptions, solve
from sddp_tsto.scenario import HorizonDistribution, StageDistribution, check_stages
from sddp_tsto.stage import Branch, StageModel


logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class TreeBudget:
    max_t_max: int = 4
    max_realizations: int = 3
    max_state_dim: int = 4
    """three risky assets plus cash"""
    max_nodes: int = 1_000_000


class NodeKind(str, enum.Enum):
    LIVING = "living"
    """D_t = 1"""
    DEATH = "death"
    """D_{t-1} = 1 and D_t = 0: the terminal objective applies here"""
    DEAD = "dead"
    """after the death stage; carries no decision"""


@dataclasses.dataclass(frozen=True)
class TreeNode:
    index: int
    stage: int
    parent: int
    """-1 for the root"""
    xi_index: int
    """-1 for dead nodes"""
    kind: NodeKind
    probability: float

    @property
    def alive(self) -> bool:
        return self.kind == NodeKind.LIVING


@dataclasses.dataclass(frozen=True, eq=False)
class JointTree:
    horizon: HorizonDistribution
    stages: List[StageDistribution]
    nodes: List[TreeNode]
    children: List[List[int]]

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def decision_nodes(self) -> List[TreeNode]:
        """Living and death nodes, in breadth-first order."""
        return [node for node in self.nodes if node.kind != NodeKind.DEAD]

    def leaf_probability_by_death_stage(self) -> Dict[int, float]:
        """Total probability of the death nodes at each stage; equals P(T = t) for a tree rooted at stage 1."""
        out = {t: 0.0 for t in range(self.root.stage + 1, self.horizon.t_max + 1)}
        for node in self.nodes:
            if node.kind == NodeKind.DEATH:
                out[node.stage] += node.probability
        return out


def _check_budget(horizon: HorizonDistribution, stages: Sequence[StageDistribution], budget: TreeBudget):
    if horizon.t_max > budget.max_t_max:
        raise TreeTooLarge(f"t_max={horizon.t_max} exceeds the oracle limit of {budget.max_t_max}")
    widest = max(s.num_realizations for s in stages)
    if widest > budget.max_realizations:
        raise TreeTooLarge(f"{widest} realizations per stage exceeds the oracle limit of {budget.max_realizations}")


def build_joint_tree(
    horizon: HorizonDistribution,
    stages: Sequence[StageDistribution],
    budget: TreeBudget = TreeBudget(),
    *,
    root_stage: int = 1,
    root_xi_index: int = 0,
) -> JointTree:
    """
    Enumerates every joint path. A living node at stage t has 2 * M_{t+1} children: realization j with D = 1 has
    probability (1 - q_{t+1}) p_j, with D = 0 probability q_{t+1} p_j. Zero-probability children are kept so that the
    tree shape only depends on the stage supports. A death or dead node has a single dead child.

    The root is a living node at ``root_stage`` with realization ``root_xi_index`` and probability 1.
    """
    check_stages(horizon, stages)
    _check_budget(horizon, stages, budget)
    t_max = horizon.t_max

    nodes = [TreeNode(0, root_stage, -1, root_xi_index, NodeKind.LIVING, 1.0)]
    children: List[List[int]] = [[]]
    frontier = [0]
    for t in range(root_stage + 1, t_max + 1):
        q = float(horizon.q[t])
        law = stages[t - 1]
        next_frontier = []
        for parent_index in frontier:
            parent = nodes[parent_index]
            if parent.alive:
                new = [(j, NodeKind.LIVING, (1.0 - q) * law.probs[j]) for j in range(law.num_realizations)]
                new += [(j, NodeKind.DEATH, q * law.probs[j]) for j in range(law.num_realizations)]
            else:
                new = [(-1, NodeKind.DEAD, 1.0)]
            for xi_index, kind, weight in new:
                index = len(nodes)
                if index >= budget.max_nodes:
                    raise TreeTooLarge(f"Scenario tree exceeds {budget.max_nodes} nodes")
                nodes.append(TreeNode(index, t, parent_index, xi_index, kind, parent.probability * float(weight)))
                children.append([])
                children[parent_index].append(index)
                next_frontier.append(index)
        frontier = next_frontier

    logger.debug(f"Built scenario tree with {len(nodes)} nodes from stage {root_stage}")
    return JointTree(horizon=horizon, stages=list(stages), nodes=nodes, children=children)


@dataclasses.dataclass(frozen=True, eq=False)
class ExtensiveFormSolution:
    value: float
    root_x: np.ndarray
    """the root node's full stage decision"""
    solution: LpSolution
    problem: LpSubproblem


def extensive_form_value(
    tree: JointTree,
    model: StageModel,
    budget: TreeBudget = TreeBudget(),
    *,
    x_prev: Optional[np.ndarray] = None,
    options: SimplexOptions = SimplexOptions(),
) -> ExtensiveFormSolution:
    """
    Solves the deterministic equivalent: every living node uses the running objective, every death node the
    terminal one, each weighted by its probability. The coupling ``jac x_parent`` of a child's rows moves to the
    left-hand side; the root uses ``x_prev`` (default ``model.x0``) as data.
    """
    if model.state_dim > budget.max_state_dim:
        raise TreeTooLarge(f"State dimension {model.state_dim} exceeds the oracle limit of {budget.max_state_dim}")
    x_root_prev = model.x0 if x_prev is None else np.asarray(x_prev, dtype=np.float64)

    decision = tree.decision_nodes()
    lps = {}
    offsets: Dict[int, int] = {}
    n_vars = 0
    for node in decision:
        xi = tree.stages[node.stage - 1].support[node.xi_index]
        branch = Branch.CONTINUE if node.alive else Branch.STOP
        lps[node.index] = model.stage_lp(node.stage, xi, branch)
        offsets[node.index] = n_vars
        n_vars += lps[node.index].n_vars

    c = np.zeros(n_vars)
    lower = np.zeros(n_vars)
    upper = np.zeros(n_vars)
    eq_rows: List[np.ndarray] = []
    eq_rhs: List[np.ndarray] = []
    ub_rows: List[np.ndarray] = []
    ub_rhs: List[np.ndarray] = []

    for node in decision:
        lp = lps[node.index]
        off = offsets[node.index]
        cols = slice(off, off + lp.n_vars)
        c[cols] = node.probability * lp.c
        lower[cols] = lp.lower
        upper[cols] = lp.upper

        for a, b0, jac, rows, rhs in (
            (lp.a_eq, lp.b_eq0, lp.jac_eq, eq_rows, eq_rhs),
            (lp.a_ub, lp.b_ub0, lp.jac_ub, ub_rows, ub_rhs),
        ):
            block = np.zeros((a.shape[0], n_vars))
            block[:, cols] = a
            if node.parent < 0:
                rhs.append(b0 + jac @ x_root_prev)
            else:
                parent_lp = lps[node.parent]
                parent_off = offsets[node.parent]
                block[:, parent_off + parent_lp.state_index] -= jac
                rhs.append(b0)
            rows.append(block)

    problem = LpSubproblem(
        c=c,
        a_eq=np.vstack(eq_rows),
        b_eq=np.concatenate(eq_rhs),
        a_ub=np.vstack(ub_rows),
        b_ub=np.concatenate(ub_rhs),
        lower=lower,
        upper=upper,
    )
    solution = solve(problem, options=options)
    if not solution.is_optimal:
        raise SubproblemInfeasible(stage=tree.root.stage, branch="extensive form", status=solution.status.value)

    root_lp = lps[0]
    root_x = solution.x[: root_lp.n_vars].copy()
    logger.debug(f"Extensive form over {len(decision)} nodes ({n_vars} variables): {solution.objective!r}")
    return ExtensiveFormSolution(value=solution.objective, root_x=root_x, solution=solution, problem=problem)


class ExactValues:
    """
    Q_t(x, 1) = sum_j p_j [(1 - q_t) V^c_t(x, xi_j) + q_t V^s_t(x, xi_j)], where V^s is the stop-branch stage LP
    and V^c the deterministic equivalent of the subtree rooted at a living stage t node. Results are memoized.
    """

    def __init__(
        self,
        horizon: HorizonDistribution,
        stages: Sequence[StageDistribution],
        model: StageModel,
        budget: TreeBudget = TreeBudget(),
    ):
        check_stages(horizon, stages)
        _check_budget(horizon, stages, budget)
        if model.state_dim > budget.max_state_dim:
            raise TreeTooLarge(f"State dimension {model.state_dim} exceeds the oracle limit of {budget.max_state_dim}")
        self.horizon = horizon
        self.stages = list(stages)
        self.model = model
        self.budget = budget
        self._trees: Dict[Tuple[int, int], JointTree] = {}
        self._cache: Dict[Tuple[int, bytes], float] = {}

    def _subtree(self, t: int, j: int) -> JointTree:
        key = (t, j)
        if key not in self._trees:
            self._trees[key] = build_joint_tree(self.horizon, self.stages, self.budget, root_stage=t, root_xi_index=j)
        return self._trees[key]

    def value(self, t: int, x: np.ndarray, alive: bool = True) -> float:
        if not alive or t > self.horizon.t_max:
            return 0.0
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        key = (t, x.tobytes())
        if key in self._cache:
            return self._cache[key]

        q = float(self.horizon.q[t])
        law = self.stages[t - 1]
        total = 0.0
        for j in range(law.num_realizations):
            xi = law.support[j]
            if q < 1.0:
                total += law.probs[j] * (1.0 - q) * extensive_form_value(
                    self._subtree(t, j), self.model, self.budget, x_prev=x
                ).value
            if q > 0.0:
                solution = solve(self.model.build_lp(t, x, xi, Branch.STOP))
                if not solution.is_optimal:
                    raise SubproblemInfeasible(
                        stage=t, realization=j, branch=Branch.STOP.value, status=solution.status.value
                    )
                total += law.probs[j] * q * solution.objective

        self._cache[key] = total
        return total


def exact_dp(
    horizon: HorizonDistribution,
    stages: Sequence[StageDistribution],
    model: StageModel,
    queries: Sequence[Tuple[int, np.ndarray]],
    budget: TreeBudget = TreeBudget(),
) -> List[float]:
    """Q_t(x, 1) at each query ``(t, x)``. Q_{t_max + 1} is zero."""
    values = ExactValues(horizon, stages, model, budget)
    return [values.value(t, x) for t, x in queries]
