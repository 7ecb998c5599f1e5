"""
The SDDP loop for problems whose number of stages is random.

Every iteration samples one joint (noise, death) trajectory, runs a forward pass along it to collect trial states,
adds one cut per stage in a backward pass, and recomputes the deterministic lower bound. The statistical upper
bound uses the realized costs of the last ``n_window`` forward passes.
"""
import concurrent.futures
import dataclasses
import enum
import logging as pylogging
import math
import os
import typing
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.special
from draccus import field

import sddp_tsto.logging
import sddp_tsto.tracker
from sddp_tsto.cuts import Cut, CutPool, assemble_cut
from sddp_tsto.errors import InvalidParameter, SubproblemInfeasible
from sddp_tsto.logging import capture_time
from sddp_tsto.lp import LpSolution, LpSubproblem, SimplexOptions, solve, solve_with_cuts
from sddp_tsto.scenario import (
    HorizonDistribution,
    StageDistribution,
    Stream,
    Trajectory,
    check_stages,
    iteration_key,
    sample_trajectory,
)
from sddp_tsto.stage import Branch, StageModel
from sddp_tsto.tracker import TrackerConfig
from sddp_tsto.utils.datetime_utils import format_seconds
from sddp_tsto.utils.py_utils import resolve_thread_count


logger = pylogging.getLogger(__name__)

GAP_FLOOR = 1e-9


class AnchorMode(str, enum.Enum):
    """How the forward pass produces trial states for stages after the sampled horizon."""

    RUNNING_OBJECTIVE = "running_objective"
    """solve the running problem with the current cuts, as if the process were still alive"""
    ZERO_OBJECTIVE = "zero_objective"
    """solve a zero-objective feasibility problem with no future term"""


class TerminationReason(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    TIME_LIMIT = "time_limit"


def _initialize_global_tracker(config, run_id):
    if isinstance(config, Sequence):
        tracker = sddp_tsto.tracker.CompositeTracker([c.init(run_id) for c in config])
    else:
        tracker = config.init(run_id)

    sddp_tsto.tracker.set_global_tracker(tracker)


@dataclass
class RunConfig:
    n_window: int = 200
    """number of forward-pass costs in the upper-bound window"""
    alpha: float = 0.05
    """the upper bound is a one-sided (1 - alpha) confidence bound"""
    tol: float = 0.05  # relative gap tolerance
    max_iters: int = 2000
    seed: int = 0
    anchor_mode: str = AnchorMode.RUNNING_OBJECTIVE.value
    """running_objective or zero_objective"""
    threads: Optional[int] = None
    """worker threads for the backward pass. None means $SDDP_TSTO_THREADS, or 1"""
    time_limit: Optional[timedelta] = None

    id: Optional[str] = None  # run id. if None, will be set to a random string
    log_dir: Path = Path("logs/")
    tracker: TrackerConfig | Tuple[TrackerConfig, ...] = field(default_factory=sddp_tsto.tracker.NoopConfig)

    def validate(self):
        if self.n_window < 2:
            raise InvalidParameter(f"n_window must be >= 2, got {self.n_window}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameter(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.tol < 1.0:
            raise InvalidParameter(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iters < 1:
            raise InvalidParameter(f"max_iters must be positive, got {self.max_iters}")
        if self.time_limit is not None and self.time_limit.total_seconds() <= 0:
            raise InvalidParameter(f"time_limit must be positive, got {self.time_limit}")
        try:
            self.anchor_mode = AnchorMode(self.anchor_mode).value
        except ValueError:
            raise InvalidParameter(f"Unknown anchor_mode {self.anchor_mode!r}")

    def initialize(self) -> str:
        """Validates the config, sets up logging and the global tracker, and returns the run id"""
        self.validate()
        id = self._maybe_set_id()
        sddp_tsto.logging.init_logging(self.log_dir, id)
        _initialize_global_tracker(self.tracker, id)
        return id

    def _maybe_set_id(self) -> str:
        # RUN ID comes from a few places: the config, the environment, or a random string
        if self.id is None:
            if "RUN_ID" in os.environ:
                self.id = os.environ["RUN_ID"]
            else:
                # NB: do NOT use the run seed here. we want the run id to be independent of the seed
                gen = np.random.default_rng()
                self.id = "".join(gen.choice(list("abcdefghijklmnopqrstuvwxyz0123456789"), 8))

            logger.info(f"Setting run id to {self.id}")

        return self.id


def student_quantile(df: float, prob: float) -> float:
    """Inverse CDF of Student's t distribution with ``df`` degrees of freedom."""
    if not df >= 1:
        raise InvalidParameter(f"Degrees of freedom must be >= 1, got {df}")
    if not 0.0 < prob < 1.0:
        raise InvalidParameter(f"Probability must lie in (0, 1), got {prob}")
    return float(scipy.special.stdtrit(df, prob))


@dataclass(frozen=True)
class UpperBound:
    value: float
    mean: float
    sigma_hat: float


def upper_bound(costs: Sequence[float], alpha: float) -> UpperBound:
    """
    One-sided confidence bound ``mean + sigma_hat / sqrt(N) * t_{N-1, 1-alpha}`` on the policy's expected cost.
    ``sigma_hat`` is the standard deviation with divisor N.
    """
    costs = np.asarray(costs, dtype=np.float64)
    n = costs.shape[0]
    if n < 2:
        raise InvalidParameter(f"An upper bound needs at least 2 costs, got {n}")
    mean = float(costs.mean())
    sigma = float(costs.std())
    value = mean + sigma / math.sqrt(n) * student_quantile(n - 1, 1.0 - alpha)
    return UpperBound(value=value, mean=mean, sigma_hat=sigma)


def relative_gap(upper: float, lower: float) -> float:
    return (upper - lower) / max(abs(upper), GAP_FLOOR)


@dataclass(frozen=True)
class BoundsRecord:
    iteration: int
    cost: float
    lower: float
    horizon: int
    upper: Optional[float] = None
    sigma_hat: Optional[float] = None
    gap: Optional[float] = None


@dataclass(frozen=True, eq=False)
class ForwardResult:
    states: List[np.ndarray]
    """``states[t - 1]`` is the state x_t leaving stage t"""
    cost: float
    horizon: int
    decisions: List[np.ndarray]
    """full stage LP solutions, without the epigraph variable"""


@dataclass
class IterationInfo:
    iteration: int
    pools: Mapping[int, CutPool]
    record: BoundsRecord
    forward: ForwardResult
    new_cuts: List[Cut]
    duration: float
    elapsed: float
    termination: Optional[TerminationReason] = None

    @property
    def final(self) -> bool:
        return self.termination is not None


@dataclass
class _Hook:
    fn: Callable[[IterationInfo], None]
    every: int


class SolverHooks:
    hooks: List[_Hook]

    def __init__(self):
        self.hooks = []

    def run_hooks(self, info: IterationInfo, force: bool = False):
        for hook in self.hooks:
            if force or info.iteration % hook.every == 0:
                hook.fn(info)

    def add_hook(self, fn: Optional[Callable[[IterationInfo], Any]] = None, *, every: int = 1):
        def decorator(fn: Callable[[IterationInfo], None]):
            self.hooks.append(_Hook(fn, every))

        if fn is None:
            return decorator
        else:
            return decorator(fn)


@dataclass(eq=False)
class RunResult:
    pools: Dict[int, CutPool]
    history: List[BoundsRecord]
    termination: TerminationReason
    wall_time: float
    iterations: int
    config: RunConfig

    @property
    def lower(self) -> float:
        return self.history[-1].lower

    @property
    def upper(self) -> Optional[float]:
        return self.history[-1].upper

    @property
    def gap(self) -> Optional[float]:
        return self.history[-1].gap

    def to_json(self) -> Dict[str, Any]:
        """The results document. Everything except ``wall_time`` is reproducible from the seed."""
        cfg = self.config
        return {
            "termination": self.termination.value,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "lower": self.lower,
            "upper": self.upper,
            "gap": self.gap,
            "cuts": {str(t): len(pool) for t, pool in sorted(self.pools.items())},
            "config": {
                "n_window": cfg.n_window,
                "alpha": cfg.alpha,
                "tol": cfg.tol,
                "max_iters": cfg.max_iters,
                "seed": cfg.seed,
                "anchor_mode": AnchorMode(cfg.anchor_mode).value,
            },
            "history": [dataclasses.asdict(r) for r in self.history],
        }


def solve_stage(
    model: StageModel,
    pools: Mapping[int, CutPool],
    t: int,
    x_prev: np.ndarray,
    xi: np.ndarray,
    branch: Branch,
    *,
    realization: Optional[int] = None,
    zero_objective: bool = False,
    options: SimplexOptions = SimplexOptions(),
) -> Tuple[LpSubproblem, LpSolution]:
    """
    Solves stage ``t``. The CONTINUE branch carries the epigraph of the stage t+1 pool, when there is one.
    Returns the problem without the epigraph and the solution of the problem actually solved.
    """
    lp = model.stage_lp(t, xi, branch)
    problem = lp.at(x_prev)
    pool = pools.get(t + 1) if branch == Branch.CONTINUE and not zero_objective else None
    if zero_objective:
        problem = dataclasses.replace(problem, c=np.zeros_like(problem.c))

    if pool is not None:
        solution = solve_with_cuts(problem, pool, lp.state_index, options=options)
    else:
        solution = solve(problem, options=options)

    if not solution.is_optimal:
        raise SubproblemInfeasible(stage=t, realization=realization, branch=branch.value, status=solution.status.value)
    return problem, solution


def roll_forward(
    model: StageModel,
    pools: Mapping[int, CutPool],
    trajectory: Trajectory,
    *,
    anchors: bool = True,
    anchor_mode: AnchorMode = AnchorMode.RUNNING_OBJECTIVE,
    options: SimplexOptions = SimplexOptions(),
) -> ForwardResult:
    """
    Rolls the policy given by ``pools`` along ``trajectory``. The realized cost sums the running costs of the living
    stages and the terminal cost at the death stage. With ``anchors`` the pass continues past death to produce
    trial states for every stage; without, it stops at death, which is what policy simulation wants.
    """
    x_prev = model.x0
    states: List[np.ndarray] = []
    decisions: List[np.ndarray] = []
    cost = 0.0
    death = trajectory.horizon
    zero = AnchorMode(anchor_mode) == AnchorMode.ZERO_OBJECTIVE

    for t in range(1, model.t_max + 1):
        xi = trajectory.noise(t)
        j = trajectory.realization(t)
        if t < death:
            problem, solution = solve_stage(
                model, pools, t, x_prev, xi, Branch.CONTINUE, realization=j, options=options
            )
            cost += model.realized_cost(problem, solution.x)
        elif t == death:
            problem, solution = solve_stage(model, pools, t, x_prev, xi, Branch.STOP, realization=j, options=options)
            cost += model.realized_cost(problem, solution.x)
        else:
            problem, solution = solve_stage(
                model, pools, t, x_prev, xi, Branch.CONTINUE, realization=j, zero_objective=zero, options=options
            )

        x_t = model.state(t, solution.x)
        states.append(x_t)
        decisions.append(solution.x[: problem.n_vars].copy())
        x_prev = x_t

        if t == death and not anchors:
            break

    return ForwardResult(states=states, cost=cost, horizon=death, decisions=decisions)


class SddpTsto:
    """
    Solver state: the model, the horizon and noise laws, and one cut pool per stage 2..t_max. Stage t_max + 1 has
    no pool; its cost-to-go is zero.
    """

    hooks: SolverHooks

    def __init__(
        self,
        model: StageModel,
        horizon: HorizonDistribution,
        stages: Sequence[StageDistribution],
        config: Optional[RunConfig] = None,
        *,
        initial_pools: Optional[Mapping[int, CutPool]] = None,
        options: SimplexOptions = SimplexOptions(),
    ):
        check_stages(horizon, stages)
        if model.t_max != horizon.t_max:
            raise InvalidParameter(f"Model has {model.t_max} stages but the horizon law has t_max={horizon.t_max}")
        self.model = model
        self.horizon = horizon
        self.stages = list(stages)
        self.config = config or RunConfig()
        self.config.validate()
        self.options = options
        self.hooks = SolverHooks()
        self.threads = resolve_thread_count(self.config.threads)
        self._executor: Optional[concurrent.futures.ThreadPoolExecutor] = None
        self.pools: Dict[int, CutPool] = {}
        self.reset_pools(initial_pools)

    @property
    def t_max(self) -> int:
        return self.model.t_max

    def reset_pools(self, pools: Optional[Mapping[int, CutPool]] = None):
        if pools is None:
            self.pools = {
                t: CutPool(t, self.model.state_dim, [self.model.initial_cut(t)]) for t in range(2, self.t_max + 1)
            }
            return
        missing = [t for t in range(2, self.t_max + 1) if t not in pools or len(pools[t]) == 0]
        if missing:
            raise InvalidParameter(f"Cut pools are missing or empty for stages {missing}")
        self.pools = {t: pools[t].snapshot() for t in range(2, self.t_max + 1)}

    def add_hook(self, fn: Optional[Callable[[IterationInfo], Any]] = None, *, every: int = 1):
        return self.hooks.add_hook(fn, every=every)

    def solve_stage(
        self,
        t: int,
        x_prev: np.ndarray,
        xi: np.ndarray,
        branch: Branch,
        *,
        realization: Optional[int] = None,
        zero_objective: bool = False,
    ) -> Tuple[LpSubproblem, LpSolution]:
        return solve_stage(
            self.model,
            self.pools,
            t,
            x_prev,
            xi,
            branch,
            realization=realization,
            zero_objective=zero_objective,
            options=self.options,
        )

    def forward_pass(self, trajectory: Trajectory, *, anchors: bool = True) -> ForwardResult:
        return roll_forward(
            self.model,
            self.pools,
            trajectory,
            anchors=anchors,
            anchor_mode=self.config.anchor_mode,
            options=self.options,
        )

    def _map(self, fn, items):
        if self._executor is None:
            return [fn(item) for item in items]
        return list(self._executor.map(fn, items))

    def stage_cut(self, t: int, x_anchor: np.ndarray) -> Cut:
        """The cut for Q_t(., 1) at ``x_anchor`` from both branches of every stage t realization."""
        stage = self.stages[t - 1]
        q_t = float(self.horizon.q[t])

        def solve_realization(j: int):
            xi = stage.support[j]
            out: List[Optional[Tuple[float, np.ndarray]]] = [None, None]
            for slot, branch, active in ((0, Branch.CONTINUE, q_t < 1.0), (1, Branch.STOP, q_t > 0.0)):
                if not active:
                    continue
                _, solution = self.solve_stage(t, x_anchor, xi, branch, realization=j)
                out[slot] = (solution.objective, self.model.subgradient(t, xi, solution, branch))
            return out

        results = self._map(solve_realization, range(stage.num_realizations))

        def gather(slot):
            if results[0][slot] is None:
                return None, None
            return [r[slot][0] for r in results], np.stack([r[slot][1] for r in results])

        cont_vals, cont_grads = gather(0)
        stop_vals, stop_grads = gather(1)
        return assemble_cut(q_t, stage.probs, cont_vals, cont_grads, stop_vals, stop_grads, x_anchor)

    def backward_pass(self, states: Sequence[np.ndarray]) -> List[Cut]:
        """Adds one cut to each pool, from stage t_max down to 2, anchored at the forward states."""
        if len(states) < self.t_max - 1:
            raise InvalidParameter(f"Backward pass needs states for stages 1..{self.t_max - 1}, got {len(states)}")
        cuts = []
        for t in range(self.t_max, 1, -1):
            cut = self.stage_cut(t, states[t - 2])
            self.pools[t].add(cut)
            cuts.append(cut)
        return cuts

    def lower_bound(self) -> float:
        xi = self.stages[0].support[0]
        _, solution = self.solve_stage(1, self.model.x0, xi, Branch.CONTINUE, realization=0)
        return solution.objective

    def first_stage_decision(self) -> np.ndarray:
        xi = self.stages[0].support[0]
        problem, solution = self.solve_stage(1, self.model.x0, xi, Branch.CONTINUE, realization=0)
        return solution.x[: problem.n_vars].copy()

    def run(self, initial_pools: Optional[Mapping[int, CutPool]] = None, *, start_iteration: int = 0) -> RunResult:
        """
        Iterates until the relative gap is within ``tol`` with a full upper-bound window, or ``max_iters``, or the
        time limit. ``start_iteration`` continues the training stream of a warm-started run.
        """
        if initial_pools is not None:
            self.reset_pools(initial_pools)
        config = self.config
        history: List[BoundsRecord] = []
        costs: List[float] = []
        termination: Optional[TerminationReason] = None
        best_lower = -np.inf

        logger.info(
            f"Starting SDDP: t_max={self.t_max}, state_dim={self.model.state_dim}, E[T]={self.horizon.mean():.3f},"
            f" threads={self.threads}"
        )

        with capture_time() as total_time:
            if self.threads > 1:
                self._executor = concurrent.futures.ThreadPoolExecutor(max_workers=self.threads)
            try:
                k = start_iteration
                while termination is None:
                    k += 1
                    with capture_time() as iteration_time:
                        key = iteration_key(config.seed, k, Stream.TRAINING)
                        trajectory = sample_trajectory(key, self.horizon, self.stages)
                        forward = self.forward_pass(trajectory)
                        cuts = self.backward_pass(forward.states)
                        lower = self.lower_bound()

                    if lower < best_lower - 1e-7 * max(1.0, abs(best_lower)):
                        logger.warning(f"Lower bound decreased from {best_lower!r} to {lower!r} at iteration {k}")
                    best_lower = max(best_lower, lower)
                    costs.append(forward.cost)

                    ub = gap = None
                    if len(costs) >= config.n_window:
                        ub = upper_bound(costs[-config.n_window :], config.alpha)
                        gap = relative_gap(ub.value, lower)

                    record = BoundsRecord(
                        iteration=k,
                        cost=forward.cost,
                        lower=lower,
                        horizon=forward.horizon,
                        upper=None if ub is None else ub.value,
                        sigma_hat=None if ub is None else ub.sigma_hat,
                        gap=gap,
                    )
                    history.append(record)

                    iterations_done = k - start_iteration
                    if gap is not None and iterations_done >= config.n_window and gap <= config.tol:
                        termination = TerminationReason.CONVERGED
                    elif iterations_done >= config.max_iters:
                        termination = TerminationReason.MAX_ITERS
                    elif config.time_limit is not None and total_time() >= config.time_limit.total_seconds():
                        termination = TerminationReason.TIME_LIMIT

                    info = IterationInfo(
                        iteration=k,
                        pools=self.pools,
                        record=record,
                        forward=forward,
                        new_cuts=cuts,
                        duration=iteration_time(),
                        elapsed=total_time(),
                        termination=termination,
                    )
                    # the last iteration runs every hook exactly once, regardless of its cadence
                    self.hooks.run_hooks(info, force=termination is not None)
            finally:
                if self._executor is not None:
                    self._executor.shutdown()
                    self._executor = None

        wall_time = total_time()
        assert termination is not None
        logger.info(
            f"SDDP finished after {len(history)} iterations ({termination.value}) in {format_seconds(wall_time)}:"
            f" lower={history[-1].lower:.6g}, upper={history[-1].upper}, gap={history[-1].gap}"
        )
        return RunResult(
            pools=self.pools,
            history=history,
            termination=termination,
            wall_time=wall_time,
            iterations=len(history),
            config=config,
        )


def run(
    model: StageModel,
    horizon: HorizonDistribution,
    stages: Sequence[StageDistribution],
    config: Optional[RunConfig] = None,
    *,
    initial_pools: Optional[Mapping[int, CutPool]] = None,
    hooks: typing.Iterable[Tuple[Callable[[IterationInfo], Any], int]] = (),
) -> RunResult:
    solver = SddpTsto(model, horizon, stages, config, initial_pools=initial_pools)
    for fn, every in hooks:
        solver.add_hook(fn, every=every)
    return solver.run()
