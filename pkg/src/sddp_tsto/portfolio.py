"""
Portfolio selection with proportional transaction costs over a random number of periods.

There are ``n`` risky assets plus cash (component ``n``). At stage t the holdings carried in, ``x_prev``, earn the
returns ``xi_t``. The investor then sells ``y`` and buys ``z`` of each risky asset, paying ``eta`` per unit sold
and ``nu`` per unit bought out of cash. When the horizon ends at stage T the payoff is the expected wealth one
period ahead, ``E[xi_{T+1}] . x_T``. Costs are negated incomes, so the solver minimizes.
"""
import dataclasses
import logging
from typing import Any, Dict, List, Optional, Sequence

import jax
import numpy as np

from sddp_tsto.cuts import Cut
from sddp_tsto.errors import DimensionMismatch, InvalidParameter, NumericalFailure
from sddp_tsto.lp import LpSolution, LpSubproblem
from sddp_tsto.scenario import (
    HorizonDistribution,
    StageDistribution,
    horizon_from_json,
    horizon_to_json,
    truncated_exponential_horizon,
)
from sddp_tsto.stage import Branch, StageLp, StageModel


logger = logging.getLogger(__name__)

RETURN_STD = 0.02
RF_TOLERANCE = 1e-12


@dataclasses.dataclass(frozen=True, eq=False)
class PortfolioInstance:
    n: int
    t_max: int
    rf_rate: float
    stages: List[StageDistribution]
    """noise laws of stages 1..t_max; each realization has n risky returns followed by the risk-free return"""
    mean_returns: np.ndarray
    """(t_max + 2, n + 1); row t is E[xi_t] and row t_max + 1 is the period after the last stage"""
    eta: np.ndarray
    """(t_max + 1, n) selling costs, row t for stage t"""
    nu: np.ndarray
    """(t_max + 1, n) buying costs, row t for stage t"""
    u: np.ndarray
    x0: np.ndarray
    horizon: HorizonDistribution

    def __post_init__(self):
        n, t_max = self.n, self.t_max
        for name in ("mean_returns", "eta", "nu", "u", "x0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "stages", list(self.stages))

        if n < 1:
            raise InvalidParameter(f"Need at least one risky asset, got n={n}")
        if len(self.stages) != t_max:
            raise DimensionMismatch(f"Expected {t_max} stage laws, got {len(self.stages)}")
        if self.horizon.t_max != t_max:
            raise DimensionMismatch(f"Horizon has t_max={self.horizon.t_max}, instance has {t_max}")
        if self.mean_returns.shape != (t_max + 2, n + 1):
            raise DimensionMismatch(f"mean_returns must be {(t_max + 2, n + 1)}, got {self.mean_returns.shape}")
        for name in ("eta", "nu"):
            arr = getattr(self, name)
            if arr.shape != (t_max + 1, n):
                raise DimensionMismatch(f"{name} must be {(t_max + 1, n)}, got {arr.shape}")
            if np.any(arr[1:] <= 0):
                raise InvalidParameter(f"Transaction costs {name} must be positive")
        if self.u.shape != (n,) or np.any(self.u <= 0) or np.any(self.u > 1):
            raise InvalidParameter(f"Position bounds must be an (n,) vector in (0, 1], got {self.u}")
        if self.x0.shape != (n + 1,) or np.any(self.x0 < 0):
            raise InvalidParameter(f"x0 must be a nonnegative ({n + 1},) vector")
        if not self.rf_rate > 0:
            raise InvalidParameter(f"Risk-free rate must be positive, got {self.rf_rate}")

        for t, stage in enumerate(self.stages, start=1):
            if stage.dim != n + 1:
                raise DimensionMismatch(f"Stage {t} returns have dimension {stage.dim}, expected {n + 1}")
            if np.any(stage.support <= 0):
                raise InvalidParameter(f"Stage {t} has nonpositive returns")
            if np.any(np.abs(stage.support[:, n] - self.rf_rate) > RF_TOLERANCE):
                raise InvalidParameter(f"Stage {t} risk-free returns differ from {self.rf_rate}")
        if np.any(self.mean_returns[1:] <= 0):
            raise InvalidParameter("Mean returns must be positive")

    def mean_next_return(self, t: int) -> np.ndarray:
        """E[xi_{t+1}], the valuation of holdings if the horizon ends at stage t."""
        return self.mean_returns[t + 1]

    def with_horizon(self, horizon: HorizonDistribution) -> "PortfolioInstance":
        return dataclasses.replace(self, horizon=horizon)


@dataclasses.dataclass(frozen=True, eq=False)
class StageDecision:
    x: np.ndarray
    """holdings after rebalancing, cash last"""
    y: np.ndarray
    """amount of each risky asset sold"""
    z: np.ndarray
    """amount of each risky asset bought"""

    @staticmethod
    def from_lp_x(n: int, x_lp: np.ndarray) -> "StageDecision":
        x_lp = np.asarray(x_lp, dtype=np.float64)
        if x_lp.shape[0] < 3 * n + 1:
            raise DimensionMismatch(f"A stage solution needs at least {3 * n + 1} entries, got {x_lp.shape[0]}")
        return StageDecision(
            x=x_lp[: n + 1].copy(), y=x_lp[n + 1 : 2 * n + 1].copy(), z=x_lp[2 * n + 1 : 3 * n + 1].copy()
        )

    def wealth_leak(self, instance: PortfolioInstance, t: int, x_prev: np.ndarray, xi: np.ndarray) -> float:
        """Deviation from self-financing: sum(x) - (sum(xi * x_prev) - sum(eta y + nu z))."""
        spent = float(instance.eta[t] @ self.y + instance.nu[t] @ self.z)
        return float(self.x.sum() - (np.asarray(xi) @ np.asarray(x_prev) - spent))

    def check(self, instance: PortfolioInstance, t: int, x_prev: np.ndarray, xi: np.ndarray, tol: float) -> None:
        """
        Raises NumericalFailure unless the cash balance, the holdings balances and the position caps hold
        within ``tol`` (relative to the incoming wealth).
        """
        n = instance.n
        xi = np.asarray(xi, dtype=np.float64)
        carried = xi * np.asarray(x_prev, dtype=np.float64)
        scale = max(1.0, float(np.abs(carried).sum()))

        holdings = np.max(np.abs(self.x[:n] + self.y - self.z - carried[:n]), initial=0.0)
        cash_in = (1.0 - instance.eta[t]) @ self.y - (1.0 + instance.nu[t]) @ self.z
        cash = abs(self.x[n] - cash_in - carried[n])
        caps = np.max(self.x[:n] - instance.u * carried.sum(), initial=0.0)
        worst = max(float(holdings), float(cash), float(caps))
        if worst > tol * scale:
            raise NumericalFailure(
                f"Stage {t} decision violates its constraints by {worst:.3e} (holdings {holdings:.3e},"
                f" cash {cash:.3e}, caps {caps:.3e})"
            )


def portfolio_stage_lp(instance: PortfolioInstance, t: int, xi: np.ndarray, branch: Branch) -> StageLp:
    """
    Variables are [x (n + 1), y (n), z (n)].

    Equality rows: ``x_i + y_i - z_i = xi_i x_prev_i`` for each risky asset, then the cash balance
    ``x_n - sum((1 - eta) y) + sum((1 + nu) z) = xi_n x_prev_n``.
    Inequality rows: ``y_i <= xi_i x_prev_i`` (no short sales), then ``x_i <= u_i sum_j xi_j x_prev_j``.
    """
    n = instance.n
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    if xi.shape[0] != n + 1:
        raise DimensionMismatch(f"Returns have length {xi.shape[0]}, expected {n + 1}")
    nv = 3 * n + 1
    risky = np.arange(n)
    y_cols = n + 1 + risky
    z_cols = 2 * n + 1 + risky

    a_eq = np.zeros((n + 1, nv))
    a_eq[risky, risky] = 1.0
    a_eq[risky, y_cols] = 1.0
    a_eq[risky, z_cols] = -1.0
    a_eq[n, n] = 1.0
    a_eq[n, y_cols] = -(1.0 - instance.eta[t])
    a_eq[n, z_cols] = 1.0 + instance.nu[t]

    a_ub = np.zeros((2 * n, nv))
    a_ub[risky, y_cols] = 1.0
    a_ub[n + risky, risky] = 1.0
    jac_ub = np.zeros((2 * n, n + 1))
    jac_ub[risky, risky] = xi[:n]
    jac_ub[n:, :] = np.outer(instance.u, xi)

    c = np.zeros(nv)
    if branch == Branch.STOP:
        c[: n + 1] = -instance.mean_next_return(t)

    return StageLp(
        c=c,
        a_eq=a_eq,
        b_eq0=np.zeros(n + 1),
        jac_eq=np.diag(xi),
        a_ub=a_ub,
        b_ub0=np.zeros(2 * n),
        jac_ub=jac_ub,
        lower=np.zeros(nv),
        upper=np.full(nv, np.inf),
        state_index=np.arange(n + 1),
    )


def build_stage_lp(
    instance: PortfolioInstance, t: int, x_prev: np.ndarray, xi: np.ndarray, branch: Branch
) -> LpSubproblem:
    return portfolio_stage_lp(instance, t, xi, branch).at(x_prev)


def cut_coeffs_from_duals(
    instance: PortfolioInstance, t: int, xi: np.ndarray, solution: LpSolution, branch: Branch
) -> np.ndarray:
    """
    Gradient of the stage value with respect to ``x_prev``: ``(lam - (u . delta) 1 - [mu; 0]) * xi``, where ``lam``
    are the balance-row duals, ``mu >= 0`` the no-short-sale multipliers and ``delta >= 0`` the position-cap
    multipliers.
    """
    n = instance.n
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    if xi.shape[0] != n + 1 or solution.duals_eq.shape[0] < n + 1 or solution.duals_ub.shape[0] < 2 * n:
        raise DimensionMismatch(
            f"Expected {n + 1} returns, {n + 1} balance duals and {2 * n} inequality duals, got {xi.shape[0]},"
            f" {solution.duals_eq.shape[0]} and {solution.duals_ub.shape[0]}"
        )
    lam = solution.duals_eq[: n + 1]
    mu = -solution.duals_ub[:n]
    delta = -solution.duals_ub[n : 2 * n]
    coeff = lam - float(instance.u @ delta)
    coeff[:n] -= mu
    return coeff * xi


def growth_bound(instance: PortfolioInstance) -> float:
    """An upper bound on terminal wealth per unit of initial holdings along any path."""
    best_mean = float(np.max(instance.mean_returns[2:]))
    growth = 1.0
    for stage in instance.stages[1:]:
        growth *= max(1.0, float(np.max(stage.support)))
    return best_mean * growth


class PortfolioStageModel(StageModel):
    def __init__(self, instance: PortfolioInstance):
        self.instance = instance
        self._initial_slope = growth_bound(instance)

    @property
    def t_max(self) -> int:
        return self.instance.t_max

    @property
    def state_dim(self) -> int:
        return self.instance.n + 1

    @property
    def x0(self) -> np.ndarray:
        return self.instance.x0

    def stage_lp(self, t: int, xi: np.ndarray, branch: Branch) -> StageLp:
        return portfolio_stage_lp(self.instance, t, xi, branch)

    def subgradient(self, t: int, xi: np.ndarray, solution: LpSolution, branch: Branch) -> np.ndarray:
        return cut_coeffs_from_duals(self.instance, t, xi, solution, branch)

    def initial_cut(self, t: int) -> Cut:
        return Cut(theta=0.0, beta=np.full(self.state_dim, -self._initial_slope))


def return_means(n: int, t_max: int) -> np.ndarray:
    """(t_max + 2, n) matrix of per-stage means; row 0 is unused."""
    means = np.zeros((t_max + 2, n))
    half = n // 2
    stages = np.arange(t_max + 2)
    means[:, :half] = np.where(stages <= 4, 1.06, 1.04)[:, None]
    means[:, half:] = 1.05
    means[0] = 0.0
    return means


def generate_instance(
    n: int,
    t_max: int,
    m_realizations: int,
    lam: float,
    costs: float,
    rf_rate: float,
    seed: int,
) -> PortfolioInstance:
    """
    Random instance: risky returns are Normal(mean, 0.02) with the means of :func:`return_means`, stage 1 returns
    are a single draw, stages 2..t_max+1 have ``m_realizations`` equally likely draws, and initial holdings are
    uniform on [0, 1000]. The horizon is the truncated exponential law with rate ``lam``.
    """
    if n < 2 or n % 2 != 0:
        raise InvalidParameter(f"n must be a positive even number, got {n}")
    if m_realizations < 1:
        raise InvalidParameter(f"Need at least one realization per stage, got {m_realizations}")
    if not rf_rate > 0:
        raise InvalidParameter(f"Risk-free rate must be positive, got {rf_rate}")
    if not costs > 0:
        raise InvalidParameter(f"Transaction costs must be positive, got {costs}")
    horizon = truncated_exponential_horizon(lam, t_max)

    means = return_means(n, t_max)
    key = jax.random.PRNGKey(seed)
    k_first, k_returns, k_x0 = jax.random.split(key, 3)
    stage_keys = jax.random.split(k_returns, t_max + 2)

    def draw(k, t, count):
        noise = np.asarray(jax.random.normal(k, (count, n)), dtype=np.float64)
        risky = means[t][None, :] + RETURN_STD * noise
        return np.hstack([risky, np.full((count, 1), rf_rate)])

    stages = [StageDistribution.deterministic(draw(k_first, 1, 1)[0])]
    mean_returns = np.zeros((t_max + 2, n + 1))
    mean_returns[1] = stages[0].support[0]
    for t in range(2, t_max + 2):
        law = StageDistribution.uniform(draw(stage_keys[t], t, m_realizations))
        mean_returns[t] = law.mean()
        if t <= t_max:
            stages.append(law)

    x0 = np.asarray(jax.random.uniform(k_x0, (n + 1,), minval=0.0, maxval=1000.0), dtype=np.float64)
    cost_matrix = np.full((t_max + 1, n), float(costs))
    instance = PortfolioInstance(
        n=n,
        t_max=t_max,
        rf_rate=float(rf_rate),
        stages=stages,
        mean_returns=mean_returns,
        eta=cost_matrix,
        nu=cost_matrix.copy(),
        u=np.ones(n),
        x0=x0,
        horizon=horizon,
    )
    logger.info(f"Generated instance n={n}, t_max={t_max}, M={m_realizations}, costs={costs}, seed={seed}")
    return instance


def cash_only_instance(
    t_max: int = 3,
    horizon: Optional[HorizonDistribution] = None,
    *,
    n: int = 2,
    wealth: float = 100.0,
    rf_rate: float = 1.02,
    risky_support: Sequence[float] = (0.95, 0.99),
    costs: float = 0.01,
) -> PortfolioInstance:
    """
    All wealth starts in cash and every risky return is below the risk-free rate, so the optimal policy never
    trades and the optimal value is ``-wealth * E[rf_rate ** (T + 1)]``.
    """
    if max(risky_support) >= rf_rate:
        raise InvalidParameter("Risky returns must stay below the risk-free rate")
    horizon = horizon or HorizonDistribution.fixed(t_max)
    support = np.array([[r] * n + [rf_rate] for r in risky_support])
    law = StageDistribution.uniform(support)
    first = StageDistribution.deterministic(support[0])
    mean_returns = np.zeros((t_max + 2, n + 1))
    mean_returns[1:] = law.mean()
    x0 = np.zeros(n + 1)
    x0[n] = wealth
    return PortfolioInstance(
        n=n,
        t_max=t_max,
        rf_rate=rf_rate,
        stages=[first] + [law] * (t_max - 1),
        mean_returns=mean_returns,
        eta=np.full((t_max + 1, n), costs),
        nu=np.full((t_max + 1, n), costs),
        u=np.ones(n),
        x0=x0,
        horizon=horizon,
    )


def instance_to_json(instance: PortfolioInstance) -> Dict[str, Any]:
    return {
        "n": instance.n,
        "t_max": instance.t_max,
        "rf_rate": instance.rf_rate,
        "horizon": horizon_to_json(instance.horizon, instance.stages),
        "mean_returns": instance.mean_returns.tolist(),
        "eta": instance.eta.tolist(),
        "nu": instance.nu.tolist(),
        "u": instance.u.tolist(),
        "x0": instance.x0.tolist(),
    }


def instance_from_json(doc: Dict[str, Any]) -> PortfolioInstance:
    horizon, stages = horizon_from_json(doc["horizon"])
    return PortfolioInstance(
        n=int(doc["n"]),
        t_max=int(doc["t_max"]),
        rf_rate=float(doc["rf_rate"]),
        stages=stages,
        mean_returns=np.asarray(doc["mean_returns"]),
        eta=np.asarray(doc["eta"]),
        nu=np.asarray(doc["nu"]),
        u=np.asarray(doc["u"]),
        x0=np.asarray(doc["x0"]),
        horizon=horizon,
    )
