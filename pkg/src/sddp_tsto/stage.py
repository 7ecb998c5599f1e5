"""
Stage subproblems as the solver sees them.

A stage t problem given the incoming state x_{t-1} and noise xi is

    min c.x   s.t.   a_eq x = b_eq0 + jac_eq x_{t-1},   a_ub x <= b_ub0 + jac_ub x_{t-1},   lower <= x <= upper

with the running objective f_t on the CONTINUE branch and the terminal objective fbar_t on the STOP branch. Both
branches share the feasible set.
"""
import abc
import dataclasses
import enum
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from sddp_tsto.cuts import Cut
from sddp_tsto.errors import DimensionMismatch, InvalidParameter
from sddp_tsto.lp import LpSolution, LpSubproblem


class Branch(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclasses.dataclass(frozen=True, eq=False)
class StageLp:
    c: np.ndarray
    a_eq: np.ndarray
    b_eq0: np.ndarray
    jac_eq: np.ndarray
    a_ub: np.ndarray
    b_ub0: np.ndarray
    jac_ub: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    state_index: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_eq(self) -> int:
        return self.b_eq0.shape[0]

    @property
    def n_ub(self) -> int:
        return self.b_ub0.shape[0]

    def at(self, x_prev: np.ndarray) -> LpSubproblem:
        x_prev = np.asarray(x_prev, dtype=np.float64).reshape(-1)
        if x_prev.shape[0] != self.jac_eq.shape[1]:
            raise DimensionMismatch(f"Incoming state has length {x_prev.shape[0]}, expected {self.jac_eq.shape[1]}")
        return LpSubproblem(
            c=self.c,
            a_eq=self.a_eq,
            b_eq=self.b_eq0 + self.jac_eq @ x_prev,
            a_ub=self.a_ub,
            b_ub=self.b_ub0 + self.jac_ub @ x_prev,
            lower=self.lower,
            upper=self.upper,
        )


class StageModel(abc.ABC):
    """
    A multistage problem with a random horizon. Stages are numbered 1..t_max and stage 1 sees ``x0`` as its
    incoming state.
    """

    @property
    @abc.abstractmethod
    def t_max(self) -> int:
        pass

    @property
    @abc.abstractmethod
    def state_dim(self) -> int:
        pass

    @property
    @abc.abstractmethod
    def x0(self) -> np.ndarray:
        pass

    @abc.abstractmethod
    def stage_lp(self, t: int, xi: np.ndarray, branch: Branch) -> StageLp:
        pass

    @abc.abstractmethod
    def initial_cut(self, t: int) -> Cut:
        """An affine function below Q_t(., 1) everywhere on the reachable states."""

    def build_lp(self, t: int, x_prev: np.ndarray, xi: np.ndarray, branch: Branch) -> LpSubproblem:
        return self.stage_lp(t, xi, branch).at(x_prev)

    def subgradient(self, t: int, xi: np.ndarray, solution: LpSolution, branch: Branch) -> np.ndarray:
        """
        Gradient of the optimal value with respect to the incoming state. Only the model's own rows enter; rows
        appended after them (cuts) do not depend on the incoming state.
        """
        lp = self.stage_lp(t, xi, branch)
        y_eq = solution.duals_eq[: lp.n_eq]
        y_ub = solution.duals_ub[: lp.n_ub]
        return lp.jac_eq.T @ y_eq + lp.jac_ub.T @ y_ub

    def state(self, t: int, x_lp: np.ndarray) -> np.ndarray:
        """The outgoing state x_t. Stage LPs put the state variables first, matching ``StageLp.state_index``."""
        return np.asarray(x_lp, dtype=np.float64)[: self.state_dim].copy()

    def realized_cost(self, problem: LpSubproblem, x_lp: np.ndarray) -> float:
        """Stage cost of a decision, not counting any epigraph variable appended to ``x_lp``."""
        return float(problem.c @ np.asarray(x_lp, dtype=np.float64)[: problem.n_vars])


def _per_stage(values, t_max: int, name: str) -> list:
    values = list(values)
    if len(values) != t_max:
        raise DimensionMismatch(f"{name} needs one entry per stage ({t_max}), got {len(values)}")
    return values


class LinearStageModel(StageModel):
    """
    The generic linear model ``A_t x_t + B_t x_{t-1} = xi_t`` with ``x_t >= 0`` and optional extra rows
    ``G_t x_t <= h_t``. The noise is the equality right-hand side; ``c[t-1]`` is the running cost of stage t and
    ``cbar[t-1]`` its terminal cost.
    """

    def __init__(
        self,
        a: Sequence[np.ndarray],
        b: Sequence[np.ndarray],
        c: Sequence[np.ndarray],
        cbar: Sequence[np.ndarray],
        x0: np.ndarray,
        initial_cuts: Mapping[int, Cut],
        *,
        g: Optional[Sequence[np.ndarray]] = None,
        h: Optional[Sequence[np.ndarray]] = None,
        upper: Optional[Sequence[np.ndarray]] = None,
    ):
        t_max = len(a)
        if t_max < 2:
            raise InvalidParameter(f"A multistage model needs at least 2 stages, got {t_max}")
        self._a = [np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in a]
        self._b = [np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in _per_stage(b, t_max, "b")]
        self._c = [np.asarray(v, dtype=np.float64).reshape(-1) for v in _per_stage(c, t_max, "c")]
        self._cbar = [np.asarray(v, dtype=np.float64).reshape(-1) for v in _per_stage(cbar, t_max, "cbar")]
        self._x0 = np.asarray(x0, dtype=np.float64).reshape(-1)

        n = self._a[0].shape[1]
        for t in range(t_max):
            if self._a[t].shape[1] != n or self._b[t].shape != (self._a[t].shape[0], n):
                raise DimensionMismatch(f"Stage {t + 1} has A {self._a[t].shape} and B {self._b[t].shape}")
            if self._c[t].shape[0] != n or self._cbar[t].shape[0] != n:
                raise DimensionMismatch(f"Stage {t + 1} costs must have length {n}")
        if self._x0.shape[0] != n:
            raise DimensionMismatch(f"x0 has length {self._x0.shape[0]}, expected {n}")

        if (g is None) != (h is None):
            raise InvalidParameter("g and h must be given together")
        self._g = [np.zeros((0, n))] * t_max if g is None else [np.atleast_2d(np.asarray(m, float)) for m in g]
        self._h = [np.zeros(0)] * t_max if h is None else [np.asarray(v, float).reshape(-1) for v in h]
        self._upper = [np.full(n, np.inf)] * t_max if upper is None else [np.asarray(v, float) for v in upper]

        missing = [t for t in range(2, t_max + 1) if t not in initial_cuts]
        if missing:
            raise InvalidParameter(f"Initial cuts are missing for stages {missing}")
        self._initial_cuts: Dict[int, Cut] = dict(initial_cuts)
        self._t_max = t_max
        self._n = n

    @property
    def t_max(self) -> int:
        return self._t_max

    @property
    def state_dim(self) -> int:
        return self._n

    @property
    def x0(self) -> np.ndarray:
        return self._x0

    def stage_lp(self, t: int, xi: np.ndarray, branch: Branch) -> StageLp:
        i = t - 1
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        if xi.shape[0] != self._a[i].shape[0]:
            raise DimensionMismatch(f"Stage {t} noise has length {xi.shape[0]}, expected {self._a[i].shape[0]}")
        n = self._n
        return StageLp(
            c=self._c[i] if branch == Branch.CONTINUE else self._cbar[i],
            a_eq=self._a[i],
            b_eq0=xi,
            jac_eq=-self._b[i],
            a_ub=self._g[i],
            b_ub0=self._h[i],
            jac_ub=np.zeros((self._h[i].shape[0], n)),
            lower=np.zeros(n),
            upper=self._upper[i],
            state_index=np.arange(n),
        )

    def initial_cut(self, t: int) -> Cut:
        return self._initial_cuts[t]
