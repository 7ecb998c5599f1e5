"""
Bounded-variable linear programs and a dense revised simplex that returns vertex duals.

Duals follow the "marginal" convention: a dual is the derivative of the optimal objective with respect to the
right-hand side of its row. For ``min c.x`` this makes duals of ``<=`` rows nonpositive.
"""
import dataclasses
import enum
import logging
from typing import TYPE_CHECKING, Optional, Sequence

import fsspec
import numpy as np
import scipy.linalg

from sddp_tsto.errors import DimensionMismatch, InvalidParameter, NumericalFailure


if TYPE_CHECKING:
    from sddp_tsto.cuts import CutPool


logger = logging.getLogger(__name__)


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclasses.dataclass(frozen=True)
class SimplexOptions:
    feasibility_tol: float = 1e-8
    optimality_tol: float = 1e-9
    pivot_tol: float = 1e-11
    relative_pivot_tol: float = 1e-9
    """pivot entries below this fraction of the largest entry in the entering column are never used"""
    degenerate_streak: int = 50
    """after this many consecutive degenerate pivots, switch to Bland's rule until progress resumes"""
    refactor_every: int = 64
    max_pivots: Optional[int] = None
    """None means 20 * (rows + columns) + 1000"""

    def cautious(self) -> "SimplexOptions":
        """Stricter pivoting and more frequent refactoring, used to retry a solve that hit numerical trouble."""
        return dataclasses.replace(
            self,
            relative_pivot_tol=max(self.relative_pivot_tol, 1e-7),
            degenerate_streak=min(self.degenerate_streak, 5),
            refactor_every=min(self.refactor_every, 8),
        )


def _as_matrix(a, rows_hint: int, n: int, name: str) -> np.ndarray:
    if a is None:
        return np.zeros((rows_hint, n))
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1 and a.size == 0:
        a = a.reshape(0, n)
    if a.ndim != 2 or a.shape[1] != n:
        raise DimensionMismatch(f"{name} must have shape (m, {n}), got {a.shape}")
    return a


@dataclasses.dataclass(eq=False)
class LpSubproblem:
    """
    minimize c.x  subject to  a_eq x = b_eq,  a_ub x <= b_ub,  lower <= x <= upper.

    ``lower`` defaults to 0 and may be -inf; ``upper`` defaults to +inf.
    """

    c: np.ndarray
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    a_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        n = self.c.shape[0]
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=np.float64).reshape(-1)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=np.float64).reshape(-1)
        self.a_eq = _as_matrix(self.a_eq, self.b_eq.shape[0], n, "a_eq")
        self.a_ub = _as_matrix(self.a_ub, self.b_ub.shape[0], n, "a_ub")
        if self.a_eq.shape[0] != self.b_eq.shape[0]:
            raise DimensionMismatch(f"a_eq has {self.a_eq.shape[0]} rows but b_eq has {self.b_eq.shape[0]}")
        if self.a_ub.shape[0] != self.b_ub.shape[0]:
            raise DimensionMismatch(f"a_ub has {self.a_ub.shape[0]} rows but b_ub has {self.b_ub.shape[0]}")

        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=np.float64).reshape(-1)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if self.lower.shape[0] != n or self.upper.shape[0] != n:
            raise DimensionMismatch(f"Bounds must have length {n}")

        for name in ("c", "a_eq", "b_eq", "a_ub", "b_ub"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidParameter(f"{name} contains non-finite entries")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise InvalidParameter("Bounds contain NaN")
        if np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise InvalidParameter("Bounds are infeasible by construction")

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_eq(self) -> int:
        return self.b_eq.shape[0]

    @property
    def n_ub(self) -> int:
        return self.b_ub.shape[0]

    def max_violation(self, x: np.ndarray) -> float:
        """Largest primal residual of ``x`` across all constraint families."""
        x = np.asarray(x, dtype=np.float64)
        viol = [0.0]
        if self.n_eq:
            viol.append(float(np.max(np.abs(self.a_eq @ x - self.b_eq))))
        if self.n_ub:
            viol.append(float(np.max(self.a_ub @ x - self.b_ub)))
        viol.append(float(np.max(self.lower - x, initial=0.0)))
        viol.append(float(np.max(x - self.upper, initial=0.0)))
        return max(viol)

    def rhs_scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.b_eq), initial=0.0)), float(np.max(np.abs(self.b_ub), initial=0.0)))

    def to_lp_format(self, name: str = "subproblem") -> str:
        """CPLEX LP style text, handy for cross-checking a subproblem in an external solver."""

        def fmt(v: float) -> str:
            return format(float(v), ".17g")

        def expr(row: np.ndarray) -> str:
            terms = [f"{'+' if v >= 0 else '-'} {fmt(abs(v))} x{j}" for j, v in enumerate(row) if v != 0]
            return " ".join(terms) if terms else "0 x0"

        lines = [f"\\ {name}", "Minimize", f" obj: {expr(self.c)}", "Subject To"]
        for i in range(self.n_eq):
            lines.append(f" e{i}: {expr(self.a_eq[i])} = {fmt(self.b_eq[i])}")
        for i in range(self.n_ub):
            lines.append(f" u{i}: {expr(self.a_ub[i])} <= {fmt(self.b_ub[i])}")
        lines.append("Bounds")
        for j in range(self.n_vars):
            lo, hi = self.lower[j], self.upper[j]
            if lo == -np.inf and hi == np.inf:
                lines.append(f" x{j} free")
            else:
                lo_s = "-inf" if lo == -np.inf else fmt(lo)
                hi_s = "+inf" if hi == np.inf else fmt(hi)
                lines.append(f" {lo_s} <= x{j} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"

    def write_lp(self, path: str, name: str = "subproblem") -> None:
        with fsspec.open(path, "w") as f:
            f.write(self.to_lp_format(name))


@dataclasses.dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective: float
    duals_eq: np.ndarray
    duals_ub: np.ndarray
    reduced_costs: np.ndarray
    iterations: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL

    def dual_objective(self, problem: LpSubproblem) -> float:
        value = float(problem.b_eq @ self.duals_eq + problem.b_ub @ self.duals_ub)
        rc = self.reduced_costs
        bound = np.where(rc > 0, problem.lower, problem.upper)
        bound = np.where(np.isfinite(bound), bound, self.x)
        return value + float(rc @ bound)


def cut_multipliers(solution: LpSolution, n_cuts: int) -> np.ndarray:
    """Convex-combination weights of the cut rows appended by :func:`solve_with_cuts`."""
    if n_cuts == 0:
        return np.zeros(0)
    return -solution.duals_ub[-n_cuts:]


def _failed(problem: LpSubproblem, status: LpStatus, iterations: int) -> LpSolution:
    nan = np.nan
    return LpSolution(
        status=status,
        x=np.full(problem.n_vars, nan),
        objective=np.inf if status == LpStatus.INFEASIBLE else -np.inf,
        duals_eq=np.full(problem.n_eq, nan),
        duals_ub=np.full(problem.n_ub, nan),
        reduced_costs=np.full(problem.n_vars, nan),
        iterations=iterations,
    )


def _inverse(B: np.ndarray) -> Optional[np.ndarray]:
    """None when ``B`` is singular or too ill-conditioned to pivot on."""
    try:
        binv = np.linalg.inv(B)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(binv)) or np.abs(binv).max() * np.abs(B).max() > 1e14:
        return None
    return binv


class _Simplex:
    """
    Revised simplex on ``min cost.x s.t. A x = b, 0 <= x <= upper`` with an explicit basis inverse.
    Nonbasic columns sit at 0 or at their (finite) upper bound.

    ``unit_columns[i]`` is a column equal to plus or minus the i-th unit vector (a slack or an artificial). A singular
    basis is repaired by swapping such columns in for the dependent ones.
    """

    def __init__(
        self,
        A: np.ndarray,
        b: np.ndarray,
        upper: np.ndarray,
        basis: np.ndarray,
        options: SimplexOptions,
        unit_columns: Optional[np.ndarray] = None,
    ):
        self.A = A
        self.b = b
        self.upper = upper.copy()
        self.m, self.ncols = A.shape
        self.basis = basis.copy()
        self.is_basic = np.zeros(self.ncols, dtype=bool)
        self.is_basic[self.basis] = True
        self.at_upper = np.zeros(self.ncols, dtype=bool)
        self.x = np.zeros(self.ncols)
        self.options = options
        self.unit_columns = unit_columns
        self.pivots = 0
        self.repairs = 0
        self.max_pivots = options.max_pivots or 20 * (self.m + self.ncols) + 1000
        self.refactor()

    def refactor(self):
        if self.m == 0:
            self.binv = np.zeros((0, 0))
            return
        B = self.A[:, self.basis]
        binv = _inverse(B)
        if binv is None:
            self._repair_basis(B)
            binv = _inverse(self.A[:, self.basis])
            if binv is None:
                raise NumericalFailure("Simplex basis stayed singular after repair")
            self.binv = binv
            self._recompute_basic_x()
            self._check_basic_feasibility()
        else:
            self.binv = binv
            self._recompute_basic_x()

    def _recompute_basic_x(self):
        nonbasic_x = np.where(self.is_basic, 0.0, self.x)
        self.x[self.basis] = self.binv @ (self.b - self.A @ nonbasic_x)

    def _repair_basis(self, B: np.ndarray):
        """Keeps a maximal independent set of basic columns and fills the other slots with unit columns."""
        if self.unit_columns is None:
            raise NumericalFailure("Simplex basis became singular")
        _, r, perm = scipy.linalg.qr(B, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > diag[0] * self.m * 1e-12)) if diag.size and diag[0] > 0 else 0
        dependent_slots = perm[rank:]

        if rank:
            q, _ = np.linalg.qr(self.A[:, self.basis[perm[:rank]]], mode="complete")
            complement = q[:, rank:]
        else:
            complement = np.eye(self.m)
        # rows where the kept columns leave the most room are the ones a unit column completes best
        _, _, row_order = scipy.linalg.qr(complement.T, mode="economic", pivoting=True)

        for slot, row in zip(dependent_slots, row_order[: self.m - rank]):
            entering = int(self.unit_columns[row])
            if self.is_basic[entering]:
                raise NumericalFailure(f"Cannot repair the simplex basis: row {row} is already covered")
            leaving = self.basis[slot]
            self.is_basic[leaving] = False
            ub = self.upper[leaving]
            self.at_upper[leaving] = bool(np.isfinite(ub) and self.x[leaving] > ub / 2)
            self.x[leaving] = self.upper[leaving] if self.at_upper[leaving] else 0.0
            self.basis[slot] = entering
            self.is_basic[entering] = True
            self.at_upper[entering] = False

        self.repairs += 1
        logger.warning(f"Repaired a singular simplex basis: swapped in {dependent_slots.size} unit column(s)")

    def _check_basic_feasibility(self):
        x_b = self.x[self.basis]
        tol = self.options.feasibility_tol * max(1.0, float(np.max(np.abs(self.b), initial=0.0)))
        if np.any(x_b < -tol) or np.any(x_b > self.upper[self.basis] + tol):
            raise NumericalFailure("Repaired simplex basis is not primal feasible")

    def duals(self, cost: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        return cost[self.basis] @ self.binv

    def run(self, cost: np.ndarray, eligible: np.ndarray) -> LpStatus:
        opts = self.options
        degenerate = 0
        since_refactor = 0

        while True:
            if self.pivots >= self.max_pivots:
                raise NumericalFailure(f"Simplex exhausted its pivot limit ({self.max_pivots})")

            y = self.duals(cost)
            d = cost - y @ self.A if self.m else cost.copy()

            candidates = eligible & ~self.is_basic
            from_lower = candidates & ~self.at_upper & (d < -opts.optimality_tol)
            from_upper = candidates & self.at_upper & (d > opts.optimality_tol)
            improving = from_lower | from_upper
            if not improving.any():
                return LpStatus.OPTIMAL

            if degenerate >= opts.degenerate_streak:
                q = int(np.flatnonzero(improving)[0])
            else:
                q = int(np.argmax(np.where(improving, np.abs(d), -1.0)))
            direction = 1.0 if from_lower[q] else -1.0

            alpha = self.binv @ self.A[:, q] if self.m else np.zeros(0)
            rate = -direction * alpha

            step = self.upper[q]
            leave_row = -1
            leave_to_upper = False
            if self.m:
                x_b = self.x[self.basis]
                ub_b = self.upper[self.basis]
                pivot_tol = max(opts.pivot_tol, opts.relative_pivot_tol * float(np.max(np.abs(alpha))))
                dec = rate < -pivot_tol
                inc = (rate > pivot_tol) & np.isfinite(ub_b)

                # two passes: the largest step allowed with bounds relaxed by the feasibility tolerance,
                # then the largest pivot among rows that block within it
                relaxed = np.full(self.m, np.inf)
                relaxed[dec] = np.maximum(x_b[dec] + opts.feasibility_tol, 0.0) / -rate[dec]
                relaxed[inc] = np.maximum(ub_b[inc] - x_b[inc] + opts.feasibility_tol, 0.0) / rate[inc]
                bound = float(relaxed.min())
                if bound < step:
                    limits = np.full(self.m, np.inf)
                    limits[dec] = np.maximum(x_b[dec], 0.0) / -rate[dec]
                    limits[inc] = np.maximum(ub_b[inc] - x_b[inc], 0.0) / rate[inc]
                    ties = np.flatnonzero(limits <= bound)
                    if degenerate >= opts.degenerate_streak:
                        leave_row = int(ties[np.argmin(self.basis[ties])])
                    else:
                        leave_row = int(ties[np.argmax(np.abs(alpha[ties]))])
                    leave_to_upper = bool(inc[leave_row])
                    step = float(limits[leave_row])

            if step == np.inf:
                return LpStatus.UNBOUNDED

            self.x[q] += direction * step
            if self.m:
                self.x[self.basis] += rate * step

            if leave_row < 0:
                # bound flip, basis unchanged
                self.at_upper[q] = not self.at_upper[q]
                self.x[q] = self.upper[q] if self.at_upper[q] else 0.0
            else:
                leaving = self.basis[leave_row]
                self._pivot(leave_row, q, alpha)
                self.at_upper[leaving] = leave_to_upper
                self.x[leaving] = self.upper[leaving] if leave_to_upper else 0.0
                self.at_upper[q] = False
                since_refactor += 1

            self.pivots += 1
            degenerate = degenerate + 1 if step <= opts.feasibility_tol else 0

            if since_refactor >= opts.refactor_every:
                self.refactor()
                since_refactor = 0

    def _pivot(self, row: int, q: int, alpha: np.ndarray):
        leaving = self.basis[row]
        pivot_row = self.binv[row] / alpha[row]
        self.binv -= np.outer(alpha, pivot_row)
        self.binv[row] = pivot_row
        self.basis[row] = q
        self.is_basic[leaving] = False
        self.is_basic[q] = True

    def drive_out(self, artificial: np.ndarray, eligible: np.ndarray) -> None:
        """Swaps zero-level artificial columns out of the basis where some structural column can take their place."""
        for row in range(self.m):
            if not artificial[self.basis[row]]:
                continue
            candidates = np.flatnonzero(eligible & ~self.is_basic)
            if candidates.size == 0:
                return
            entries = self.binv[row] @ self.A[:, candidates]
            k = int(np.argmax(np.abs(entries)))
            if abs(entries[k]) <= 1e-9:
                continue  # redundant row; the artificial stays basic, pinned at zero
            q = int(candidates[k])
            leaving = self.basis[row]
            alpha = self.binv @ self.A[:, q]
            self._pivot(row, q, alpha)
            self.x[leaving] = 0.0
            self.at_upper[leaving] = False


def solve(problem: LpSubproblem, *, options: SimplexOptions = SimplexOptions()) -> LpSolution:
    """
    Solve ``problem`` with a two-phase bounded-variable revised simplex. A solve that runs into numerical trouble
    is retried once from scratch with [SimplexOptions.cautious][] settings.

    Raises:
        NumericalFailure: if the retry also exhausts its pivot limit or ends with an unrepairable basis
    """
    try:
        return _solve(problem, options)
    except NumericalFailure as e:
        cautious = options.cautious()
        if cautious == options:
            raise
        logger.warning(f"{e}; solving again with cautious pivoting")
        return _solve(problem, cautious)


def _solve(problem: LpSubproblem, options: SimplexOptions) -> LpSolution:
    n = problem.n_vars
    lo, hi = problem.lower, problem.upper
    if np.any(hi - lo < -options.feasibility_tol):
        return _failed(problem, LpStatus.INFEASIBLE, 0)

    # x = shift + T x', with 0 <= x' <= ub'
    columns = []
    signs = []
    shift = np.zeros(n)
    ub_std = []
    for j in range(n):
        if np.isfinite(lo[j]):
            shift[j] = lo[j]
            columns.append(j)
            signs.append(1.0)
            ub_std.append(max(hi[j] - lo[j], 0.0))
        elif np.isfinite(hi[j]):
            shift[j] = hi[j]
            columns.append(j)
            signs.append(-1.0)
            ub_std.append(np.inf)
        else:
            columns.extend([j, j])
            signs.extend([1.0, -1.0])
            ub_std.extend([np.inf, np.inf])
    n_std = len(columns)
    T = np.zeros((n, n_std))
    T[columns, np.arange(n_std)] = signs

    m_eq, m_ub = problem.n_eq, problem.n_ub
    m = m_eq + m_ub
    A_struct = np.vstack([problem.a_eq, problem.a_ub]) @ T if m else np.zeros((0, n_std))
    b = np.concatenate([problem.b_eq, problem.b_ub])
    if m:
        b = b - np.vstack([problem.a_eq, problem.a_ub]) @ shift
    slack_block = np.vstack([np.zeros((m_eq, m_ub)), np.eye(m_ub)])
    A = np.hstack([A_struct, slack_block])

    row_sign = np.where(b < 0, -1.0, 1.0)
    A = A * row_sign[:, None]
    b = b * row_sign

    # slacks of rows that kept their sign start basic; every other row gets an artificial column
    needs_art = np.ones(m, dtype=bool)
    basis = np.full(m, -1, dtype=np.int64)
    for i in range(m_ub):
        row = m_eq + i
        if row_sign[row] > 0:
            basis[row] = n_std + i
            needs_art[row] = False
    art_rows = np.flatnonzero(needs_art)
    n_art = art_rows.size
    art_block = np.zeros((m, n_art))
    art_block[art_rows, np.arange(n_art)] = 1.0
    A = np.hstack([A, art_block])
    first_art = n_std + m_ub
    basis[art_rows] = first_art + np.arange(n_art)

    ncols = A.shape[1]
    upper = np.concatenate([np.asarray(ub_std, dtype=np.float64), np.full(m_ub, np.inf), np.full(n_art, np.inf)])
    artificial = np.zeros(ncols, dtype=bool)
    artificial[first_art:] = True

    unit_columns = np.empty(m, dtype=np.int64)
    unit_columns[art_rows] = first_art + np.arange(n_art)
    unit_columns[m_eq:] = n_std + np.arange(m_ub)

    simplex = _Simplex(A, b, upper, basis, options, unit_columns)

    if n_art:
        phase1_cost = artificial.astype(np.float64)
        simplex.run(phase1_cost, np.ones(ncols, dtype=bool))
        infeasibility = float(simplex.x[artificial].sum())
        if infeasibility > options.feasibility_tol * max(1.0, float(np.max(np.abs(b), initial=0.0))):
            logger.debug(f"Phase 1 ended with infeasibility {infeasibility:.3e}")
            return _failed(problem, LpStatus.INFEASIBLE, simplex.pivots)
        simplex.upper[artificial] = 0.0
        simplex.drive_out(artificial, ~artificial)
        simplex.refactor()

    cost = np.concatenate([T.T @ problem.c, np.zeros(m_ub + n_art)])
    status = simplex.run(cost, ~artificial)
    if status == LpStatus.UNBOUNDED:
        return _failed(problem, LpStatus.UNBOUNDED, simplex.pivots)

    simplex.refactor()
    x_std = np.clip(simplex.x[:n_std], 0.0, simplex.upper[:n_std])
    x = shift + T @ x_std
    x = np.clip(x, lo, hi)

    y = simplex.duals(cost) * row_sign
    duals_eq = y[:m_eq]
    duals_ub = np.minimum(y[m_eq:], 0.0)
    reduced = problem.c - problem.a_eq.T @ duals_eq - problem.a_ub.T @ duals_ub

    return LpSolution(
        status=LpStatus.OPTIMAL,
        x=x,
        objective=float(problem.c @ x),
        duals_eq=duals_eq,
        duals_ub=duals_ub,
        reduced_costs=reduced,
        iterations=simplex.pivots,
    )


def with_cuts(problem: LpSubproblem, pool: "CutPool", state_index: Sequence[int]) -> LpSubproblem:
    """
    Epigraph reformulation: adds a free variable phi (last column, cost 1) and one row
    ``beta.x[state_index] - phi <= -theta`` per cut.
    """
    theta, beta = pool.coefficients()
    state_index = np.asarray(state_index, dtype=np.int64)
    if beta.shape[1] != state_index.shape[0]:
        raise DimensionMismatch(f"Cuts act on {beta.shape[1]} states but state_index has {state_index.shape[0]}")

    n = problem.n_vars
    k = theta.shape[0]
    cut_rows = np.zeros((k, n + 1))
    cut_rows[:, state_index] = beta
    cut_rows[:, n] = -1.0

    return LpSubproblem(
        c=np.append(problem.c, 1.0),
        a_eq=np.hstack([problem.a_eq, np.zeros((problem.n_eq, 1))]),
        b_eq=problem.b_eq,
        a_ub=np.vstack([np.hstack([problem.a_ub, np.zeros((problem.n_ub, 1))]), cut_rows]),
        b_ub=np.concatenate([problem.b_ub, -theta]),
        lower=np.append(problem.lower, -np.inf),
        upper=np.append(problem.upper, np.inf),
    )


def solve_with_cuts(
    problem: LpSubproblem, pool: "CutPool", state_index: Sequence[int], *, options: SimplexOptions = SimplexOptions()
) -> LpSolution:
    """
    Solves ``min c.x + phi`` with ``phi >= theta_j + beta_j . x[state_index]`` for every cut in ``pool``.
    The returned ``x`` has phi appended, and the cut-row duals trail ``duals_ub``.
    """
    if len(pool) == 0:
        raise InvalidParameter(f"Cut pool for stage {pool.stage} is empty")
    return solve(with_cuts(problem, pool, state_index), options=options)
