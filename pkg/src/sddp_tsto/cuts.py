"""Polyhedral lower approximations of the stage cost-to-go functions."""
import dataclasses
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sddp_tsto.errors import DimensionMismatch, InvalidParameter


logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class Cut:
    """The affine function ``x -> theta + beta . x``."""

    theta: float
    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        theta = float(self.theta)
        if not np.isfinite(theta) or not np.all(np.isfinite(beta)):
            raise InvalidParameter(f"Cut coefficients must be finite, got theta={theta}, beta={beta}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self) -> int:
        return self.beta.shape[0]

    def value(self, x: np.ndarray) -> float:
        return self.theta + float(self.beta @ np.asarray(x, dtype=np.float64))


class CutPool:
    """
    Q_t(x, 1) >= max_j theta_j + beta_j . x. Cuts are only ever appended, in the order they were generated.
    """

    def __init__(self, stage: int, dim: int, cuts: Sequence[Cut] = ()):
        self.stage = stage
        self.dim = dim
        self._cuts: List[Cut] = []
        for cut in cuts:
            self.add(cut)

    @property
    def cuts(self) -> Tuple[Cut, ...]:
        return tuple(self._cuts)

    def __len__(self) -> int:
        return len(self._cuts)

    def __repr__(self):
        return f"CutPool(stage={self.stage}, dim={self.dim}, cuts={len(self)})"

    def add(self, cut: Cut) -> None:
        if cut.dim != self.dim:
            raise DimensionMismatch(f"Cut has dimension {cut.dim} but stage {self.stage} states have {self.dim}")
        self._cuts.append(cut)

    def coefficients(self) -> Tuple[np.ndarray, np.ndarray]:
        """Stacked intercepts (K,) and slopes (K, dim)."""
        if not self._cuts:
            return np.zeros(0), np.zeros((0, self.dim))
        theta = np.array([c.theta for c in self._cuts])
        beta = np.stack([c.beta for c in self._cuts])
        return theta, beta

    def evaluate(self, x: np.ndarray) -> float:
        return evaluate(self, x)

    def evaluate_many(self, xs: np.ndarray) -> np.ndarray:
        """Pool value at each row of ``xs``."""
        if not self._cuts:
            raise InvalidParameter(f"Cut pool for stage {self.stage} is empty")
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        theta, beta = self.coefficients()
        return np.max(theta[None, :] + xs @ beta.T, axis=1)

    def snapshot(self) -> "CutPool":
        """A copy that later :meth:`add` calls on this pool do not affect."""
        return CutPool(self.stage, self.dim, self._cuts)


def evaluate(pool: CutPool, x: np.ndarray) -> float:
    return float(pool.evaluate_many(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def _branch_sums(probs: np.ndarray, vals, grads, dim: int) -> Tuple[float, np.ndarray, np.ndarray]:
    vals = np.asarray(vals, dtype=np.float64).reshape(-1)
    grads = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    if vals.shape[0] != probs.shape[0] or grads.shape != (probs.shape[0], dim):
        raise DimensionMismatch(
            f"Expected {probs.shape[0]} values and a ({probs.shape[0]}, {dim}) gradient block, "
            f"got {vals.shape} and {grads.shape}"
        )
    return float(probs @ vals), probs @ grads, grads


def assemble_cut(
    q_t: float,
    probs: Sequence[float],
    continue_vals: Optional[Sequence[float]],
    continue_grads: Optional[np.ndarray],
    stop_vals: Optional[Sequence[float]],
    stop_grads: Optional[np.ndarray],
    x_anchor: np.ndarray,
) -> Cut:
    """
    Averages the per-realization supporting hyperplanes of both branches into one cut for Q_t(., 1):

        beta  = (1 - q_t) sum_j p_j beta_j + q_t sum_j p_j gamma_j
        theta = (1 - q_t) sum_j p_j (v_j - beta_j . x) + q_t sum_j p_j (w_j - gamma_j . x)

    where ``x`` is the anchor the subproblems were solved at. A branch with zero weight may be passed as None.
    """
    if not 0.0 <= q_t <= 1.0:
        raise InvalidParameter(f"Transition probability must lie in [0, 1], got {q_t}")
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    x_anchor = np.asarray(x_anchor, dtype=np.float64).reshape(-1)
    dim = x_anchor.shape[0]

    value = 0.0
    beta = np.zeros(dim)
    for weight, vals, grads in ((1.0 - q_t, continue_vals, continue_grads), (q_t, stop_vals, stop_grads)):
        if vals is None or grads is None:
            if weight > 0.0:
                raise InvalidParameter(f"A branch with weight {weight} is missing its subproblem results")
            continue
        mean_val, mean_grad, _ = _branch_sums(probs, vals, grads, dim)
        value += weight * mean_val
        beta += weight * mean_grad

    return Cut(theta=value - float(beta @ x_anchor), beta=beta)


def pool_to_json(pool: CutPool) -> Dict[str, Any]:
    return {"stage": pool.stage, "cuts": [{"theta": c.theta, "beta": c.beta.tolist()} for c in pool.cuts]}


def pool_from_json(doc: Dict[str, Any], dim: Optional[int] = None) -> CutPool:
    cuts = [Cut(c["theta"], c["beta"]) for c in doc["cuts"]]
    if dim is None:
        if not cuts:
            raise InvalidParameter(f"Cannot infer the state dimension of empty pool for stage {doc['stage']}")
        dim = cuts[0].dim
    return CutPool(int(doc["stage"]), dim, cuts)
