"""
The random horizon and the per-stage noise.

The horizon T is modelled through the death process D_t: D_1 = 1, and once alive at t-1 the process dies at t with
probability q_t. Once dead it stays dead, and T is the first stage where D_t = 0. Noise is stagewise independent and
independent of D.

Stage-indexed arrays in this module are padded so that ``p[t]`` and ``q[t]`` are the values for stage ``t`` directly.
Lists of stages are ordinary python lists, so ``stages[t - 1]`` is stage ``t``.
"""
import dataclasses
import enum
import hashlib
import logging
from typing import Any, Dict, List, Sequence, Tuple

import jax
import numpy as np

from sddp_tsto.errors import DimensionMismatch, InvalidParameter, NumericalDegeneracy


logger = logging.getLogger(__name__)

PMF_TOLERANCE = 1e-12
TERMINAL_Q_TOLERANCE = 1e-10
SURVIVAL_FLOOR = 1e-14


class Stream(enum.IntEnum):
    """Independent random streams. Training and evaluation never share trajectories."""

    TRAINING = 0
    EVALUATION = 1


def _validate_pmf(pmf: Sequence[float]) -> np.ndarray:
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise InvalidParameter(f"A horizon pmf must be a nonempty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidParameter("Horizon pmf contains non-finite values")
    if np.any(p < 0):
        raise InvalidParameter(f"Horizon pmf has negative entries: {p}")
    if abs(p.sum() - 1.0) > PMF_TOLERANCE:
        raise InvalidParameter(f"Horizon pmf sums to {p.sum()!r}, not 1")
    return p


def derive_transition_probs(pmf: Sequence[float]) -> np.ndarray:
    """
    Computes q_t = P(D_t = 0 | D_{t-1} = 1) from P(T = t).

    Args:
        pmf: P(T = t) for t = 2, ..., t_max

    Returns:
        q_t for t = 2, ..., t_max (same length as ``pmf``), with the last entry exactly 1.
    """
    p = _validate_pmf(pmf)
    q = np.zeros_like(p)
    survival = 1.0
    last = len(p) - 1

    for i, p_t in enumerate(p):
        stage = i + 2
        if i == last:
            break
        if p_t == 0.0:
            continue
        if survival <= SURVIVAL_FLOOR:
            raise NumericalDegeneracy(
                f"Survival probability before stage {stage} is {survival:.3e} but P(T={stage}) = {p_t:.3e}"
            )
        q[i] = min(p_t / survival, 1.0)
        survival *= 1.0 - q[i]

    p_last = p[last]
    if survival > SURVIVAL_FLOOR:
        terminal = p_last / survival
        if abs(terminal - 1.0) > TERMINAL_Q_TOLERANCE:
            logger.warning(f"Terminal transition probability is {terminal!r} before clamping to 1")
    elif p_last > SURVIVAL_FLOOR:
        raise NumericalDegeneracy(
            f"Survival probability before stage {len(p) + 1} is {survival:.3e} but P(T={len(p) + 1}) = {p_last:.3e}"
        )
    q[last] = 1.0

    return q


@dataclasses.dataclass(frozen=True, eq=False)
class HorizonDistribution:
    """
    Law of the number of stages T on {2, ..., t_max}. ``p`` and ``q`` have length ``t_max + 1`` and are indexed by
    stage; entries 0 and 1 are always zero.
    """

    t_max: int
    p: np.ndarray
    q: np.ndarray

    @staticmethod
    def from_pmf(pmf: Sequence[float]) -> "HorizonDistribution":
        """``pmf`` lists P(T = t) for t = 2, ..., t_max."""
        p = _validate_pmf(pmf)
        q = derive_transition_probs(p)
        pad = np.zeros(2)
        return HorizonDistribution(t_max=len(p) + 1, p=np.concatenate([pad, p]), q=np.concatenate([pad, q]))

    @staticmethod
    def fixed(t_max: int) -> "HorizonDistribution":
        """T = t_max surely. This is the horizon classical SDDP assumes."""
        if t_max < 2:
            raise InvalidParameter(f"t_max must be >= 2, got {t_max}")
        pmf = np.zeros(t_max - 1)
        pmf[-1] = 1.0
        return HorizonDistribution.from_pmf(pmf)

    @property
    def pmf(self) -> np.ndarray:
        return self.p[2:]

    def survival(self, t: int) -> float:
        """P(T > t)"""
        return float(1.0 - self.p[: t + 1].sum())

    def reconstruct_pmf(self) -> np.ndarray:
        """Recomputes P(T = t), t = 2..t_max, from the transition probabilities."""
        out = np.zeros(self.t_max - 1)
        alive = 1.0
        for t in range(2, self.t_max + 1):
            out[t - 2] = self.q[t] * alive
            alive *= 1.0 - self.q[t]
        return out

    def mean(self) -> float:
        return float(np.arange(self.t_max + 1) @ self.p)


def truncated_exponential_horizon(lam: float, t_max: int) -> HorizonDistribution:
    """
    Discretized exponential law on {2, ..., t_max}:
    P(T = t+1) = (e^{-lam (t - 1/2)} - e^{-lam (t + 1/2)}) / (e^{-lam/2} - e^{-lam (t_max - 1/2)}), t = 1..t_max-1.
    """
    if not (lam > 0 and np.isfinite(lam)):
        raise InvalidParameter(f"Horizon rate must be positive, got {lam}")
    if int(t_max) != t_max or t_max < 2:
        raise InvalidParameter(f"t_max must be an integer >= 2, got {t_max}")
    t_max = int(t_max)

    t = np.arange(1, t_max, dtype=np.float64)
    numer = np.exp(-lam * (t - 0.5)) - np.exp(-lam * (t + 0.5))
    denom = np.exp(-lam / 2) - np.exp(-lam * (t_max - 0.5))
    return HorizonDistribution.from_pmf(numer / denom)


def fixed_horizon(t_max: int) -> HorizonDistribution:
    return HorizonDistribution.fixed(t_max)


@dataclasses.dataclass(frozen=True, eq=False)
class StageDistribution:
    """Finite noise law of one stage: rows of ``support`` are the realizations, ``probs`` their probabilities."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if support.shape[0] != probs.shape[0]:
            raise DimensionMismatch(f"{support.shape[0]} realizations but {probs.shape[0]} probabilities")
        if not np.all(np.isfinite(support)):
            raise InvalidParameter("Stage support contains non-finite values")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PMF_TOLERANCE:
            raise InvalidParameter(f"Stage probabilities must be nonnegative and sum to 1, got {probs}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @staticmethod
    def deterministic(xi: Sequence[float]) -> "StageDistribution":
        return StageDistribution(np.asarray(xi, dtype=np.float64).reshape(1, -1), np.ones(1))

    @staticmethod
    def uniform(support: Any) -> "StageDistribution":
        support = np.atleast_2d(np.asarray(support, dtype=np.float64))
        return StageDistribution(support, np.full(support.shape[0], 1.0 / support.shape[0]))

    @property
    def num_realizations(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def mean(self) -> np.ndarray:
        return self.probs @ self.support


@dataclasses.dataclass(frozen=True, eq=False)
class Trajectory:
    """One joint sample of (xi, D). Position ``t - 1`` of each array holds stage ``t``."""

    xi: np.ndarray
    xi_index: np.ndarray
    d: np.ndarray
    horizon: int

    @property
    def t_max(self) -> int:
        return len(self.d)

    def noise(self, t: int) -> np.ndarray:
        return self.xi[t - 1]

    def realization(self, t: int) -> int:
        return int(self.xi_index[t - 1])

    def alive(self, t: int) -> bool:
        return bool(self.d[t - 1])

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.xi_index, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.d, dtype=np.int8).tobytes())
        return h.hexdigest()


def trajectories_checksum(trajectories: Sequence[Trajectory]) -> str:
    h = hashlib.sha256()
    for traj in trajectories:
        h.update(traj.checksum().encode())
    return h.hexdigest()


def check_stages(horizon: HorizonDistribution, stages: Sequence[StageDistribution]) -> None:
    if len(stages) != horizon.t_max:
        raise DimensionMismatch(f"Expected {horizon.t_max} stage distributions, got {len(stages)}")
    if stages[0].num_realizations != 1:
        raise InvalidParameter("Stage 1 noise must be deterministic")
    dims = {s.dim for s in stages}
    if len(dims) != 1:
        raise DimensionMismatch(f"Stage noise dimensions disagree: {sorted(dims)}")


def iteration_key(seed: int, index: int, stream: Stream = Stream.TRAINING) -> jax.Array:
    """Key for the ``index``-th draw of ``stream``. Keys for different (stream, index) pairs are independent."""
    key = jax.random.PRNGKey(seed)
    key = jax.random.fold_in(key, int(stream))
    return jax.random.fold_in(key, index)


def sample_trajectories(
    key: jax.Array, horizon: HorizonDistribution, stages: Sequence[StageDistribution], count: int
) -> List[Trajectory]:
    """Draws ``count`` independent joint trajectories. Identical keys give identical trajectories."""
    check_stages(horizon, stages)
    t_max = horizon.t_max
    keys = jax.random.split(key, t_max + 1)

    u = np.asarray(jax.random.uniform(keys[0], (count, t_max)), dtype=np.float64)
    dies = u < horizon.q[1:][None, :]
    dies[:, 0] = False
    d = np.cumprod(~dies, axis=1).astype(np.int8)
    horizons = np.argmin(d, axis=1) + 1

    index = np.zeros((count, t_max), dtype=np.int64)
    for t in range(2, t_max + 1):
        stage = stages[t - 1]
        if stage.num_realizations > 1:
            draw = jax.random.choice(keys[t], stage.num_realizations, shape=(count,), p=stage.probs)
            index[:, t - 1] = np.asarray(draw, dtype=np.int64)

    out = []
    for i in range(count):
        xi = np.stack([stages[t].support[index[i, t]] for t in range(t_max)])
        out.append(Trajectory(xi=xi, xi_index=index[i].copy(), d=d[i].copy(), horizon=int(horizons[i])))
    return out


def sample_trajectory(
    key: jax.Array, horizon: HorizonDistribution, stages: Sequence[StageDistribution]
) -> Trajectory:
    return sample_trajectories(key, horizon, stages, 1)[0]


def horizon_to_json(horizon: HorizonDistribution, stages: Sequence[StageDistribution]) -> Dict[str, Any]:
    return {
        "t_max": horizon.t_max,
        "p": horizon.pmf.tolist(),
        "stages": [{"support": s.support.tolist(), "probs": s.probs.tolist()} for s in stages],
    }


def horizon_from_json(doc: Dict[str, Any]) -> Tuple[HorizonDistribution, List[StageDistribution]]:
    horizon = HorizonDistribution.from_pmf(doc["p"])
    if horizon.t_max != int(doc["t_max"]):
        raise DimensionMismatch(f"t_max is {doc['t_max']} but the pmf covers stages 2..{horizon.t_max}")
    stages = [StageDistribution(s["support"], s["probs"]) for s in doc.get("stages", [])]
    if stages:
        check_stages(horizon, stages)
    return horizon, stages
