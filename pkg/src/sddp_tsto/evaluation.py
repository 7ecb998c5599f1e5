"""
Monte-Carlo evaluation of trained policies, and the paired comparison of two policies on common trajectories.
"""
import concurrent.futures
import csv
import enum
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import fsspec
import numpy as np

from sddp_tsto.cuts import CutPool
from sddp_tsto.engine import ForwardResult, roll_forward, student_quantile
from sddp_tsto.errors import InvalidParameter, NumericalFailure
from sddp_tsto.logging import capture_time
from sddp_tsto.scenario import (
    HorizonDistribution,
    StageDistribution,
    Stream,
    Trajectory,
    iteration_key,
    sample_trajectories,
    trajectories_checksum,
)
from sddp_tsto.stage import Branch, StageModel
from sddp_tsto.utils.datetime_utils import format_seconds
from sddp_tsto.utils.json_utils import PathLike
from sddp_tsto.utils.py_utils import resolve_thread_count


logger = logging.getLogger(__name__)

DIFF_TOLERANCE = 1e-6
REPORT_COLUMNS = ("id", "T", "income_a", "income_b", "diff", "ratio")


class PolicyLabel(str, enum.Enum):
    SDDP_TSTO = "sddp_tsto"
    SDDP_FIXED_HORIZON = "sddp_fixed_horizon"


@dataclass(frozen=True, eq=False)
class PolicySnapshot:
    """Cut pools plus the model they approximate. Together they define a decision rule at every stage."""

    pools: Mapping[int, CutPool]
    model: StageModel
    label: str = PolicyLabel.SDDP_TSTO.value
    iteration: int = 0

    def __post_init__(self):
        missing = [t for t in range(2, self.model.t_max + 1) if t not in self.pools or len(self.pools[t]) == 0]
        if missing:
            raise InvalidParameter(f"Policy {self.label} has no cuts for stages {missing}")


def _recheck(model: StageModel, trajectory: Trajectory, forward: ForwardResult, check_tol: float) -> None:
    x_prev = model.x0
    for t, decision in enumerate(forward.decisions, start=1):
        branch = Branch.CONTINUE if t < trajectory.horizon else Branch.STOP
        problem = model.build_lp(t, x_prev, trajectory.noise(t), branch)
        violation = problem.max_violation(decision)
        if violation > check_tol * problem.rhs_scale():
            raise NumericalFailure(
                f"Decision at stage {t} violates its constraints by {violation:.3e} (tolerance {check_tol:.1e})"
            )
        x_prev = forward.states[t - 1]


def simulate_policy(
    policy: PolicySnapshot,
    trajectories: Sequence[Trajectory],
    *,
    threads: Optional[int] = None,
    check_tol: float = 1e-8,
) -> np.ndarray:
    """
    Income of ``policy`` on each trajectory: the negated realized cost of a rollout that stops at the death stage.
    For the portfolio this is the expected value E[xi_{T+1}] . x_T of the final holdings.
    """
    model = policy.model

    def one(trajectory: Trajectory) -> float:
        forward = roll_forward(model, policy.pools, trajectory, anchors=False)
        _recheck(model, trajectory, forward, check_tol)
        return -forward.cost

    n_threads = resolve_thread_count(threads)
    with capture_time() as elapsed:
        if n_threads > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=n_threads) as executor:
                incomes = list(executor.map(one, trajectories))
        else:
            incomes = [one(traj) for traj in trajectories]

    logger.info(f"Simulated policy {policy.label} on {len(trajectories)} trajectories in {format_seconds(elapsed())}")
    return np.asarray(incomes, dtype=np.float64)


@dataclass(frozen=True)
class IncomeSummary:
    mean: float
    std: float
    lower: Optional[float]
    """one-sided (1 - alpha) lower confidence bound on the mean income; None for a single income"""
    n: int


def summarize_incomes(incomes: Sequence[float], alpha: float = 0.05) -> IncomeSummary:
    incomes = np.asarray(incomes, dtype=np.float64)
    n = incomes.shape[0]
    if n == 0:
        raise InvalidParameter("Need at least one income to summarize")
    mean = float(incomes.mean())
    std = float(incomes.std())
    lower = mean - std / math.sqrt(n) * student_quantile(n - 1, 1.0 - alpha) if n > 1 else None
    return IncomeSummary(mean=mean, std=std, lower=lower, n=n)


def _histogram(values: np.ndarray, bins: int) -> Dict[str, List[float]]:
    finite = values[np.isfinite(values)]
    counts, edges = np.histogram(finite, bins=bins)
    return {"counts": counts.tolist(), "edges": edges.tolist()}


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    trajectory_ids: np.ndarray
    horizons: np.ndarray
    income_a: np.ndarray
    income_b: np.ndarray
    diff: np.ndarray
    """income_a - income_b"""
    ratio: np.ndarray
    """income_a / income_b; nan where income_b is zero"""
    mean_a: float
    mean_b: float
    frac_nonnegative: float
    """share of differences >= -1e-6"""
    threshold: float
    passes_threshold: bool
    diff_hist: Dict[str, List[float]]
    ratio_hist: Dict[str, List[float]]
    checksum: str
    labels: Tuple[str, str]
    seed_note: str

    @property
    def n_sims(self) -> int:
        return len(self.trajectory_ids)


def evaluation_trajectories(
    horizon: HorizonDistribution, stages: Sequence[StageDistribution], n_sims: int, seed: int
) -> List[Trajectory]:
    """Trajectories from the evaluation stream, which is independent of every training draw with the same seed."""
    if n_sims < 1:
        raise InvalidParameter(f"n_sims must be positive, got {n_sims}")
    return sample_trajectories(iteration_key(seed, 0, Stream.EVALUATION), horizon, stages, n_sims)


def compare(
    policy_a: PolicySnapshot,
    policy_b: PolicySnapshot,
    horizon: HorizonDistribution,
    stages: Sequence[StageDistribution],
    n_sims: int,
    seed: int,
    threshold: float = 0.9,
    bins: int = 20,
    *,
    threads: Optional[int] = None,
) -> ComparisonReport:
    """Paired evaluation of two policies on the same ``n_sims`` trajectories."""
    if not 0.0 < threshold <= 1.0:
        raise InvalidParameter(f"threshold must lie in (0, 1], got {threshold}")
    if bins < 1:
        raise InvalidParameter(f"bins must be positive, got {bins}")
    if policy_a.model.t_max != horizon.t_max or policy_b.model.t_max != horizon.t_max:
        raise InvalidParameter("Both policies must be built for the evaluation horizon's t_max")

    trajectories = evaluation_trajectories(horizon, stages, n_sims, seed)
    checksum = trajectories_checksum(trajectories)

    income_a = simulate_policy(policy_a, trajectories, threads=threads)
    checksum_a = trajectories_checksum(trajectories)
    income_b = simulate_policy(policy_b, trajectories, threads=threads)
    checksum_b = trajectories_checksum(trajectories)
    if not checksum == checksum_a == checksum_b:
        raise NumericalFailure("Trajectories changed between the two policy simulations")

    diff = income_a - income_b
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(income_b != 0.0, income_a / income_b, np.nan)
    frac = float(np.mean(diff >= -DIFF_TOLERANCE))

    report = ComparisonReport(
        trajectory_ids=np.arange(n_sims),
        horizons=np.array([traj.horizon for traj in trajectories]),
        income_a=income_a,
        income_b=income_b,
        diff=diff,
        ratio=ratio,
        mean_a=float(income_a.mean()),
        mean_b=float(income_b.mean()),
        frac_nonnegative=frac,
        threshold=threshold,
        passes_threshold=frac >= threshold,
        diff_hist=_histogram(diff, bins),
        ratio_hist=_histogram(ratio, bins),
        checksum=checksum,
        labels=(policy_a.label, policy_b.label),
        seed_note=f"evaluation stream of seed {seed}, independent of the training stream",
    )
    logger.info(
        f"{policy_a.label} vs {policy_b.label}: mean income {report.mean_a:.6g} vs {report.mean_b:.6g},"
        f" {frac:.1%} of differences nonnegative"
    )
    return report


def _csv_float(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.17g}"


def write_report_csv(report: ComparisonReport, path: PathLike) -> None:
    """One row per simulation: id, T, income_a, income_b, diff, ratio."""
    with fsspec.open(str(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for i in range(report.n_sims):
            writer.writerow(
                [
                    int(report.trajectory_ids[i]),
                    int(report.horizons[i]),
                    _csv_float(report.income_a[i]),
                    _csv_float(report.income_b[i]),
                    _csv_float(report.diff[i]),
                    _csv_float(report.ratio[i]),
                ]
            )


def report_summary(report: ComparisonReport, alpha: float = 0.05) -> Dict[str, Any]:
    finite_ratio = report.ratio[np.isfinite(report.ratio)]
    return {
        "labels": list(report.labels),
        "n_sims": report.n_sims,
        "mean_a": report.mean_a,
        "mean_b": report.mean_b,
        "income_a": _summary_dict(summarize_incomes(report.income_a, alpha)),
        "income_b": _summary_dict(summarize_incomes(report.income_b, alpha)),
        "mean_diff": float(report.diff.mean()),
        "mean_ratio": float(finite_ratio.mean()) if finite_ratio.size else None,
        "frac_nonnegative": report.frac_nonnegative,
        "threshold": report.threshold,
        "passes_threshold": report.passes_threshold,
        "diff_hist": report.diff_hist,
        "ratio_hist": report.ratio_hist,
        "checksum": report.checksum,
        "seed_note": report.seed_note,
    }


def _summary_dict(summary: IncomeSummary) -> Dict[str, Any]:
    return {"mean": summary.mean, "std": summary.std, "lower": summary.lower, "n": summary.n}
