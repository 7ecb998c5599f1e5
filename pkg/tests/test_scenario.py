import numpy as np
import pytest
import scipy.stats

from sddp_tsto.errors import InvalidParameter
from sddp_tsto.scenario import (
    HorizonDistribution,
    StageDistribution,
    Stream,
    derive_transition_probs,
    fixed_horizon,
    horizon_from_json,
    horizon_to_json,
    iteration_key,
    sample_trajectories,
    sample_trajectory,
    trajectories_checksum,
    truncated_exponential_horizon,
)


def _stages(t_max, dim=1):
    law = StageDistribution.uniform(np.arange(1.0, 1.0 + 2 * dim).reshape(2, dim))
    return [StageDistribution.deterministic(np.ones(dim))] + [law] * (t_max - 1)


def test_uniform_pmf_transition_probs():
    q = derive_transition_probs([1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(q, [1 / 3, 1 / 2, 1.0])


def test_first_transition_equals_first_mass():
    pmf = [0.1, 0.5, 0.15, 0.25]
    assert derive_transition_probs(pmf)[0] == pytest.approx(0.1)


def test_degenerate_pmf():
    horizon = fixed_horizon(5)
    np.testing.assert_array_equal(horizon.q[2:], [0.0, 0.0, 0.0, 1.0])
    assert horizon.mean() == pytest.approx(5.0)


def test_interior_zero_mass_gives_zero_transition():
    horizon = HorizonDistribution.from_pmf([0.5, 0.0, 0.5])
    assert horizon.q[3] == 0.0
    assert horizon.q[4] == 1.0


@pytest.mark.parametrize("pmf", [[0.5, 0.6], [1.2, -0.2], [0.5, np.nan]])
def test_invalid_pmf_rejected(pmf):
    with pytest.raises(InvalidParameter):
        HorizonDistribution.from_pmf(pmf)


@pytest.mark.parametrize("lam", [0.05, 0.15, 1.0])
def test_pmf_round_trip(lam):
    horizon = truncated_exponential_horizon(lam, 10)
    np.testing.assert_allclose(horizon.reconstruct_pmf(), horizon.pmf, atol=1e-10)
    assert horizon.q[10] == 1.0
    assert np.all((horizon.q[2:] >= 0) & (horizon.q[2:] <= 1))


def test_truncated_exponential_matches_closed_form():
    lam, t_max = 0.15, 10
    horizon = truncated_exponential_horizon(lam, t_max)
    assert horizon.pmf.sum() == pytest.approx(1.0, abs=1e-12)

    t = np.arange(1, t_max)
    denom = np.exp(-lam / 2) - np.exp(-lam * (t_max - 0.5))
    expected = (np.exp(-lam * (t - 0.5)) - np.exp(-lam * (t + 0.5))) / denom
    np.testing.assert_allclose(horizon.pmf, expected, rtol=1e-12)

    ratios = horizon.pmf[:-1] / horizon.pmf[1:]
    np.testing.assert_allclose(ratios, np.exp(lam), rtol=1e-10)


def test_truncated_exponential_two_stages():
    horizon = truncated_exponential_horizon(0.15, 2)
    np.testing.assert_allclose(horizon.pmf, [1.0])
    assert horizon.q[2] == 1.0


@pytest.mark.parametrize("lam, t_max", [(0.0, 10), (-1.0, 10), (0.15, 1), (0.15, 2.5)])
def test_truncated_exponential_rejects_bad_parameters(lam, t_max):
    with pytest.raises(InvalidParameter):
        truncated_exponential_horizon(lam, t_max)


def test_trajectories_alive_then_dead():
    t_max = 6
    horizon = truncated_exponential_horizon(0.5, t_max)
    trajectories = sample_trajectories(iteration_key(3, 1), horizon, _stages(t_max), 200)
    for traj in trajectories:
        assert traj.d[0] == 1
        assert np.all(np.diff(traj.d) <= 0)
        assert 2 <= traj.horizon <= t_max
        assert traj.alive(traj.horizon - 1)
        assert traj.horizon == t_max or not traj.alive(traj.horizon)
        assert traj.xi.shape == (t_max, 1)


def test_sampling_is_deterministic_in_the_key():
    t_max = 4
    horizon = truncated_exponential_horizon(0.15, t_max)
    a = sample_trajectories(iteration_key(0, 7), horizon, _stages(t_max), 50)
    b = sample_trajectories(iteration_key(0, 7), horizon, _stages(t_max), 50)
    c = sample_trajectories(iteration_key(0, 8), horizon, _stages(t_max), 50)
    assert trajectories_checksum(a) == trajectories_checksum(b)
    assert trajectories_checksum(a) != trajectories_checksum(c)


def test_streams_are_independent():
    assert not np.array_equal(
        np.asarray(iteration_key(0, 0, Stream.TRAINING)), np.asarray(iteration_key(0, 0, Stream.EVALUATION))
    )


def test_fixed_horizon_always_runs_to_the_end():
    t_max = 5
    traj = sample_trajectory(iteration_key(1, 1), fixed_horizon(t_max), _stages(t_max))
    assert traj.horizon == t_max
    assert np.all(traj.d[:-1] == 1)


def test_horizon_sampler_fidelity():
    t_max = 10
    horizon = truncated_exponential_horizon(0.15, t_max)
    count = 100_000
    trajectories = sample_trajectories(iteration_key(2024, 0, Stream.EVALUATION), horizon, _stages(t_max), count)
    observed = np.bincount([traj.horizon for traj in trajectories], minlength=t_max + 1)[2:]
    _, p_value = scipy.stats.chisquare(observed, horizon.pmf * count)
    assert p_value > 0.01


def test_noise_frequencies_follow_stage_probabilities():
    t_max = 3
    law = StageDistribution([[1.0], [2.0], [3.0]], [0.2, 0.3, 0.5])
    stages = [StageDistribution.deterministic([0.0]), law, law]
    trajectories = sample_trajectories(iteration_key(5, 0), fixed_horizon(t_max), stages, 20_000)
    counts = np.bincount([traj.realization(2) for traj in trajectories], minlength=3)
    _, p_value = scipy.stats.chisquare(counts, law.probs * len(trajectories))
    assert p_value > 0.01


def test_stage_one_must_be_deterministic():
    t_max = 3
    stages = _stages(t_max)
    stages[0] = stages[1]
    with pytest.raises(InvalidParameter):
        sample_trajectory(iteration_key(0, 0), fixed_horizon(t_max), stages)


def test_horizon_json():
    horizon = truncated_exponential_horizon(0.15, 4)
    restored, stages = horizon_from_json(horizon_to_json(horizon, _stages(4)))
    np.testing.assert_allclose(restored.q, horizon.q)
    assert len(stages) == 4
