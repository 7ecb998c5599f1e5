import datetime
import pathlib
import tempfile
from datetime import timedelta

import numpy as np
import pytest

from sddp_tsto.checkpoint import (
    CheckpointerConfig,
    PolicyCheckpointer,
    discover_latest_checkpoint,
    load_checkpoint,
    load_metadata,
    load_policy,
    policy_from_json,
    policy_to_json,
    save_policy,
)
from sddp_tsto.cuts import Cut, CutPool
from sddp_tsto.engine import BoundsRecord, ForwardResult, IterationInfo, TerminationReason
from sddp_tsto.errors import DimensionMismatch


def _pools(t_max=3, dim=2):
    return {t: CutPool(t, dim, [Cut(float(t), np.arange(dim, dtype=float))]) for t in range(2, t_max + 1)}


def _dummy_info(iteration, final=False):
    return IterationInfo(
        iteration=iteration,
        pools=_pools(),
        record=BoundsRecord(iteration=iteration, cost=0.0, lower=0.0, horizon=2),
        forward=ForwardResult(states=[], cost=0.0, horizon=2, decisions=[]),
        new_cuts=[],
        duration=0.0,
        elapsed=0.0,
        termination=TerminationReason.MAX_ITERS if final else None,
    )


def _get_checkpoint_iterations(checkpoint_dir):
    paths = list(pathlib.Path(checkpoint_dir).iterdir())
    return sorted([load_metadata(f)["iteration"] for f in paths])


def test_checkpointer_iteration_policy():
    with tempfile.TemporaryDirectory(prefix="checkpoints") as tmpdir:
        checkpointer = PolicyCheckpointer(tmpdir, None, every=5)

        for iteration in range(1, 23):
            checkpointer.on_iteration(_dummy_info(iteration))

        assert _get_checkpoint_iterations(tmpdir) == [5, 10, 15, 20]


def test_checkpointer_temporal_policy():
    fake_now = datetime.datetime(2021, 1, 1, 0, 0, 0)

    tick = 10

    def advance_time(delta_seconds):
        nonlocal fake_now
        fake_now += timedelta(seconds=delta_seconds)

    with tempfile.TemporaryDirectory(prefix="checkpoints") as tmpdir:
        checkpointer = PolicyCheckpointer(tmpdir, timedelta(seconds=tick), None, dt_now_injection=lambda: fake_now)

        checkpointer.on_iteration(_dummy_info(0))
        advance_time(tick)
        checkpointer.on_iteration(_dummy_info(1))
        assert _get_checkpoint_iterations(tmpdir) == [1]

        advance_time(tick - 1)
        checkpointer.on_iteration(_dummy_info(2))
        assert _get_checkpoint_iterations(tmpdir) == [1]
        advance_time(1)
        checkpointer.on_iteration(_dummy_info(3))
        assert _get_checkpoint_iterations(tmpdir) == [3]


def test_checkpointer_mixed_policy_and_final_save():
    fake_now = datetime.datetime(2021, 1, 1, 0, 0, 0)

    tick = 10

    def advance_time(delta_seconds):
        nonlocal fake_now
        fake_now += timedelta(seconds=delta_seconds)

    with tempfile.TemporaryDirectory(prefix="checkpoints") as tmpdir:
        checkpointer = PolicyCheckpointer(tmpdir, timedelta(seconds=tick), every=2, dt_now_injection=lambda: fake_now)

        advance_time(tick)
        checkpointer.on_iteration(_dummy_info(1))
        assert _get_checkpoint_iterations(tmpdir) == [1]

        # not enough time has passed, but the iteration policy saves a permanent checkpoint
        checkpointer.on_iteration(_dummy_info(2))
        assert _get_checkpoint_iterations(tmpdir) == [2]

        advance_time(tick)
        checkpointer.on_iteration(_dummy_info(3))
        assert _get_checkpoint_iterations(tmpdir) == [2, 3]

        # the last iteration is always saved, and replaces the temporary one
        checkpointer.on_iteration(_dummy_info(5, final=True))
        assert _get_checkpoint_iterations(tmpdir) == [2, 5]


def test_save_and_load_policy(tmp_path):
    pools = _pools(t_max=4)
    path = tmp_path / "policy.json"
    save_policy(path, pools, label="sddp_fixed_horizon", iteration=12)
    policy = load_policy(path)
    assert policy.label == "sddp_fixed_horizon"
    assert policy.t_max == 4
    assert policy.state_dim == 2
    assert policy.iteration == 12
    for t in range(2, 5):
        assert policy.pools[t].cuts[0].theta == float(t)


def test_policy_must_cover_every_stage():
    doc = policy_to_json(_pools(t_max=4), label="x", t_max=4, state_dim=2, iteration=0)
    doc["pools"] = doc["pools"][:-1]
    with pytest.raises(DimensionMismatch):
        policy_from_json(doc)


def test_discover_latest_checkpoint():
    with tempfile.TemporaryDirectory(prefix="checkpoints") as tmpdir:
        checkpointer = PolicyCheckpointer(tmpdir, None, every=1)
        for iteration in (1, 2, 3):
            checkpointer.on_iteration(_dummy_info(iteration))

        latest = discover_latest_checkpoint(tmpdir)
        assert latest is not None and latest.endswith("iter-3")
        assert load_checkpoint(tmpdir).iteration == 3

    with tempfile.TemporaryDirectory(prefix="empty") as tmpdir:
        assert discover_latest_checkpoint(tmpdir) is None
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmpdir)


def test_checkpoints_on_memory_filesystem():
    checkpointer = PolicyCheckpointer("memory://ckpts/run", None, every=2)
    for iteration in range(1, 5):
        checkpointer.on_iteration(_dummy_info(iteration))
    assert load_checkpoint("memory://ckpts/run").iteration == 4


def test_checkpointer_config():
    config = CheckpointerConfig(base_path="/tmp/ckpts", every=100)
    checkpointer = config.create("run1", label="sddp_tsto")
    assert checkpointer.base_path == "/tmp/ckpts/run1"
    assert checkpointer.every == 100
    with pytest.raises(ValueError):
        CheckpointerConfig(every=0)
