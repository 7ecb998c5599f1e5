import numpy as np
import pytest

from sddp_tsto.cuts import Cut, CutPool, assemble_cut, evaluate, pool_from_json, pool_to_json
from sddp_tsto.errors import DimensionMismatch, InvalidParameter


def test_null_pool_is_zero():
    pool = CutPool(2, 3, [Cut(0.0, np.zeros(3))])
    for x in ([0.0, 0.0, 0.0], [1.0, -2.0, 5.0]):
        assert evaluate(pool, np.array(x)) == 0.0


def test_max_of_two_cuts():
    pool = CutPool(2, 3, [Cut(1.0, np.zeros(3)), Cut(0.0, [1.0, 0.0, 0.0])])
    assert evaluate(pool, np.array([2.0, 0.0, 0.0])) == pytest.approx(2.0)
    assert evaluate(pool, np.array([0.5, 0.0, 0.0])) == pytest.approx(1.0)


def test_adding_cuts_never_lowers_the_value():
    rng = np.random.default_rng(0)
    pool = CutPool(3, 2, [Cut(0.0, [0.0, 0.0])])
    xs = rng.normal(size=(20, 2))
    before = pool.evaluate_many(xs)
    for _ in range(5):
        pool.add(Cut(rng.normal(), rng.normal(size=2)))
        after = pool.evaluate_many(xs)
        assert np.all(after >= before)
        before = after


def test_snapshot_is_independent():
    pool = CutPool(2, 1, [Cut(0.0, [1.0])])
    snap = pool.snapshot()
    pool.add(Cut(1.0, [0.0]))
    assert len(snap) == 1
    assert len(pool) == 2


def test_dimension_checks():
    pool = CutPool(2, 2)
    with pytest.raises(DimensionMismatch):
        pool.add(Cut(0.0, [1.0, 2.0, 3.0]))
    with pytest.raises(InvalidParameter):
        pool.evaluate_many(np.zeros((1, 2)))
    with pytest.raises(InvalidParameter):
        Cut(np.inf, [0.0])


def test_no_death_mass_is_classical_average():
    probs = [0.25, 0.75]
    vals = [4.0, 8.0]
    grads = np.array([[1.0, 0.0], [0.0, 2.0]])
    x = np.array([1.0, 1.0])
    cut = assemble_cut(0.0, probs, vals, grads, None, None, x)
    expected_beta = 0.25 * grads[0] + 0.75 * grads[1]
    np.testing.assert_allclose(cut.beta, expected_beta)
    assert cut.value(x) == pytest.approx(0.25 * 4.0 + 0.75 * 8.0)


def test_certain_death_uses_stop_branch_only():
    probs = [0.5, 0.5]
    stop_grads = np.array([[-1.0], [-3.0]])
    cut = assemble_cut(1.0, probs, None, None, [-2.0, -6.0], stop_grads, np.array([2.0]))
    assert cut.beta == pytest.approx([-2.0])
    assert cut.value(np.array([2.0])) == pytest.approx(-4.0)
    assert cut.theta == pytest.approx(0.0)


def test_mixed_branches_by_hand():
    q = 0.5
    probs = [0.5, 0.5]
    x = np.array([1.0, 2.0])
    cont_vals, cont_grads = [1.0, 3.0], np.array([[1.0, 0.0], [0.0, 1.0]])
    stop_vals, stop_grads = [-1.0, 0.0], np.array([[2.0, 2.0], [0.0, -2.0]])
    cut = assemble_cut(q, probs, cont_vals, cont_grads, stop_vals, stop_grads, x)

    # continue: mean value 2, mean slope (0.5, 0.5); stop: mean value -0.5, mean slope (1, 0)
    beta = 0.5 * np.array([0.5, 0.5]) + 0.5 * np.array([1.0, 0.0])
    value = 0.5 * 2.0 + 0.5 * -0.5
    np.testing.assert_allclose(cut.beta, beta)
    assert cut.theta == pytest.approx(value - beta @ x)
    assert cut.value(x) == pytest.approx(value)


def test_missing_branch_with_weight_is_an_error():
    with pytest.raises(InvalidParameter):
        assemble_cut(0.5, [1.0], [1.0], np.ones((1, 1)), None, None, np.zeros(1))
    with pytest.raises(InvalidParameter):
        assemble_cut(1.5, [1.0], [1.0], np.ones((1, 1)), [1.0], np.ones((1, 1)), np.zeros(1))


def test_gradient_shape_is_checked():
    with pytest.raises(DimensionMismatch):
        assemble_cut(0.0, [0.5, 0.5], [1.0, 2.0], np.ones((2, 3)), None, None, np.zeros(2))


def test_pool_json():
    pool = CutPool(4, 2, [Cut(0.5, [1.0, -1.0]), Cut(-1.0, [0.25, 0.0])])
    restored = pool_from_json(pool_to_json(pool))
    assert restored.stage == 4
    assert restored.dim == 2
    xs = np.array([[0.0, 0.0], [1.0, 3.0]])
    np.testing.assert_array_equal(restored.evaluate_many(xs), pool.evaluate_many(xs))

    with pytest.raises(InvalidParameter):
        pool_from_json({"stage": 2, "cuts": []})
    assert len(pool_from_json({"stage": 2, "cuts": []}, dim=3)) == 0
