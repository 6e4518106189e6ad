import numpy as np
import pytest

from core.errors import InvalidArgumentError, TrainingDivergedError
from core.numerics import (
    RngState,
    as_tensor,
    check_finite,
    gaussian_sample,
    l2_distance,
    mse,
    uniform_temporal_slice,
)


def test_gaussian_sample_same_state_same_draws():
    a = gaussian_sample([2, 2], RngState(7))
    b = gaussian_sample([2, 2], RngState(7))
    np.testing.assert_array_equal(a, b)


def test_gaussian_sample_moments():
    x = gaussian_sample([100_000], RngState(3))
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.05


@pytest.mark.parametrize("shape", [[0], [], [3, 0]])
def test_gaussian_sample_rejects_empty_shapes(shape):
    with pytest.raises(InvalidArgumentError):
        gaussian_sample(shape, RngState(0))


def test_streams_are_independent_and_reproducible():
    base = RngState(5)
    a = base.spawn(1).normal([4])
    b = base.spawn(2).normal([4])
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, RngState(5, 1).normal([4]))


def test_snapshot_restore_replays_sequence():
    rng = RngState(11, stream=3)
    rng.normal([5])
    snap = rng.snapshot()
    expected = rng.normal([6])
    replay = RngState.restore(snap)
    np.testing.assert_array_equal(replay.normal([6]), expected)
    assert replay.stream == 3


def test_counter_advances():
    rng = RngState(0)
    start = rng.counter
    rng.normal([16])
    assert rng.counter > start


def test_index_rejects_zero_choices():
    with pytest.raises(InvalidArgumentError):
        RngState(0).index(0)


@pytest.mark.parametrize(
    "a, b, expected",
    [([0, 0], [3, 4], 5.0), ([1, 1], [2, 3], 2.2360679774997896), ([1.5, -2], [1.5, -2], 0.0)],
)
def test_l2_distance(a, b, expected):
    assert l2_distance(np.array(a, float), np.array(b, float)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("a, b, expected", [([1, 1], [0, 0], 1.0), ([2], [0], 4.0), ([3, 4], [3, 4], 0.0)])
def test_mse(a, b, expected):
    assert mse(np.array(a, float), np.array(b, float)) == pytest.approx(expected)


def test_shape_mismatch_is_invalid():
    with pytest.raises(InvalidArgumentError):
        l2_distance(np.zeros(2), np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        mse(np.zeros((2, 2)), np.zeros(4))


def test_as_tensor_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        as_tensor([1.0, np.nan])


def test_check_finite_raises_requested_error():
    with pytest.raises(TrainingDivergedError, match="gradient"):
        check_finite(np.array([np.inf]), TrainingDivergedError, "gradient")


def test_uniform_temporal_slice_frequencies():
    tensor = np.arange(4.0)[:, None] * np.ones((4, 3))
    rng = RngState(9)
    counts = np.zeros(4)
    for _ in range(10_000):
        counts[int(uniform_temporal_slice(tensor, rng)[0])] += 1
    np.testing.assert_allclose(counts / 10_000, 0.25, atol=0.02)


def test_uniform_temporal_slice_returns_copy():
    tensor = np.ones((1, 3))
    piece = uniform_temporal_slice(tensor, RngState(0))
    piece[0] = 5.0
    assert tensor[0, 0] == 1.0
