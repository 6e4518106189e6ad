import numpy as np
import pytest

from core.error_bank import ChannelAvailability, ErrorBank, nearest_grid
from core.error_recycling import (
    CaseTag,
    ErrorTriple,
    Indicators,
    InjectionConfig,
    WorkerShard,
    approximate_predictions,
    case_tag_for,
    curate_batch,
    curate_errors,
    derive_image_error,
    erft_sharded_step,
    erft_train_step,
    inject,
    prepare_injected_batch,
    recycled_targets,
    sample_indicators,
)
from core.errors import InvalidArgumentError
from core.flow_matching import TrainBatch, fm_train_step, interpolate, make_train_batch
from core.numerics import RngState
from core.velocity_net import AdamState, init_params

ALL = ChannelAvailability(vid=True, noi=True, img=True)
NONE = ChannelAvailability(vid=False, noi=False, img=False)


def _filled_bank(spec, schedule, rng, per_grid=3):
    bank = ErrorBank(schedule, capacity=10)
    for n in range(schedule.n_test):
        for _ in range(per_grid):
            bank.update("vid", n, rng.normal(spec.clip_shape))
            bank.update("noi", n, rng.normal(spec.clip_shape))
    return bank


def test_injection_probabilities_validated():
    with pytest.raises(InvalidArgumentError):
        InjectionConfig(p_vid=1.5)
    with pytest.raises(InvalidArgumentError):
        InjectionConfig().without(["audio"])


def test_without_zeroes_only_named_channels():
    config = InjectionConfig().without(["img"])
    assert config.p_img == 0.0
    assert (config.p_vid, config.p_noi, config.p_clean) == (0.9, 0.01, 0.5)


def test_forced_clean_indicators(rng):
    config = InjectionConfig(p_vid=1, p_img=1, p_noi=1, p_clean=1)
    assert all(sample_indicators(config, ALL, rng) == (0, 0, 0) for _ in range(100))


def test_empty_banks_give_clean_indicators(rng):
    config = InjectionConfig(p_vid=1, p_img=1, p_noi=1, p_clean=0)
    assert all(sample_indicators(config, NONE, rng) == (0, 0, 0) for _ in range(100))


def test_degenerate_bernoullis(rng):
    config = InjectionConfig(p_vid=1, p_img=1, p_noi=0, p_clean=0)
    assert all(sample_indicators(config, ALL, rng) == (1, 0, 1) for _ in range(100))


def test_case_tags():
    assert case_tag_for(Indicators(0, 0, 0)) is CaseTag.CLEAN
    assert case_tag_for(Indicators(0, 1, 0)) is CaseTag.START_INJECTED
    assert case_tag_for(Indicators(0, 0, 1)) is CaseTag.START_INJECTED
    assert case_tag_for(Indicators(1, 0, 0)) is CaseTag.END_INJECTED
    assert case_tag_for(Indicators(1, 1, 1)) is CaseTag.MIXED


def test_inject_nothing_is_identity():
    clean = (np.array([2.0, 1.0]), np.array([0.5, -0.5]), np.array([1.0]))
    errors = ErrorTriple(np.ones(2), np.ones(2), np.ones(1))
    out = inject(clean, errors, Indicators(0, 0, 0))
    np.testing.assert_array_equal(out.x_vid_tilde, clean[0])
    np.testing.assert_array_equal(out.x_noi_tilde, clean[1])
    np.testing.assert_array_equal(out.x_img_tilde, clean[2])
    assert out.case_tag is CaseTag.CLEAN


def test_inject_video_error():
    out = inject(
        (np.array([2.0]), np.array([0.0]), np.array([1.0])),
        ErrorTriple(np.array([0.5]), np.array([9.0]), np.array([9.0])),
        Indicators(1, 0, 0),
    )
    np.testing.assert_array_equal(out.x_vid_tilde, [2.5])
    np.testing.assert_array_equal(out.x_noi_tilde, [0.0])


def test_inject_image_error_only():
    out = inject(
        (np.array([2.0]), np.array([0.0]), np.array([1.0])),
        ErrorTriple(np.array([9.0]), np.array([9.0]), np.array([-0.3])),
        Indicators(0, 0, 1),
    )
    np.testing.assert_allclose(out.x_img_tilde, [0.7])
    np.testing.assert_array_equal(out.x_vid_tilde, [2.0])
    np.testing.assert_array_equal(out.x_noi_tilde, [0.0])


def test_inject_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        inject((np.zeros(2), np.zeros(2), np.zeros(1)), ErrorTriple(np.zeros(3), np.zeros(2), np.zeros(1)), Indicators(1, 0, 0))


def test_one_step_predictions():
    x, v = np.array([1.0]), np.array([3.0])
    vid_hat, noi_hat = approximate_predictions(x, v, 0.5)
    np.testing.assert_allclose(vid_hat, [2.5])
    np.testing.assert_allclose(noi_hat, [-0.5])
    np.testing.assert_array_equal(approximate_predictions(x, v, 1.0)[0], x)
    np.testing.assert_array_equal(approximate_predictions(x, v, 0.0)[1], x)
    with pytest.raises(InvalidArgumentError):
        approximate_predictions(x, v, 1.2)


def test_one_step_identities_hold_for_random_triples():
    rng = RngState(21)
    for _ in range(1000):
        x_t, v, t = rng.normal((3,)), rng.normal((3,)), rng.uniform()
        vid_hat, noi_hat = approximate_predictions(x_t, v, t)
        np.testing.assert_allclose(vid_hat - noi_hat, v, rtol=0, atol=1e-12)
        np.testing.assert_allclose(t * vid_hat + (1 - t) * noi_hat, x_t, rtol=0, atol=1e-12)


def test_recycled_targets_clean_case():
    x_vid, x_noi = np.array([2.0]), np.array([0.0])
    targets = recycled_targets(x_vid, x_noi, interpolate(x_vid, x_noi, 0.3), 0.3)
    np.testing.assert_allclose(targets.v_rcy, [2.0])
    np.testing.assert_allclose(targets.x_rcy_vid, x_vid, atol=1e-12)
    np.testing.assert_allclose(targets.x_rcy_noi, x_noi, atol=1e-12)


def test_recycled_targets_start_injected_case():
    x_vid, x_noi_tilde = np.array([2.0]), np.array([0.5])
    targets = recycled_targets(x_vid, x_noi_tilde, interpolate(x_vid, x_noi_tilde, 0.5), 0.5)
    np.testing.assert_allclose(targets.x_rcy_noi, [0.5], atol=1e-12)
    np.testing.assert_allclose(targets.x_rcy_vid, x_vid, atol=1e-12)


def test_recycled_targets_end_injected_case():
    x_vid, x_vid_tilde, x_noi = np.array([2.0]), np.array([2.4]), np.array([0.0])
    x_t = interpolate(x_vid_tilde, x_noi, 0.5)
    np.testing.assert_allclose(x_t, [1.2])
    targets = recycled_targets(x_vid, x_noi, x_t, 0.5)
    np.testing.assert_allclose(targets.v_rcy, [2.0])
    np.testing.assert_allclose(targets.x_rcy_vid, [2.0])
    np.testing.assert_allclose(targets.x_rcy_noi, [0.2], atol=1e-12)


def test_case_conformance_on_random_fixtures():
    rng = RngState(4)
    for _ in range(200):
        x_vid, x_noi, e_noi = rng.normal((2, 3)), rng.normal((2, 3)), rng.normal((2, 3))
        t = rng.uniform()
        clean = recycled_targets(x_vid, x_noi, interpolate(x_vid, x_noi, t), t)
        np.testing.assert_allclose(clean.x_rcy_noi, x_noi, rtol=0, atol=1e-12)
        x_noi_tilde = x_noi + e_noi
        start = recycled_targets(x_vid, x_noi_tilde, interpolate(x_vid, x_noi_tilde, t), t)
        np.testing.assert_allclose(start.x_rcy_noi, x_noi_tilde, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(start.x_rcy_vid, x_vid)


def test_perfect_prediction_curates_zero_errors():
    x_vid, x_noi, t = np.array([2.0, -1.0]), np.array([0.3, 0.4]), 0.37
    x_t = interpolate(x_vid, x_noi, t)
    targets = recycled_targets(x_vid, x_noi, x_t, t)
    vid_hat, noi_hat = approximate_predictions(x_t, targets.v_rcy, t)
    e_vid, e_noi = curate_errors(vid_hat, noi_hat, targets.x_rcy_vid, targets.x_rcy_noi)
    np.testing.assert_allclose(e_vid, 0.0, atol=1e-12)
    np.testing.assert_allclose(e_noi, 0.0, atol=1e-12)


def test_curate_errors_hand_values():
    e_vid, e_noi = curate_errors(np.array([2.5]), np.array([-0.5]), np.array([2.0]), np.array([0.0]))
    np.testing.assert_allclose(e_vid, [0.5])
    np.testing.assert_allclose(e_noi, [-0.5])


def test_derive_image_error():
    np.testing.assert_array_equal(derive_image_error(np.array([[1.0, 2.0]]), RngState(0)), [1.0, 2.0])
    np.testing.assert_array_equal(derive_image_error(np.zeros((4, 3)), RngState(0)), np.zeros(3))
    rng = RngState(5)
    error = np.arange(4.0)[:, None] * np.ones((4, 2))
    counts = np.bincount([int(derive_image_error(error, rng)[0]) for _ in range(10_000)], minlength=4)
    np.testing.assert_allclose(counts / 10_000, 0.25, atol=0.02)


def test_clean_erft_step_equals_flow_matching(spec, schedule, small_dims):
    params = init_params(small_dims, RngState(0))
    batch = make_train_batch(spec, 6, schedule, RngState(1))
    bank = _filled_bank(spec, schedule, RngState(2))
    config = InjectionConfig(p_clean=1.0)
    erft_params, erft_loss, curated = erft_train_step(
        params, batch, bank, config, schedule, 1e-2, AdamState(), RngState(3)
    )
    fm_params, fm_loss = fm_train_step(params, batch, 1e-2, AdamState())
    assert erft_loss == fm_loss
    np.testing.assert_array_equal(erft_params.flat(), fm_params.flat())
    assert len(curated) == batch.size


def test_zero_learning_rate_still_curates(spec, schedule, small_dims):
    params = init_params(small_dims, RngState(0))
    batch = make_train_batch(spec, 3, schedule, RngState(1))
    bank = ErrorBank(schedule, capacity=5)
    new_params, _, curated = erft_train_step(
        params, batch, bank, InjectionConfig(), schedule, 0.0, AdamState(mode="sgd"), RngState(3)
    )
    np.testing.assert_array_equal(new_params.flat(), params.flat())
    assert len(curated) == 3
    assert all(c.e_vid.shape == spec.clip_shape for c in curated)
    assert bank.total() == 0


def test_hand_built_sample_curates_hand_errors(schedule):
    # zero predictions give x_vid_hat = x_noi_hat = x_t
    x_vid = np.full((1, 4, 4), 2.0)
    x_noi = np.zeros((1, 4, 4))
    batch = TrainBatch(
        clips=x_vid, references=np.zeros((1, 4)), conditions=np.zeros((1, 0)),
        noises=x_noi, timesteps=np.array([0.5]),
    )
    prepared = prepare_injected_batch(batch, ErrorBank(schedule), InjectionConfig(), schedule, RngState(0))
    curated = curate_batch(prepared, np.zeros((1, 16)))
    # x_t = 1, x_rcy_vid = 2, x_rcy_noi = 1 - 0.5 * 2 = 0
    np.testing.assert_allclose(curated[0].e_vid, -1.0, atol=1e-12)
    np.testing.assert_allclose(curated[0].e_noi, 1.0, atol=1e-12)
    assert curated[0].t == 0.5


def test_prepared_batch_uses_bank_errors(spec, schedule):
    batch = make_train_batch(spec, 8, schedule, RngState(1))
    bank = _filled_bank(spec, schedule, RngState(2))
    config = InjectionConfig(p_vid=1, p_img=1, p_noi=1, p_clean=0)
    prepared = prepare_injected_batch(batch, bank, config, schedule, RngState(3))
    assert all(case is CaseTag.MIXED for case in prepared.cases)
    for i in range(batch.size):
        n = nearest_grid(float(batch.timesteps[i]), schedule)
        e_vid = prepared.x_vid_tilde[i] - batch.clips[i]
        assert any(np.allclose(e_vid, stored) for stored in bank.vid_grids[n].entries)
    np.testing.assert_allclose(prepared.v_rcy, batch.clips - prepared.x_noi_tilde)


def test_sharded_step_counts_cases(spec, schedule, small_dims):
    params = init_params(small_dims, RngState(0))
    shards = [
        WorkerShard(make_train_batch(spec, 3, schedule, RngState(10 + w)), ErrorBank(schedule), RngState(w))
        for w in range(2)
    ]
    result = erft_sharded_step(params, shards, InjectionConfig(), schedule, 1e-3, AdamState())
    assert sum(result.case_counts.values()) == 6
    assert result.case_counts[CaseTag.CLEAN.value] == 6
    assert [len(c) for c in result.curated] == [3, 3]
