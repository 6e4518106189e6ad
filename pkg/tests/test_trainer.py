import numpy as np
import pytest

from core.error_recycling import InjectionConfig
from core.errors import TrainingDivergedError
from core.rollout import ablate
from core.trainer import Trainer, TrainingMode


def test_baseline_is_deterministic(tiny_config):
    a = Trainer(tiny_config).train(TrainingMode.BASELINE)
    b = Trainer(tiny_config).train(TrainingMode.BASELINE)
    assert a.losses == b.losses
    np.testing.assert_array_equal(a.params.flat(), b.params.flat())


def test_clean_erft_matches_baseline_step_for_step(tiny_config):
    config = tiny_config.model_copy(update={"steps": 100, "clean_input_p": 1.0})
    baseline = Trainer(config).train(TrainingMode.BASELINE)
    erft = Trainer(config).train(TrainingMode.ERFT)
    np.testing.assert_allclose(erft.losses, baseline.losses, rtol=0, atol=1e-12)
    assert erft.case_counts["clean"] == 100 * config.num_workers * config.batch_size


def test_dropping_every_channel_matches_baseline(tiny_config):
    baseline = Trainer(tiny_config).train(TrainingMode.BASELINE)
    ablated = ablate(tiny_config, ["img", "vid", "noi"])
    assert ablated.losses == baseline.losses
    assert ablated.config.image_error_p == ablated.config.latent_error_p == ablated.config.noise_error_p == 0.0
    assert ablated.config.clean_input_p == tiny_config.clean_input_p


def test_empty_drop_is_full_erft(tiny_config):
    full = Trainer(tiny_config).train(TrainingMode.ERFT)
    assert ablate(tiny_config, []).losses == full.losses


def test_erft_fills_local_banks(tiny_config):
    result = Trainer(tiny_config).train(TrainingMode.ERFT)
    assert len(result.losses) == tiny_config.steps
    assert len(result.banks) == tiny_config.num_workers
    assert result.banks[0] is not result.banks[1]
    per_worker = tiny_config.batch_size
    shared = tiny_config.warmup_iterations * tiny_config.num_workers * per_worker
    local = (tiny_config.steps - tiny_config.warmup_iterations) * per_worker
    for bank in result.banks:
        # each curated sample banks one video and one noise error
        assert bank.total() == 2 * (shared + local)
    assert sum(result.case_counts.values()) == tiny_config.steps * tiny_config.num_workers * per_worker


def test_injection_override(tiny_config):
    result = Trainer(tiny_config, injection=InjectionConfig(p_clean=1.0)).train(TrainingMode.ERFT)
    assert result.case_counts["clean"] == sum(result.case_counts.values())


def test_zero_steps_returns_initial_params(tiny_config):
    config = tiny_config.model_copy(update={"steps": 0})
    result = Trainer(config).train(TrainingMode.BASELINE)
    assert result.losses == [] and result.loss_final is None


def test_divergence_names_the_step(tiny_config):
    config = tiny_config.model_copy(update={"learning_rate": 1e300, "optimizer": "sgd", "steps": 50})
    with pytest.raises(TrainingDivergedError, match="step"):
        Trainer(config).train(TrainingMode.BASELINE)
