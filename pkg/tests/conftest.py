"""
Shared fixtures for the erft-lab test suite.
"""
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.config import RunConfig  # noqa: E402
from core.flow_matching import TimestepSchedule  # noqa: E402
from core.numerics import RngState  # noqa: E402
from core.synth_data import ClipSpec  # noqa: E402
from core.velocity_net import NetDims  # noqa: E402


@pytest.fixture
def rng():
    return RngState(1234)


@pytest.fixture
def spec():
    """Noise-free 4x4 clips."""
    return ClipSpec(frames=4, dim=4, angle=0.3, data_noise=0.0)


@pytest.fixture
def small_dims():
    return NetDims(frames=4, dim=4, cond_dim=0, hidden_layers=1, width=8)


@pytest.fixture
def schedule():
    return TimestepSchedule(n_train=100, n_test=10)


@pytest.fixture
def tiny_config(tmp_path):
    """A run that trains in well under a second."""
    return RunConfig(
        frames=4,
        dim=4,
        motion_frames=2,
        hidden_layers=1,
        width=16,
        steps=6,
        batch_size=2,
        num_workers=2,
        warmup_iterations=2,
        timestep_grids=10,
        train_timesteps=100,
        max_errors_per_grid=20,
        learning_rate=1e-2,
        output_dir=str(tmp_path / "runs"),
    )
