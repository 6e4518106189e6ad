"""
Baseline flow matching: straight-line interpolation between noise and data,
the velocity regression objective, and the Euler sampler on the test grid.
"""
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError, SamplingDivergedError, TrainingDivergedError
from .numerics import RngState, Tensor, check_same_shape
from .synth_data import ClipSpec, ReferenceMode, sample_training_pair
from .velocity_net import (
    AdamState,
    VelocityNetParams,
    assemble_inputs,
    batch_loss_and_grad,
    sgd_step,
)


class VelocityField(Protocol):
    def velocity(self, noisy_clip: Tensor, reference: Tensor, condition: Optional[Tensor], t: float) -> Tensor:
        ...


@dataclass(frozen=True)
class TimestepSchedule:
    """Training grid {i/n_train} and test grid {k/n_test} (Euler left endpoints)."""

    n_train: int = 1000
    n_test: int = 50

    def __post_init__(self):
        if self.n_train < 2:
            raise InvalidArgumentError(f"n_train must be >= 2, got {self.n_train}")
        if self.n_test < 1:
            raise InvalidArgumentError(f"n_test must be >= 1, got {self.n_test}")

    @property
    def train_grid(self) -> Tensor:
        return np.arange(1, self.n_train) / self.n_train

    @property
    def test_grid(self) -> Tensor:
        return np.arange(self.n_test) / self.n_test

    @property
    def step_times(self) -> Tensor:
        """Test grid plus the terminal time 1."""
        return np.arange(self.n_test + 1) / self.n_test

    def sample_train_t(self, rng: RngState) -> float:
        return float((rng.index(self.n_train - 1) + 1) / self.n_train)


@dataclass
class TrainBatch:
    """
    Stacked training samples.

    Shapes: clips and noises [B, frames, dim], references [B, dim],
    conditions [B, cond_dim], timesteps [B].
    """

    clips: Tensor
    references: Tensor
    conditions: Tensor
    noises: Tensor
    timesteps: Tensor

    def __post_init__(self):
        size = len(self.clips)
        if not all(len(x) == size for x in (self.references, self.conditions, self.noises, self.timesteps)):
            raise InvalidArgumentError("batch fields have different lengths")
        check_same_shape(self.clips, self.noises, "TrainBatch")

    @property
    def size(self) -> int:
        return len(self.clips)

    @classmethod
    def concat(cls, batches: Sequence["TrainBatch"]) -> "TrainBatch":
        return cls(
            clips=np.concatenate([b.clips for b in batches]),
            references=np.concatenate([b.references for b in batches]),
            conditions=np.concatenate([b.conditions for b in batches]),
            noises=np.concatenate([b.noises for b in batches]),
            timesteps=np.concatenate([b.timesteps for b in batches]),
        )


def make_train_batch(
    spec: ClipSpec,
    size: int,
    schedule: TimestepSchedule,
    rng: RngState,
    reference_mode: ReferenceMode = ReferenceMode.LAST_FRAME,
    motion_frames: int = 5,
    motion_probability: float = 1.0,
    cond_dim: int = 0,
) -> TrainBatch:
    """
    Draw a batch of fresh clips, noises and training times.

    The condition channel carries no signal in the synthetic task; a zero
    vector of length ``cond_dim`` is attached to every sample.
    """
    references, clips, noises, timesteps = [], [], [], []
    for _ in range(size):
        reference, clip = sample_training_pair(
            spec, rng, reference_mode, motion_frames, motion_probability
        )
        references.append(reference)
        clips.append(clip)
        noises.append(rng.normal(spec.clip_shape))
        timesteps.append(schedule.sample_train_t(rng))
    return TrainBatch(
        clips=np.stack(clips),
        references=np.stack(references),
        conditions=np.zeros((size, cond_dim)),
        noises=np.stack(noises),
        timesteps=np.array(timesteps),
    )


def interpolate(x_vid: Tensor, x_noi: Tensor, t: float) -> Tensor:
    """X_t = t * X_vid + (1 - t) * X_noi."""
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    check_same_shape(x_vid, x_noi, "interpolate")
    return t * np.asarray(x_vid, dtype=np.float64) + (1.0 - t) * np.asarray(x_noi, dtype=np.float64)


def interpolate_batch(x_vid: Tensor, x_noi: Tensor, ts: Tensor) -> Tensor:
    """Per-sample interpolation for [B, frames, dim] stacks."""
    check_same_shape(x_vid, x_noi, "interpolate_batch")
    ts = np.asarray(ts, dtype=np.float64)[:, None, None]
    return ts * x_vid + (1.0 - ts) * x_noi


def target_velocity(x_vid: Tensor, x_noi: Tensor) -> Tensor:
    check_same_shape(x_vid, x_noi, "target_velocity")
    return np.asarray(x_vid, dtype=np.float64) - np.asarray(x_noi, dtype=np.float64)


def regression_step(
    params: VelocityNetParams,
    inputs: Tensor,
    targets: Tensor,
    lr: float,
    optimizer: AdamState,
) -> Tuple[VelocityNetParams, float, Tensor]:
    """
    One optimizer step on the mean squared velocity error.

    Returns:
        (updated params, pre-step loss, pre-step predictions)
    """
    loss, grads, predictions = batch_loss_and_grad(params, inputs, targets)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"loss became {loss}")
    return sgd_step(params, grads, lr, optimizer), loss, predictions


def fm_train_step(
    params: VelocityNetParams,
    batch: TrainBatch,
    lr: float,
    optimizer: AdamState,
) -> Tuple[VelocityNetParams, float]:
    """
    Error-free flow-matching step.

    Args:
        params: Current parameters
        batch: Clean training batch
        lr: Learning rate
        optimizer: Optimizer state, advanced in place

    Returns:
        (updated params, loss before the update)
    """
    x_t = interpolate_batch(batch.clips, batch.noises, batch.timesteps)
    inputs = assemble_inputs(params.dims, x_t, batch.references, batch.conditions, batch.timesteps)
    targets = (batch.clips - batch.noises).reshape(batch.size, -1)
    new_params, loss, _ = regression_step(params, inputs, targets, lr, optimizer)
    return new_params, loss


def euler_trajectory(
    field: VelocityField,
    x_0: Tensor,
    reference: Tensor,
    condition: Optional[Tensor],
    schedule: TimestepSchedule,
) -> List[Tuple[float, Tensor]]:
    """
    Integrate from t = 0 to t = 1 over the test grid.

    Returns:
        Visited (t, state) pairs, starting at (0, x_0) and ending at (1, X_1)
    """
    times = schedule.step_times
    x = np.array(x_0, dtype=np.float64)
    visited = [(float(times[0]), x)]
    for k in range(schedule.n_test):
        v = field.velocity(x, reference, condition, float(times[k]))
        x = x + (times[k + 1] - times[k]) * v
        if not np.all(np.isfinite(x)):
            raise SamplingDivergedError(f"state became non-finite at step {k}")
        visited.append((float(times[k + 1]), x))
    return visited


def euler_sample(
    field: VelocityField,
    x_0: Tensor,
    reference: Tensor,
    condition: Optional[Tensor],
    schedule: TimestepSchedule,
) -> Tensor:
    return euler_trajectory(field, x_0, reference, condition, schedule)[-1][1]
