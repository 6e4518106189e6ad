"""
Autoregressive multi-clip generation with cross-clip conditioning, drift
measurement against the oracle dynamics, and run comparison.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import RunConfig
from .errors import InvalidArgumentError, SamplingDivergedError
from .flow_matching import TimestepSchedule, VelocityField, euler_sample
from .numerics import RngState, Tensor, gaussian_sample
from .synth_data import (
    Clip,
    ClipSpec,
    ReferenceMode,
    drift_metric,
    oracle_context,
    reference_from_frames,
)
from .trainer import Trainer, TrainingMode, TrainingResult

ROLLOUT_NOISE_STREAM = 10_000


@dataclass(frozen=True)
class RolloutConfig:
    num_clips: int
    motion_frames: int = 5
    reference_mode: ReferenceMode = ReferenceMode.LAST_FRAME
    schedule: TimestepSchedule = field(default_factory=TimestepSchedule)

    def __post_init__(self):
        if self.num_clips < 1:
            raise InvalidArgumentError(f"num_clips must be >= 1, got {self.num_clips}")
        if self.motion_frames < 1:
            raise InvalidArgumentError(f"motion_frames must be >= 1, got {self.motion_frames}")


@dataclass
class DriftCurve:
    """Per-clip (norm_drift, step_drift) of one seed."""

    seed: int
    metrics: List[Tuple[float, float]]


@dataclass
class RolloutTrace(DriftCurve):
    clips: List[Clip] = field(default_factory=list)


class OracleVelocityField:
    """
    Exact flow-matching field toward the noise-free continuation of the
    reference: u(x, t) = (x1 - x) / (1 - t).
    """

    def __init__(self, spec: ClipSpec, reference_mode: ReferenceMode = ReferenceMode.LAST_FRAME, motion_frames: int = 5):
        self.spec = spec
        self.reference_mode = ReferenceMode(reference_mode)
        self.motion_frames = motion_frames

    def last_frame(self, reference: Tensor) -> Tensor:
        if self.reference_mode is ReferenceMode.MOTION_FRAMES:
            # the reference is the mean of the trailing frames, a linear map of the last one
            inverse = self.spec.rotation.T
            averaging = np.zeros((self.spec.dim, self.spec.dim))
            power = np.eye(self.spec.dim)
            for _ in range(self.motion_frames):
                averaging += power
                power = inverse @ power
            return np.linalg.solve(averaging / self.motion_frames, reference)
        return np.asarray(reference, dtype=np.float64)

    def target_clip(self, reference: Tensor) -> Tensor:
        frame = self.last_frame(reference)
        frames = np.empty(self.spec.clip_shape)
        for i in range(self.spec.frames):
            frame = self.spec.rotation @ frame
            frames[i] = frame
        return frames

    def velocity(self, noisy_clip: Tensor, reference: Tensor, condition: Optional[Tensor], t: float) -> Tensor:
        if t >= 1.0:
            return np.zeros(self.spec.clip_shape)
        return (self.target_clip(reference) - noisy_clip) / (1.0 - t)


def generate_long(
    field: VelocityField,
    initial_frame: Tensor,
    condition: Optional[Tensor],
    config: RolloutConfig,
    spec: ClipSpec,
    rng: RngState,
) -> RolloutTrace:
    """
    Generate ``config.num_clips`` clips, each conditioned on the previous one.

    Args:
        field: Velocity field (trained params, oracle or stub)
        initial_frame: Frame preceding the first clip; its norm anchors drift
        condition: Condition vector passed to every clip
        config: Chaining rules and sampling schedule
        spec: Clip geometry and oracle dynamics
        rng: Supplies the run seed; clip i draws noise from stream (seed, i)

    Returns:
        RolloutTrace with clips and per-clip drift metrics
    """
    mode = ReferenceMode(config.reference_mode)
    if mode is ReferenceMode.MOTION_FRAMES and config.motion_frames > spec.frames:
        raise InvalidArgumentError(
            f"motion_frames={config.motion_frames} exceeds clip length {spec.frames}"
        )
    initial_frame = np.asarray(initial_frame, dtype=np.float64)
    reference_norm = float(np.linalg.norm(initial_frame))
    if mode is ReferenceMode.MOTION_FRAMES:
        history = oracle_context(spec, initial_frame, config.motion_frames)
    else:
        history = initial_frame[None]

    trace = RolloutTrace(seed=rng.seed, metrics=[])
    for index in range(1, config.num_clips + 1):
        reference = reference_from_frames(history, mode, config.motion_frames, anchor=initial_frame)
        noise = gaussian_sample(spec.clip_shape, RngState(rng.seed, ROLLOUT_NOISE_STREAM + index))
        try:
            frames = euler_sample(field, noise, reference, condition, config.schedule)
        except SamplingDivergedError as e:
            raise SamplingDivergedError(str(e), clip_index=index) from e
        clip = Clip(frames=frames, spec=spec)
        trace.clips.append(clip)
        trace.metrics.append(drift_metric(clip, reference_norm, spec))
        history = frames
    return trace


def drift_slope(curve: Sequence[float]) -> float:
    """Least-squares slope of a curve against clip index 1..K."""
    y = np.asarray(curve, dtype=np.float64)
    if y.size < 2:
        return 0.0
    x = np.arange(1, y.size + 1, dtype=np.float64)
    x_centered = x - x.mean()
    return float(np.dot(x_centered, y - y.mean()) / np.dot(x_centered, x_centered))


@dataclass
class RunComparison:
    metric: str
    curve_a: Tensor
    curve_b: Tensor
    terminal_a: float
    terminal_b: float
    slope_a: float
    slope_b: float
    wins_a: int
    wins_b: int
    ties: int

    @property
    def difference(self) -> Tensor:
        return self.curve_a - self.curve_b


_METRIC_COLUMNS = {"norm_drift": 0, "step_drift": 1}


def _curves(traces: Sequence[DriftCurve], metric: str) -> np.ndarray:
    column = _METRIC_COLUMNS[metric]
    return np.array([[m[column] for m in trace.metrics] for trace in traces], dtype=np.float64)


def compare_runs(
    traces_a: Sequence[Union[DriftCurve, RolloutTrace]],
    traces_b: Sequence[Union[DriftCurve, RolloutTrace]],
    metric: str = "norm_drift",
) -> RunComparison:
    """
    Compare two methods' rollouts.

    Seeds are paired by position; a seed is won by the method with the lower
    terminal-clip drift.
    """
    if metric not in _METRIC_COLUMNS:
        raise InvalidArgumentError(f"unknown metric {metric!r}")
    if not traces_a or not traces_b:
        raise InvalidArgumentError("both trace lists must be non-empty")
    lengths = {len(t.metrics) for t in list(traces_a) + list(traces_b)}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"clip counts differ across traces: {sorted(lengths)}")
    a, b = _curves(traces_a, metric), _curves(traces_b, metric)
    curve_a, curve_b = a.mean(axis=0), b.mean(axis=0)
    wins_a = wins_b = ties = 0
    for terminal_a, terminal_b in zip(a[:, -1], b[:, -1]):
        if terminal_a < terminal_b:
            wins_a += 1
        elif terminal_b < terminal_a:
            wins_b += 1
        else:
            ties += 1
    return RunComparison(
        metric=metric,
        curve_a=curve_a,
        curve_b=curve_b,
        terminal_a=float(curve_a[-1]),
        terminal_b=float(curve_b[-1]),
        slope_a=drift_slope(curve_a),
        slope_b=drift_slope(curve_b),
        wins_a=wins_a,
        wins_b=wins_b,
        ties=ties,
    )


def ablate(config: RunConfig, drop: Iterable[str], progress: bool = False) -> TrainingResult:
    """
    Error-recycling training with some error channels switched off.

    Args:
        config: Base run configuration
        drop: Subset of {"img", "vid", "noi"}

    Returns:
        TrainingResult whose ``config`` records the zeroed probabilities
    """
    ablated = config.without_channels(drop)
    return Trainer(ablated, progress=progress).train(TrainingMode.ERFT)
