"""
Synthetic clip source: a norm-preserving rotation system with a known oracle.

Frames evolve as ``f_{i+1} = R(angle) f_i + data_noise * N(0, I)`` where R rotates
each consecutive coordinate pair. Degradation of generated clips is measured on
two axes against this oracle: norm drift and per-step motion drift.
"""
import csv
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidArgumentError
from .numerics import RngState, Tensor, check_finite


class ReferenceMode(str, Enum):
    """How the conditioning frame for the next clip is derived."""

    LAST_FRAME = "last_frame"
    MOTION_FRAMES = "motion_frames"
    FIXED_ANCHOR = "fixed_anchor"


@dataclass(frozen=True)
class ClipSpec:
    """Geometry and dynamics of synthetic clips."""

    frames: int = 8
    dim: int = 8
    angle: float = 0.2
    data_noise: float = 0.01

    def __post_init__(self):
        if self.frames < 1:
            raise InvalidArgumentError(f"frames must be >= 1, got {self.frames}")
        if self.dim < 2 or self.dim % 2:
            raise InvalidArgumentError(f"dim must be even and >= 2, got {self.dim}")
        if not np.isfinite(self.angle):
            raise InvalidArgumentError(f"angle must be finite, got {self.angle}")
        if not (np.isfinite(self.data_noise) and self.data_noise >= 0):
            raise InvalidArgumentError(f"data_noise must be finite and >= 0, got {self.data_noise}")

    @cached_property
    def rotation(self) -> Tensor:
        return rotation_matrix(self.angle, self.dim)

    @property
    def clip_shape(self) -> Tuple[int, int]:
        return (self.frames, self.dim)


@dataclass
class Clip:
    frames: Tensor
    spec: ClipSpec


def rotation_matrix(angle: float, dim: int) -> Tensor:
    """Block-diagonal 2x2 rotation by ``angle`` on coordinate pairs."""
    c, s = np.cos(angle), np.sin(angle)
    matrix = np.zeros((dim, dim))
    for i in range(0, dim, 2):
        matrix[i, i] = c
        matrix[i, i + 1] = -s
        matrix[i + 1, i] = s
        matrix[i + 1, i + 1] = c
    return matrix


def _check_frame(spec: ClipSpec, frame: Tensor) -> Tensor:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (spec.dim,):
        raise InvalidArgumentError(
            f"frame shape {frame.shape} does not match dim {spec.dim}"
        )
    return frame


def oracle_next_frame(spec: ClipSpec, frame: Tensor) -> Tensor:
    return spec.rotation @ _check_frame(spec, frame)


def generate_clip(spec: ClipSpec, initial_frame: Tensor, rng: RngState) -> Clip:
    """
    Roll the dynamics forward from an initial frame.

    Args:
        spec: Clip geometry and dynamics
        initial_frame: Frame 0, shape [dim]
        rng: Random state for the data noise

    Returns:
        Clip with ``spec.frames`` frames, frame 0 equal to ``initial_frame``
    """
    frame = _check_frame(spec, initial_frame)
    frames = np.empty(spec.clip_shape)
    frames[0] = frame
    for i in range(1, spec.frames):
        nxt = spec.rotation @ frames[i - 1]
        if spec.data_noise > 0:
            nxt = nxt + spec.data_noise * rng.normal((spec.dim,))
        frames[i] = nxt
    return Clip(frames=frames, spec=spec)


def drift_metric(clip: Clip, reference_norm: float, spec: ClipSpec) -> Tuple[float, float]:
    """
    Measure a clip against the oracle dynamics.

    Args:
        clip: Clip to score
        reference_norm: Norm every frame should keep, must be > 0
        spec: Dynamics used as the oracle

    Returns:
        (norm_drift, step_drift), both relative to ``reference_norm``
    """
    if reference_norm <= 0:
        raise InvalidArgumentError(f"reference_norm must be > 0, got {reference_norm}")
    frames = np.asarray(clip.frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] != spec.dim:
        raise InvalidArgumentError(f"clip frames have shape {frames.shape}")
    norms = np.linalg.norm(frames, axis=1)
    norm_drift = float(np.mean(np.abs(norms - reference_norm)) / reference_norm)
    if frames.shape[0] < 2:
        return norm_drift, 0.0
    predicted = frames[:-1] @ spec.rotation.T
    steps = np.linalg.norm(frames[1:] - predicted, axis=1)
    return norm_drift, float(np.mean(steps) / reference_norm)


def random_unit_frame(dim: int, rng: RngState) -> Tensor:
    frame = rng.normal((dim,))
    return frame / np.linalg.norm(frame)


def oracle_context(spec: ClipSpec, frame: Tensor, count: int) -> Tensor:
    """The ``count`` noise-free frames ending at ``frame``, oldest first."""
    frame = _check_frame(spec, frame)
    inverse = spec.rotation.T
    context = np.empty((count, spec.dim))
    context[-1] = frame
    for i in range(count - 2, -1, -1):
        context[i] = inverse @ context[i + 1]
    return context


def reference_from_frames(
    frames: Tensor,
    mode: ReferenceMode,
    motion_frames: int,
    anchor: Optional[Tensor] = None,
) -> Tensor:
    """
    Derive the conditioning frame from preceding frames.

    Args:
        frames: Preceding frames, oldest first, shape [n, dim]
        mode: Reference derivation rule
        motion_frames: Number of trailing frames averaged in motion_frames mode
        anchor: Frame returned in fixed_anchor mode

    Returns:
        Reference frame, shape [dim]
    """
    mode = ReferenceMode(mode)
    if mode is ReferenceMode.FIXED_ANCHOR and anchor is not None:
        return np.array(anchor, dtype=np.float64)
    if mode is ReferenceMode.MOTION_FRAMES:
        if motion_frames < 1 or motion_frames > len(frames):
            raise InvalidArgumentError(
                f"motion_frames={motion_frames} but only {len(frames)} frames available"
            )
        return np.mean(frames[-motion_frames:], axis=0)
    return np.array(frames[-1], dtype=np.float64)


def sample_training_pair(
    spec: ClipSpec,
    rng: RngState,
    reference_mode: ReferenceMode = ReferenceMode.LAST_FRAME,
    motion_frames: int = 5,
    motion_probability: float = 1.0,
) -> Tuple[Tensor, Tensor]:
    """
    Draw one (reference, clip) training pair from a fresh trajectory.

    The trajectory starts at a random unit frame; the leading context frames
    produce the reference the same way a rollout derives it from the previous
    clip, and the following ``spec.frames`` frames are the target clip. With
    probability ``1 - motion_probability`` the reference is a zero frame.

    Returns:
        (reference [dim], clip [frames x dim])
    """
    mode = ReferenceMode(reference_mode)
    context_len = motion_frames if mode is ReferenceMode.MOTION_FRAMES else 1
    initial = random_unit_frame(spec.dim, rng)
    sequence = generate_clip(
        ClipSpec(
            frames=context_len + spec.frames,
            dim=spec.dim,
            angle=spec.angle,
            data_noise=spec.data_noise,
        ),
        initial,
        rng,
    ).frames
    context, clip = sequence[:context_len], sequence[context_len:]
    # fixed_anchor trains like last_frame: the anchor precedes the first clip
    reference = reference_from_frames(context, mode, motion_frames)
    if not rng.bernoulli(motion_probability):
        reference = np.zeros(spec.dim)
    check_finite(clip, InvalidArgumentError, "training clip")
    return reference, clip


def write_clips_csv(path: Union[str, Path], clips: Sequence[Clip]) -> Path:
    """
    Dump clips as rows ``clip_index,frame_index,d0..d{D-1}`` (indices 1-based).
    """
    path = Path(path)
    if not clips:
        raise InvalidArgumentError("no clips to write")
    dim = clips[0].spec.dim
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["clip_index", "frame_index"] + [f"d{j}" for j in range(dim)])
        for clip_index, clip in enumerate(clips, start=1):
            for frame_index, frame in enumerate(clip.frames, start=1):
                writer.writerow([clip_index, frame_index] + [repr(float(x)) for x in frame])
    return path
