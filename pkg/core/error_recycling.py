"""
Error recycling: inject banked errors into clean inputs, regress the
error-recycled velocity that points back to the clean latent, and curate new
errors from the same forward pass by one-step forward/backward integration.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np

from .error_bank import ChannelAvailability, CuratedError, ErrorBank, nearest_grid
from .errors import InvalidArgumentError
from .flow_matching import TimestepSchedule, TrainBatch, interpolate_batch, regression_step
from .numerics import RngState, Tensor, check_same_shape, uniform_temporal_slice
from .velocity_net import AdamState, VelocityNetParams, assemble_inputs

CHANNELS = ("img", "vid", "noi")


@dataclass(frozen=True)
class InjectionConfig:
    """Injection probabilities per channel and the clean-input probability."""

    p_vid: float = 0.9
    p_img: float = 0.9
    p_noi: float = 0.01
    p_clean: float = 0.5

    def __post_init__(self):
        for name in ("p_vid", "p_img", "p_noi", "p_clean"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {value}")

    def without(self, channels: Iterable[str]) -> "InjectionConfig":
        """Copy with the named channels' injection probabilities set to 0."""
        updates = {}
        for channel in channels:
            if channel not in CHANNELS:
                raise InvalidArgumentError(f"unknown error channel {channel!r}")
            updates[f"p_{channel}"] = 0.0
        return replace(self, **updates)


class Indicators(NamedTuple):
    vid: int
    noi: int
    img: int


class CaseTag(str, Enum):
    CLEAN = "clean"
    START_INJECTED = "start_injected"
    END_INJECTED = "end_injected"
    MIXED = "mixed"


@dataclass
class ErrorTriple:
    e_vid: Tensor
    e_noi: Tensor
    e_img: Tensor


@dataclass
class InjectionOutcome:
    x_vid_tilde: Tensor
    x_noi_tilde: Tensor
    x_img_tilde: Tensor
    indicators: Indicators
    case_tag: CaseTag


@dataclass
class RecycledTargets:
    v_rcy: Tensor
    x_rcy_vid: Tensor
    x_rcy_noi: Tensor


def sample_indicators(
    config: InjectionConfig, availability: ChannelAvailability, rng: RngState
) -> Indicators:
    """
    Draw the injection indicators for one sample.

    With probability p_clean nothing is injected; otherwise each channel is an
    independent Bernoulli draw. Channels whose bank region is empty are off.
    """
    if rng.bernoulli(config.p_clean):
        return Indicators(0, 0, 0)
    vid = rng.bernoulli(config.p_vid)
    noi = rng.bernoulli(config.p_noi)
    img = rng.bernoulli(config.p_img)
    return Indicators(
        vid=int(vid and availability.vid),
        noi=int(noi and availability.noi),
        img=int(img and availability.img),
    )


def case_tag_for(indicators: Indicators) -> CaseTag:
    start = indicators.noi or indicators.img
    if indicators.vid and start:
        return CaseTag.MIXED
    if indicators.vid:
        return CaseTag.END_INJECTED
    if start:
        return CaseTag.START_INJECTED
    return CaseTag.CLEAN


def inject(
    clean: Tuple[Tensor, Tensor, Tensor], errors: ErrorTriple, indicators: Indicators
) -> InjectionOutcome:
    """
    Add errors to the clean (X_vid, X_noi, X_img) where the indicator is set.

    Inputs whose indicator is 0 are returned unchanged, bit for bit.
    """
    x_vid, x_noi, x_img = (np.asarray(x, dtype=np.float64) for x in clean)
    check_same_shape(x_vid, errors.e_vid, "inject vid")
    check_same_shape(x_noi, errors.e_noi, "inject noi")
    check_same_shape(x_img, errors.e_img, "inject img")
    return InjectionOutcome(
        x_vid_tilde=x_vid + errors.e_vid if indicators.vid else x_vid.copy(),
        x_noi_tilde=x_noi + errors.e_noi if indicators.noi else x_noi.copy(),
        x_img_tilde=x_img + errors.e_img if indicators.img else x_img.copy(),
        indicators=indicators,
        case_tag=case_tag_for(indicators),
    )


def _check_t(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")


def approximate_predictions(x_t_tilde: Tensor, v_hat: Tensor, t: float) -> Tuple[Tensor, Tensor]:
    """One-step forward integration to t=1 and backward integration to t=0."""
    _check_t(t)
    check_same_shape(x_t_tilde, v_hat, "approximate_predictions")
    return x_t_tilde + (1.0 - t) * v_hat, x_t_tilde - t * v_hat


def recycled_targets(x_vid: Tensor, x_noi_tilde: Tensor, x_t_tilde: Tensor, t: float) -> RecycledTargets:
    """
    Error-recycled velocity and the latent/noise it integrates to.

    The velocity always points to the clean latent; the recycled noise is the
    backward one-step integral of that velocity from the current state.
    """
    _check_t(t)
    check_same_shape(x_vid, x_noi_tilde, "recycled_targets")
    check_same_shape(x_vid, x_t_tilde, "recycled_targets")
    v_rcy = x_vid - x_noi_tilde
    return RecycledTargets(
        v_rcy=v_rcy,
        x_rcy_vid=np.array(x_vid, dtype=np.float64),
        x_rcy_noi=x_t_tilde - t * v_rcy,
    )


def curate_errors(
    x_vid_hat: Tensor, x_noi_hat: Tensor, x_rcy_vid: Tensor, x_rcy_noi: Tensor
) -> Tuple[Tensor, Tensor]:
    check_same_shape(x_vid_hat, x_rcy_vid, "curate_errors")
    check_same_shape(x_noi_hat, x_rcy_noi, "curate_errors")
    return x_vid_hat - x_rcy_vid, x_noi_hat - x_rcy_noi


def derive_image_error(e_vid: Tensor, rng: RngState) -> Tensor:
    """One uniformly chosen frame of a video-latent error."""
    return uniform_temporal_slice(e_vid, rng)


@dataclass
class PreparedBatch:
    """
    Error-injected training samples with their recycled targets.

    Shapes: x_vid, x_vid_tilde, x_noi_tilde, x_t_tilde, v_rcy [B, frames, dim];
    x_img_tilde [B, dim]; conditions [B, cond_dim]; timesteps [B].
    """

    x_vid: Tensor
    x_vid_tilde: Tensor
    x_noi_tilde: Tensor
    x_img_tilde: Tensor
    x_t_tilde: Tensor
    v_rcy: Tensor
    conditions: Tensor
    timesteps: Tensor
    cases: List[CaseTag] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.x_vid)

    @classmethod
    def concat(cls, parts: Sequence["PreparedBatch"]) -> "PreparedBatch":
        arrays = {
            name: np.concatenate([getattr(p, name) for p in parts])
            for name in (
                "x_vid", "x_vid_tilde", "x_noi_tilde", "x_img_tilde",
                "x_t_tilde", "v_rcy", "conditions", "timesteps",
            )
        }
        return cls(**arrays, cases=[c for p in parts for c in p.cases])


def prepare_injected_batch(
    batch: TrainBatch,
    bank: ErrorBank,
    config: InjectionConfig,
    schedule: TimestepSchedule,
    rng: RngState,
) -> PreparedBatch:
    """
    Resample banked errors for each sample, inject them and build the targets.

    Args:
        batch: Clean training batch
        bank: Error bank view to resample from
        config: Injection probabilities
        schedule: Schedule used to map t to a bank grid
        rng: Injection random state

    Returns:
        PreparedBatch aligned with ``batch``
    """
    vid_tilde, noi_tilde, img_tilde, cases = [], [], [], []
    for clip, noise, reference, t in zip(batch.clips, batch.noises, batch.references, batch.timesteps):
        n = nearest_grid(float(t), schedule)
        indicators = sample_indicators(config, bank.availability(n), rng)
        errors = ErrorTriple(
            e_vid=bank.sample_vid(n, rng) if indicators.vid else np.zeros_like(clip),
            e_noi=bank.sample_noi(n, rng) if indicators.noi else np.zeros_like(noise),
            e_img=bank.sample_img(rng) if indicators.img else np.zeros_like(reference),
        )
        outcome = inject((clip, noise, reference), errors, indicators)
        vid_tilde.append(outcome.x_vid_tilde)
        noi_tilde.append(outcome.x_noi_tilde)
        img_tilde.append(outcome.x_img_tilde)
        cases.append(outcome.case_tag)
    x_vid_tilde = np.stack(vid_tilde)
    x_noi_tilde = np.stack(noi_tilde)
    return PreparedBatch(
        x_vid=batch.clips,
        x_vid_tilde=x_vid_tilde,
        x_noi_tilde=x_noi_tilde,
        x_img_tilde=np.stack(img_tilde),
        x_t_tilde=interpolate_batch(x_vid_tilde, x_noi_tilde, batch.timesteps),
        v_rcy=batch.clips - x_noi_tilde,
        conditions=batch.conditions,
        timesteps=batch.timesteps,
        cases=cases,
    )


def curate_batch(prepared: PreparedBatch, predictions: Tensor) -> List[CuratedError]:
    """
    Curate (e_vid, e_noi) for every sample from the loss forward pass.

    Args:
        prepared: Injected samples
        predictions: [B, frames * dim] predicted velocities

    Returns:
        One CuratedError per sample, tagged with the sample's t
    """
    predictions = np.asarray(predictions).reshape(prepared.x_vid.shape)
    curated = []
    for i in range(prepared.size):
        t = float(prepared.timesteps[i])
        x_vid_hat, x_noi_hat = approximate_predictions(prepared.x_t_tilde[i], predictions[i], t)
        targets = recycled_targets(prepared.x_vid[i], prepared.x_noi_tilde[i], prepared.x_t_tilde[i], t)
        e_vid, e_noi = curate_errors(x_vid_hat, x_noi_hat, targets.x_rcy_vid, targets.x_rcy_noi)
        curated.append(CuratedError(t=t, e_vid=e_vid, e_noi=e_noi))
    return curated


@dataclass
class WorkerShard:
    """One simulated worker's batch, bank view and injection random state."""

    batch: TrainBatch
    bank: ErrorBank
    rng: RngState


@dataclass
class ErftStepResult:
    params: VelocityNetParams
    loss: float
    curated: List[List[CuratedError]]
    case_counts: Dict[str, int]


def erft_sharded_step(
    params: VelocityNetParams,
    shards: Sequence[WorkerShard],
    config: InjectionConfig,
    schedule: TimestepSchedule,
    lr: float,
    optimizer: AdamState,
) -> ErftStepResult:
    """
    Error-recycling step over several workers' samples.

    The injected samples of all shards are stacked and a single optimizer step
    is taken on their mean loss; errors are curated per shard from the same
    (pre-update) predictions.
    """
    prepared = [prepare_injected_batch(s.batch, s.bank, config, schedule, s.rng) for s in shards]
    merged = PreparedBatch.concat(prepared)
    inputs = assemble_inputs(
        params.dims, merged.x_t_tilde, merged.x_img_tilde, merged.conditions, merged.timesteps
    )
    targets = merged.v_rcy.reshape(merged.size, -1)
    new_params, loss, predictions = regression_step(params, inputs, targets, lr, optimizer)

    curated, offset = [], 0
    for part in prepared:
        curated.append(curate_batch(part, predictions[offset:offset + part.size]))
        offset += part.size
    counts = {tag.value: 0 for tag in CaseTag}
    for case in merged.cases:
        counts[case.value] += 1
    return ErftStepResult(new_params, loss, curated, counts)


def erft_train_step(
    params: VelocityNetParams,
    batch: TrainBatch,
    bank: ErrorBank,
    config: InjectionConfig,
    schedule: TimestepSchedule,
    lr: float,
    optimizer: AdamState,
    rng: RngState,
) -> Tuple[VelocityNetParams, float, List[CuratedError]]:
    """
    Single-worker error-recycling step.

    Args:
        params: Current parameters
        batch: Clean training batch
        bank: Error bank to resample from (not modified)
        config: Injection probabilities
        schedule: Timestep schedule
        lr: Learning rate
        optimizer: Optimizer state, advanced in place
        rng: Injection random state

    Returns:
        (updated params, loss before the update, curated errors per sample)
    """
    result = erft_sharded_step(params, [WorkerShard(batch, bank, rng)], config, schedule, lr, optimizer)
    return result.params, result.loss, result.curated[0]
