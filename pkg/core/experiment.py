"""
Experiment orchestrator for training, ablation, rollout and data export.
Combines all components and owns every file a run writes.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from .config import RunConfig, dump_config, parse_config
from .error_bank import load_bank, save_bank
from .errors import CheckpointNotFoundError, InvalidArgumentError
from .evaluator import MetricRow, write_metrics_csv
from .numerics import RngState
from .rollout import RolloutConfig, ablate, generate_long
from .synth_data import generate_clip, random_unit_frame, write_clips_csv
from .trainer import Trainer, TrainingMode, TrainingResult
from .utils import claim_output
from .velocity_net import load_params, save_params

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.erft"
BANK_NAME = "bank.erftbank"
LOSSES_NAME = "losses.csv"
CONFIG_NAME = "config.cfg"
SUMMARY_NAME = "summary.json"

GEN_DATA_STREAM = 3_000
INITIAL_FRAME_STREAM = 4_000


class RunSummary(BaseModel):
    """Record written next to a checkpoint."""

    run_id: str
    mode: str
    seed: int
    steps: int
    loss_final: Optional[float] = None
    dropped_channels: List[str] = []
    case_counts: Dict[str, int] = {}


@dataclass
class TrainArtifacts:
    run_dir: Path
    checkpoint: Path
    summary: RunSummary
    bank: Optional[Path] = None


def ablation_label(drop: Iterable[str]) -> str:
    dropped = sorted(set(drop))
    return "erft-no-" + "-".join(dropped) if dropped else TrainingMode.ERFT.value


def run_directory(config: RunConfig, label: str) -> Path:
    run_id = config.run_id or f"{label}-seed{config.seed}"
    return Path(config.output_dir) / run_id


def gen_data(config: RunConfig, num_clips: int, out: Optional[Union[str, Path]] = None) -> Path:
    """
    Write ``num_clips`` consecutive oracle clips of one trajectory to CSV.

    Returns:
        Path of the written clips.csv
    """
    if num_clips < 1:
        raise InvalidArgumentError(f"num_clips must be >= 1, got {num_clips}")
    spec = config.clip_spec()
    rng = RngState(config.seed, GEN_DATA_STREAM)
    frame = random_unit_frame(spec.dim, rng)
    clips = []
    for _ in range(num_clips):
        clip = generate_clip(spec, frame, rng)
        clips.append(clip)
        frame = clip.frames[-1]
    if out is None:
        out = Path(config.output_dir) / "clips.csv"
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_clips_csv(claim_output(out), clips)
    logger.info("Wrote %d clips to %s", num_clips, out)
    return out


def _persist(result: TrainingResult, config: RunConfig, label: str, drop: Sequence[str] = ()) -> TrainArtifacts:
    run_dir = run_directory(config, label)
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: claim_output(run_dir / name) for name in (CHECKPOINT_NAME, LOSSES_NAME, CONFIG_NAME, SUMMARY_NAME)}
    if result.mode is TrainingMode.ERFT:
        paths[BANK_NAME] = claim_output(run_dir / BANK_NAME)

    paths[CONFIG_NAME].write_text(dump_config(result.config))
    with paths[LOSSES_NAME].open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(result.losses, start=1):
            writer.writerow([step, repr(float(loss))])
    save_params(paths[CHECKPOINT_NAME], result.params)
    bank_path = None
    if result.mode is TrainingMode.ERFT and result.banks:
        bank_path = save_bank(paths[BANK_NAME], result.banks[0])

    summary = RunSummary(
        run_id=run_dir.name,
        mode=label,
        seed=config.seed,
        steps=len(result.losses),
        loss_final=result.loss_final,
        dropped_channels=sorted(set(drop)),
        case_counts=result.case_counts,
    )
    paths[SUMMARY_NAME].write_text(summary.model_dump_json(indent=2) + "\n")
    logger.info("Run %s written to %s", summary.run_id, run_dir)
    return TrainArtifacts(run_dir=run_dir, checkpoint=paths[CHECKPOINT_NAME], summary=summary, bank=bank_path)


def run_train(config: RunConfig, mode: Union[str, TrainingMode], progress: bool = False) -> TrainArtifacts:
    """
    Train a baseline or error-recycling model and write the run directory.

    Args:
        config: Resolved configuration
        mode: "baseline" or "erft"
        progress: Show a progress bar

    Returns:
        TrainArtifacts with the checkpoint path and run summary
    """
    mode = TrainingMode(mode)
    run_dir = run_directory(config, mode.value)
    claim_output(run_dir / CHECKPOINT_NAME)
    result = Trainer(config, progress=progress).train(mode)
    return _persist(result, config, mode.value)


def run_ablate(config: RunConfig, drop: Sequence[str], progress: bool = False) -> TrainArtifacts:
    """Error-recycling run with the ``drop`` channels disabled."""
    label = ablation_label(drop)
    run_dir = run_directory(config, label)
    claim_output(run_dir / CHECKPOINT_NAME)
    result = ablate(config, drop, progress=progress)
    return _persist(result, result.config, label, drop)


def load_summary(run_dir: Path) -> Optional[RunSummary]:
    path = run_dir / SUMMARY_NAME
    if not path.is_file():
        return None
    return RunSummary.model_validate_json(path.read_text())


def run_rollout(
    config: RunConfig,
    checkpoint: Union[str, Path],
    num_clips: int,
    seeds: Sequence[int],
    out: Union[str, Path],
) -> Path:
    """
    Roll out ``num_clips`` clips per seed from a trained checkpoint.

    The clip geometry and chaining rules come from the config dump beside the
    checkpoint when present, otherwise from ``config``.

    Returns:
        Path of the metrics CSV (one row per seed and clip)
    """
    checkpoint = Path(checkpoint)
    if not checkpoint.is_file():
        raise CheckpointNotFoundError(f"checkpoint not found: {checkpoint}")
    if not seeds:
        raise InvalidArgumentError("at least one seed is required")
    out = Path(out)
    claim_output(out)

    run_dir = checkpoint.parent
    if (run_dir / CONFIG_NAME).is_file():
        config = parse_config(run_dir / CONFIG_NAME)
    params = load_params(checkpoint)
    spec = config.clip_spec()
    if (params.dims.frames, params.dims.dim) != spec.clip_shape:
        raise InvalidArgumentError(
            f"checkpoint clips are {params.dims.frames}x{params.dims.dim}, config says {spec.frames}x{spec.dim}"
        )
    summary = load_summary(run_dir)
    run_id = summary.run_id if summary else run_dir.name
    mode = summary.mode if summary else "unknown"
    loss_final = summary.loss_final if summary else None

    rollout = RolloutConfig(
        num_clips=num_clips,
        motion_frames=config.motion_frames,
        reference_mode=config.reference_mode,
        schedule=config.schedule(),
    )
    condition = np.zeros(params.dims.cond_dim) if params.dims.cond_dim else None
    rows = []
    for seed in seeds:
        initial = random_unit_frame(spec.dim, RngState(seed, INITIAL_FRAME_STREAM))
        trace = generate_long(params, initial, condition, rollout, spec, RngState(seed))
        for clip_index, (norm_drift, step_drift) in enumerate(trace.metrics, start=1):
            rows.append(MetricRow(run_id, mode, seed, clip_index, norm_drift, step_drift, loss_final))
        logger.info("Seed %d: terminal norm drift %.4f", seed, trace.metrics[-1][0])

    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out, rows)
    logger.info("Wrote %d metric rows to %s", len(rows), out)
    return out


def export_bank_occupancy(bank_path: Union[str, Path], out: Union[str, Path]) -> Path:
    """Write per-grid occupancy of a bank snapshot as CSV."""
    bank = load_bank(bank_path)
    out = claim_output(Path(out))
    with out.open("w", newline="") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=["channel", "grid_index", "grid_t", "occupancy"], lineterminator="\n"
        )
        writer.writeheader()
        for row in bank.occupancy():
            writer.writerow({**row, "grid_t": repr(row["grid_t"])})
    return out
