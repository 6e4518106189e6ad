"""
Training loop shared by baseline flow matching, error-recycling fine-tuning
and ablations, with simulated data-parallel workers.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

from tqdm import tqdm

from .config import RunConfig
from .error_bank import ErrorBank, ErrorGatherer
from .error_recycling import CaseTag, InjectionConfig, WorkerShard, erft_sharded_step
from .errors import TrainingDivergedError
from .flow_matching import TrainBatch, fm_train_step, make_train_batch
from .numerics import RngState
from .velocity_net import AdamState, VelocityNetParams, init_params

logger = logging.getLogger(__name__)

# Philox stream ids derived from the run seed
INIT_STREAM = 1
INJECTION_STREAM = 1_000
DATA_STREAM = 2_000


class TrainingMode(str, Enum):
    BASELINE = "baseline"
    ERFT = "erft"


@dataclass
class TrainingResult:
    config: RunConfig
    mode: TrainingMode
    params: VelocityNetParams
    losses: List[float] = field(default_factory=list)
    banks: List[ErrorBank] = field(default_factory=list)
    case_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def loss_final(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


class Trainer:
    """Runs one training job described by a RunConfig."""

    def __init__(
        self,
        config: RunConfig,
        injection: Optional[InjectionConfig] = None,
        progress: bool = False,
    ):
        """
        Initialize the trainer.

        Args:
            config: Resolved run configuration
            injection: Injection probabilities (default: taken from config)
            progress: Show a tqdm progress bar
        """
        self.config = config
        self.injection = injection or config.injection_config()
        self.progress = progress
        self.spec = config.clip_spec()
        self.schedule = config.schedule()

    def _worker_batches(self, data_rngs: List[RngState]) -> List[TrainBatch]:
        c = self.config
        return [
            make_train_batch(
                self.spec,
                c.batch_size,
                self.schedule,
                rng,
                reference_mode=c.reference_mode,
                motion_frames=c.motion_frames,
                motion_probability=c.motion_probability,
                cond_dim=c.cond_dim,
            )
            for rng in data_rngs
        ]

    def train(self, mode: TrainingMode) -> TrainingResult:
        """
        Train from a fresh initialization.

        Args:
            mode: baseline (clean inputs) or erft (error recycling)

        Returns:
            TrainingResult with final parameters and per-step losses
        """
        mode = TrainingMode(mode)
        c = self.config
        params = init_params(c.net_dims(), RngState(c.seed, INIT_STREAM))
        optimizer = AdamState(mode=c.optimizer)
        data_rngs = [RngState(c.seed, DATA_STREAM + w) for w in range(c.num_workers)]
        injection_rngs = [RngState(c.seed, INJECTION_STREAM + w) for w in range(c.num_workers)]
        gatherer = ErrorGatherer(
            ErrorBank(self.schedule, c.max_errors_per_grid), c.num_workers, c.warmup_iterations
        )
        result = TrainingResult(config=c, mode=mode, params=params)
        result.case_counts = {tag.value: 0 for tag in CaseTag}

        logger.info(
            "Training %s: %d steps, %d workers x %d samples, lr=%g",
            mode.value, c.steps, c.num_workers, c.batch_size, c.learning_rate,
        )
        steps = tqdm(range(1, c.steps + 1), desc=mode.value, disable=not self.progress)
        for step in steps:
            batches = self._worker_batches(data_rngs)
            try:
                if mode is TrainingMode.BASELINE:
                    params, loss = fm_train_step(params, TrainBatch.concat(batches), c.learning_rate, optimizer)
                else:
                    if step == 1 and gatherer.shared.total() == 0:
                        logger.info("Error bank is empty; samples fall back to clean inputs until errors are banked")
                    shards = [
                        WorkerShard(batch, gatherer.bank_for(w), injection_rngs[w])
                        for w, batch in enumerate(batches)
                    ]
                    outcome = erft_sharded_step(
                        params, shards, self.injection, self.schedule, c.learning_rate, optimizer
                    )
                    params, loss = outcome.params, outcome.loss
                    gatherer.submit(step, outcome.curated)
                    for tag, count in outcome.case_counts.items():
                        result.case_counts[tag] += count
            except TrainingDivergedError as e:
                raise TrainingDivergedError(f"step {step}: {e}") from e
            result.losses.append(loss)
            if step % 500 == 0:
                logger.debug("step %d loss %.6f", step, loss)

        result.params = params
        if mode is TrainingMode.ERFT:
            result.banks = gatherer.banks
            logger.info("Case counts: %s", result.case_counts)
        logger.info("Finished %s training, final loss %s", mode.value, result.loss_final)
        return result
