"""
Core modules for erft-lab: error-recycling fine-tuning of flow-matching
clip generators on a synthetic rotation task.
"""
from .config import RunConfig, parse_config
from .error_bank import ErrorBank, ErrorGatherer
from .error_recycling import InjectionConfig, erft_train_step
from .errors import ErftError
from .evaluator import run_report
from .flow_matching import TimestepSchedule, euler_sample, fm_train_step
from .rollout import OracleVelocityField, RolloutConfig, compare_runs, generate_long
from .synth_data import ClipSpec, ReferenceMode
from .trainer import Trainer, TrainingMode
from .velocity_net import NetDims, init_params

__all__ = [
    "RunConfig",
    "parse_config",
    "ErrorBank",
    "ErrorGatherer",
    "InjectionConfig",
    "erft_train_step",
    "ErftError",
    "run_report",
    "TimestepSchedule",
    "euler_sample",
    "fm_train_step",
    "OracleVelocityField",
    "RolloutConfig",
    "compare_runs",
    "generate_long",
    "ClipSpec",
    "ReferenceMode",
    "Trainer",
    "TrainingMode",
    "NetDims",
    "init_params",
]
