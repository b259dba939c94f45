"""Synthetic data, persistence, training, evaluation and ablations."""

from .ablation import STANDARD_VARIANTS, ablate
from .evaluate import (build_report, evaluate, evaluate_model, oracle_ranking_report,
                       random_ranking_report, report_json, write_report)
from .io import (Checkpoint, ChecksumError, FormatError, MagicError, TruncatedError, VersionError,
                 load_checkpoint, read_dataset, save_checkpoint, write_dataset)
from .synthetic import SyntheticSample, generate_dataset, generate_sample, train_test_split
from .train import DivergenceError, train

__all__ = [
    "STANDARD_VARIANTS", "ablate", "build_report", "evaluate", "evaluate_model",
    "oracle_ranking_report", "random_ranking_report", "report_json", "write_report",
    "Checkpoint", "ChecksumError", "FormatError", "MagicError", "TruncatedError", "VersionError",
    "load_checkpoint", "read_dataset", "save_checkpoint", "write_dataset",
    "SyntheticSample", "generate_dataset", "generate_sample", "train_test_split",
    "DivergenceError", "train",
]
