"""Progressive pseudo-labeling with relative-distance sampling for few-example re-ID."""

from ardloop.core import (
    DistanceRecord,
    LabelBook,
    Tracklet,
    l2_distance,
    pairwise_l2,
)
from ardloop.evalkit import cmc_map, label_accuracy, selection_quality
from ardloop.learner import LearnerConfig, Model, embed, fit, loss_and_grad
from ardloop.orchestrator import IterationRecord, RunConfig, RunResult, run
from ardloop.pam import aggregate_tracklet, split_rows
from ardloop.pseudo_label import estimate_labels
from ardloop.sampling import (
    ArdState,
    SamplerConfig,
    absolute_select,
    ard_step,
    k_probe,
    linear_growth_select,
    srd_converged,
    srd_select,
)
from ardloop.synthworld import WorldConfig, generate, split_one_example, split_ratio

__version__ = "0.1.0"

__all__ = [
    "ArdState",
    "DistanceRecord",
    "IterationRecord",
    "LabelBook",
    "LearnerConfig",
    "Model",
    "RunConfig",
    "RunResult",
    "SamplerConfig",
    "Tracklet",
    "WorldConfig",
    "absolute_select",
    "aggregate_tracklet",
    "ard_step",
    "cmc_map",
    "embed",
    "estimate_labels",
    "fit",
    "generate",
    "k_probe",
    "l2_distance",
    "label_accuracy",
    "linear_growth_select",
    "loss_and_grad",
    "pairwise_l2",
    "run",
    "selection_quality",
    "split_one_example",
    "split_ratio",
    "split_rows",
    "srd_converged",
    "srd_select",
]
