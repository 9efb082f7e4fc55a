"""Joint sparse + condition-number-constrained adversarial training, desk scale."""

from .attacks import AttackSpec, fgsm, pgd
from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_dataset, load_idx, synth_blobs
from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    FormatError,
    NumericError,
    StateError,
    TscncError,
    ValidationError,
)
from .metrics import (
    check_eq7,
    condition_constraint_grad,
    condition_constraint_loss,
    condition_report,
    local_lipschitz_estimate,
    robustness_radius,
)
from .network import Network, build_network, cross_entropy, forward
from .pruning import PruneSpec, apply_masks, prune_report, saliency, select_mask
from .tensor_ops import INFINITE, condition_number, spectral_norm, svd
from .trainer import TrainConfig, config_from_dict, evaluate, run_tscnc

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "fgsm", "pgd",
    "load_checkpoint", "save_checkpoint",
    "load_dataset", "load_idx", "synth_blobs",
    "TscncError", "DimensionError", "ValidationError", "NumericError",
    "StateError", "FormatError", "ConfigError", "DivergenceError",
    "check_eq7", "condition_constraint_grad", "condition_constraint_loss",
    "condition_report", "local_lipschitz_estimate", "robustness_radius",
    "Network", "build_network", "cross_entropy", "forward",
    "PruneSpec", "apply_masks", "prune_report", "saliency", "select_mask",
    "INFINITE", "condition_number", "spectral_norm", "svd",
    "TrainConfig", "config_from_dict", "evaluate", "run_tscnc",
]
