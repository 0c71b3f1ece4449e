"""Metrics and closed-loop evaluation."""

from .metrics import (
    MODES,
    EvalReport,
    RecoverySignature,
    error_metrics,
    fpc,
    mode_histogram,
    perturbation_success,
    recovery_signature,
    tracking_success,
    winding_mode_oracle,
)
from .rollout import (
    ExpertActor,
    StudentActor,
    eval_perturbation,
    eval_perturbation_ood,
    eval_token_generation,
    eval_tracking,
    id_kick_batch,
    make_actor,
    ood_kick_batch,
)

__all__ = [
    "EvalReport",
    "ExpertActor",
    "MODES",
    "RecoverySignature",
    "StudentActor",
    "error_metrics",
    "eval_perturbation",
    "eval_perturbation_ood",
    "eval_token_generation",
    "eval_tracking",
    "fpc",
    "id_kick_batch",
    "make_actor",
    "mode_histogram",
    "ood_kick_batch",
    "perturbation_success",
    "recovery_signature",
    "tracking_success",
    "winding_mode_oracle",
]
