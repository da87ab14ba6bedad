"""Per-agent training, checkpoints, parallel rollouts and evaluation."""
from .checkpoint import (Checkpoint, CheckpointError, checkpoint_from_policy, decode_checkpoint,
                         encode_checkpoint, load_checkpoint, policy_from_checkpoint, save_checkpoint)
from .rollout import AgentCountError, EpisodeResult, EvalReport, ExpertReplay, evaluate, rollout
from .training import (VARIANTS, AblationReport, ablation_suite, evaluate_checkpoints, train_agent,
                       train_or_load, untrained_checkpoint)

__all__ = [
    "Checkpoint", "CheckpointError", "checkpoint_from_policy", "decode_checkpoint", "encode_checkpoint",
    "load_checkpoint", "policy_from_checkpoint", "save_checkpoint", "AgentCountError", "EpisodeResult",
    "EvalReport", "ExpertReplay", "evaluate", "rollout", "VARIANTS", "AblationReport", "ablation_suite",
    "evaluate_checkpoints", "train_agent", "train_or_load", "untrained_checkpoint",
]
