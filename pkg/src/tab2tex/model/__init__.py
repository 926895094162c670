from .network import ModelConfig, Variant, greedy_decode, init_params, sequence_loss
from .training import AdamState, gradient_check, noam_lr, train_step

__all__ = [
    "ModelConfig",
    "Variant",
    "init_params",
    "sequence_loss",
    "greedy_decode",
    "AdamState",
    "noam_lr",
    "train_step",
    "gradient_check",
]
