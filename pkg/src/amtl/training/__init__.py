from amtl.training.loop import Item, StepRecord, TrainConfig, TrainLog, evaluate_fit, heldout_loss, prepare_items, train
from amtl.training.optim import AdamConfig, AdamState, ScheduleConfig, adam_step, clip_grad_norm, tri_stage_lr
from amtl.training.pretrain import PretrainConfig, PretrainLog, pretrain, sample_span_mask
from amtl.training.pseudo import PseudoLabelResult, pseudo_label

__all__ = [
    "AdamConfig",
    "AdamState",
    "Item",
    "PretrainConfig",
    "PretrainLog",
    "PseudoLabelResult",
    "ScheduleConfig",
    "StepRecord",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "clip_grad_norm",
    "evaluate_fit",
    "heldout_loss",
    "prepare_items",
    "pretrain",
    "pseudo_label",
    "sample_span_mask",
    "train",
]
