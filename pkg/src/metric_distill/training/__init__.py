from .checkpoint import load_checkpoint, save_checkpoint
from .losses import contrastive_loss, kl_distill_loss, list_mle_loss
from .procedures import (
    Adam,
    EvalExample,
    TrainingConfig,
    distill_retriever,
    distill_retriever_direct,
    metric_eval_set,
    positive_eval_set,
    recall_at_1,
    train_ranker,
    warmup_retriever,
)

__all__ = [
    "Adam",
    "EvalExample",
    "TrainingConfig",
    "contrastive_loss",
    "distill_retriever",
    "distill_retriever_direct",
    "kl_distill_loss",
    "list_mle_loss",
    "load_checkpoint",
    "metric_eval_set",
    "positive_eval_set",
    "recall_at_1",
    "save_checkpoint",
    "train_ranker",
    "warmup_retriever",
]
