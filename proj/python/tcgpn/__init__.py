from ._tcgpn import (
    CheckpointError,
    Dataset,
    Model,
    TrainingError,
    backtest,
    compute_metrics,
    daily_ic,
    default_config,
    finetune,
    gaussian_mask,
    gradcheck,
    init_model,
    load_dataset,
    mean_ic,
    persistence_ic,
    predict,
    pretrain,
    resolve_config,
)

__all__ = [
    "CheckpointError",
    "Dataset",
    "Model",
    "TrainingError",
    "backtest",
    "compute_metrics",
    "daily_ic",
    "default_config",
    "finetune",
    "gaussian_mask",
    "gradcheck",
    "init_model",
    "load_dataset",
    "mean_ic",
    "persistence_ic",
    "predict",
    "pretrain",
    "resolve_config",
]
