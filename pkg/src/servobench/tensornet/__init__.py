from .tensor import Tensor, affine, concat, conv2d, maxpool2d
from .model import (
    Conv,
    Dense,
    Flatten,
    MaxPool,
    NetworkSpec,
    Prediction,
    Relu,
    SiameseModel,
    default_network_spec,
    init_uniform,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    all_pairs,
    evaluate_mean_errors,
    identity_baseline_errors,
    loss,
    pose_batch_to_labels,
    train,
)

__all__ = [
    "Tensor", "affine", "concat", "conv2d", "maxpool2d",
    "Conv", "Dense", "Flatten", "MaxPool", "NetworkSpec", "Prediction", "Relu",
    "SiameseModel", "default_network_spec", "init_uniform",
    "load_checkpoint", "save_checkpoint",
    "AdamState", "TrainConfig", "TrainingDiverged", "adam_step", "all_pairs",
    "evaluate_mean_errors", "identity_baseline_errors", "loss",
    "pose_batch_to_labels", "train",
]
