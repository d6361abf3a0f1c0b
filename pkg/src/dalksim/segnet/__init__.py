from .loss import RegionMap, convex_shape_loss, loss, loss_and_grad, region_map
from .network import PAD, SegNet, preprocess
from .train import (
    FoldMetrics,
    TrainConfig,
    TrainResult,
    TrainSample,
    evaluate,
    grouped_folds,
    load_dataset,
    read_manifest,
    train,
    train_single,
    write_manifest,
)

__all__ = [
    "PAD", "SegNet", "preprocess",
    "RegionMap", "region_map", "loss", "loss_and_grad", "convex_shape_loss",
    "TrainConfig", "TrainSample", "TrainResult", "FoldMetrics",
    "grouped_folds", "train", "train_single", "evaluate",
    "write_manifest", "read_manifest", "load_dataset",
]
