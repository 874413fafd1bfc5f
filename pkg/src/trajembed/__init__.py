"""Composable self-supervised trajectory embedding pipeline in numpy."""

from .adapters import AdapterSpec, MetricsReport, compute_metrics, run_adapter, similar_search
from .data import RoadNetwork, SyntheticConfig, Trajectory, TrajectoryDataset, generate_synthetic, split_dataset
from .estimators import TrajectoryEmbedder, TrajectoryTaskEstimator
from .model import ModelConfig, TrajectoryModel
from .pretrain import PretrainConfig, build_model, load_checkpoint, pretrain, save_checkpoint
from .registry import METHOD_NAMES, MethodPreset, build_method

__all__ = [
    "AdapterSpec", "METHOD_NAMES", "MethodPreset", "MetricsReport", "ModelConfig", "PretrainConfig",
    "RoadNetwork", "SyntheticConfig", "Trajectory", "TrajectoryDataset", "TrajectoryEmbedder",
    "TrajectoryModel", "TrajectoryTaskEstimator", "build_method", "build_model", "compute_metrics",
    "generate_synthetic", "load_checkpoint", "pretrain", "run_adapter", "save_checkpoint", "similar_search",
    "split_dataset",
]
