"""scikit-learn style wrappers around pre-training and downstream adapters."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .adapters import AdapterResult, AdapterSpec, resolve_strategy, run_adapter
from .data import RoadNetwork, Trajectory, TrajectoryDataset, split_dataset
from .model import ModelConfig
from .pretrain import PretrainConfig, build_model, pretrain
from .registry import resolve_method


def check_trajectories(X, min_points: int = 2) -> list[Trajectory]:
    """A list of trajectories, each with at least ``min_points`` points."""
    if isinstance(X, TrajectoryDataset):
        X = X.trajectories
    if isinstance(X, Trajectory):
        raise TypeError("expected a sequence of trajectories, got a single Trajectory")
    try:
        trajs = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of trajectories, got {type(X).__name__}") from None
    if not trajs:
        raise ValueError("expected at least one trajectory")
    for i, t in enumerate(trajs):
        if not isinstance(t, Trajectory):
            raise TypeError(f"item {i} is {type(t).__name__}, not a Trajectory")
        if len(t) < min_points:
            raise ValueError(f"trajectory {t.id!r} has {len(t)} points; at least {min_points} required")
    return trajs


def check_network(network, method) -> RoadNetwork | None:
    """Validate that segment-token methods get a road network."""
    preset = resolve_method(method)
    if network is not None and not isinstance(network, RoadNetwork):
        raise TypeError(f"road_network must be a RoadNetwork, got {type(network).__name__}")
    if preset.tokens == "segment" and network is None:
        raise ValueError(f"method {preset.name!r} map-matches points and needs road_network")
    return network


class TrajectoryEmbedder(TransformerMixin, BaseEstimator):
    """Pre-train a method preset on trajectories; ``transform`` returns embeddings of shape (n, dim)."""

    def __init__(self, method="t2vec", road_network=None, dim=64, epochs=20, batch_size=64, lr=1e-3,
                 seed=0, max_batches=None):
        self.method = method
        self.road_network = road_network
        self.dim = dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.max_batches = max_batches

    def fit(self, X, y=None):
        trajs = check_trajectories(X)
        network = check_network(self.road_network, self.method)
        self.model_ = build_model(self.method, trajs, network, ModelConfig(dim=self.dim), seed=self.seed)
        cfg = PretrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, seed=self.seed,
                             max_batches=self.max_batches)
        self.history_ = pretrain(self.model_, trajs, cfg).history
        self.n_features_out_ = self.dim
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.embed_trajectories(check_trajectories(X))


class TrajectoryTaskEstimator(BaseEstimator):
    """Downstream predictor: pre-train (unless ``no-pretrain``), then train a head for ``task``.

    Targets come from the trajectories themselves: the final segment for
    ``destination``, travel time for ``eta`` and ``Trajectory.label`` for
    ``classification``. ``fit`` holds out the latest ``eval_fraction`` of
    trajectories (by start time) for early stopping.
    """

    def __init__(self, task="destination", method="t2vec", road_network=None, strategy="full", dim=64,
                 pretrain_epochs=20, finetune_epochs=50, patience=10, omit=5, batch_size=64, lr=1e-3,
                 eval_fraction=0.1, seed=0):
        self.task = task
        self.method = method
        self.road_network = road_network
        self.strategy = strategy
        self.dim = dim
        self.pretrain_epochs = pretrain_epochs
        self.finetune_epochs = finetune_epochs
        self.patience = patience
        self.omit = omit
        self.batch_size = batch_size
        self.lr = lr
        self.eval_fraction = eval_fraction
        self.seed = seed

    def fit(self, X, y=None):
        trajs = check_trajectories(X)
        network = check_network(self.road_network, self.method)
        strategy = resolve_strategy(self.strategy)
        if not 0 < self.eval_fraction < 1:
            raise ValueError("eval_fraction must lie in (0, 1)")
        ordered = sorted(trajs, key=lambda t: (t.start_time, t.id))
        cut = len(ordered) - max(1, int(round(self.eval_fraction * len(ordered))))
        if cut < 1:
            raise ValueError("too few trajectories to hold out an evaluation split")
        train, valid = ordered[:cut], ordered[cut:]
        model = build_model(self.method, train, network, ModelConfig(dim=self.dim), seed=self.seed)
        epochs = 0 if strategy == "no-pretrain" else self.pretrain_epochs
        pretrain(model, train, PretrainConfig(epochs=epochs, batch_size=self.batch_size, seed=self.seed))
        spec = AdapterSpec(self.task, omit=self.omit, epochs=self.finetune_epochs, patience=self.patience,
                           batch_size=self.batch_size, lr=self.lr, seed=self.seed)
        self.result_: AdapterResult = run_adapter(model, spec, strategy, (train, valid, valid), network)
        self.eval_metrics_ = self.result_.report.metrics
        return self

    def predict(self, X) -> np.ndarray:
        """Class ids, or minutes from each trajectory's first point to arrival for ``eta``."""
        check_is_fitted(self, "result_")
        return self.result_.predict(check_trajectories(X))

    def score(self, X, y=None) -> float:
        """Top-1 accuracy for classification tasks, negative MAE in minutes for ``eta``."""
        check_is_fitted(self, "result_")
        adapter = self.result_.adapter
        data = adapter.examples(self.result_.model, check_trajectories(X))
        if not len(data.targets):
            raise ValueError("no trajectories long enough to score")
        pred = self.predict(data.inputs)
        if self.task == "eta":
            return -float(np.mean(np.abs(pred - data.targets / 60.0)))
        return float(np.mean(pred == data.targets))


def split_trajectories(trajs: Sequence[Trajectory], interval: float = 15.0):
    """(train, eval, test) lists in an 8:1:1 split by start time."""
    return tuple(list(part) for part in split_dataset(TrajectoryDataset(list(trajs), interval=interval)))
