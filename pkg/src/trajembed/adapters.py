"""Downstream tasks on trajectory embeddings: prediction heads, strategies and metrics."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import RoadNetwork, Trajectory
from .losses import cross_entropy, pointwise_recon
from .model import TrajectoryModel
from .numerics import MLP, Adam, Module, SeededRng, Tensor, backward, clip_grad_norm
from .pretrain import encoder_hash, length_batches

log = logging.getLogger(__name__)

TASKS = ("destination", "eta", "classification")
STRATEGIES = ("full", "no-pretrain", "no-finetune")
STRATEGY_ALIASES = {"without-finetune": "no-finetune", "without-pretrain": "no-pretrain",
                    "w/o finetune": "no-finetune", "w/o pretrain": "no-pretrain"}
CLASSIFICATION_METRICS = ("acc@1", "acc@5", "recall", "f1")
REGRESSION_METRICS = ("mae", "rmse", "mape")


class TaskError(ValueError):
    """The task cannot be run with the given encoder, data or network."""


def resolve_strategy(name: str) -> str:
    name = STRATEGY_ALIASES.get(name, name)
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
    return name


@dataclass(frozen=True)
class AdapterSpec:
    """Downstream task settings.

    ``omit`` is the number of final points hidden from the encoder for the
    destination and ETA tasks. The head is a two-layer network whose hidden
    width is ``hidden_mult`` times the embedding size.
    """

    task: str
    omit: int = 5
    hidden_mult: int = 4
    epochs: int = 50
    patience: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    clip_norm: float = 5.0
    eta_loss: str = "mae"
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if self.task in ("destination", "eta") and self.omit < 1:
            raise ValueError("omit (L) must be >= 1 for prediction tasks")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_mult < 1:
            raise ValueError("epochs must be >= 0, batch size and hidden multiplier >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.eta_loss not in ("mae", "mse"):
            raise ValueError(f"unknown ETA loss {self.eta_loss!r}")

    @property
    def regression(self) -> bool:
        return self.task == "eta"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    task: str
    metrics: dict[str, float]
    strategy: str
    seed: int
    method: str | None = None
    encoder_hash: str | None = None
    history: list[dict] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=dict)

    def to_json(self, wall_seconds: float | None = None) -> dict:
        out = {"task": self.task, "method": self.method, "strategy": self.strategy, "seed": self.seed,
               "metrics": dict(self.metrics), "encoder_hash": self.encoder_hash}
        if wall_seconds is not None:
            out["wall_seconds"] = wall_seconds
        return out


# ---------------------------------------------------------------- targets

def _prefix(t: Trajectory, omit: int) -> Trajectory | None:
    # a trajectory needs two points, so a one-point prefix is skipped as well
    keep = len(t) - omit
    return t.subset(slice(0, keep)) if keep >= 2 else None


def destination_targets(trajs: Sequence[Trajectory], omit: int, segments_of) -> tuple[list[Trajectory], np.ndarray, int]:
    """Prefixes without the last ``omit`` points and the matched segment of each final point.

    ``segments_of`` maps a trajectory to its per-point segment ids. Returns
    (prefixes, targets, number skipped).
    """
    prefixes, targets, skipped = [], [], 0
    for t in trajs:
        p = _prefix(t, omit)
        if p is None:
            skipped += 1
            continue
        prefixes.append(p)
        targets.append(int(segments_of(t)[-1]))
    return prefixes, np.asarray(targets, dtype=np.int64), skipped


def eta_targets(trajs: Sequence[Trajectory], omit: int) -> tuple[list[Trajectory], np.ndarray, int]:
    """Prefixes without the last ``omit`` points and each trajectory's arrival timestamp."""
    prefixes, targets, skipped = [], [], 0
    for t in trajs:
        p = _prefix(t, omit)
        if p is None:
            skipped += 1
            continue
        prefixes.append(p)
        targets.append(float(t.timestamps[-1]))
    return prefixes, np.asarray(targets, dtype=np.float64), skipped


def class_targets(trajs: Sequence[Trajectory]) -> tuple[list[Trajectory], np.ndarray, int]:
    missing = [t.id for t in trajs if t.label is None]
    if missing:
        raise TaskError(f"classification needs labels; {len(missing)} trajectories have none (e.g. {missing[0]})")
    return list(trajs), np.asarray([t.label for t in trajs], dtype=np.int64), 0


# ---------------------------------------------------------------- metrics

def _as_scores(predictions) -> np.ndarray:
    pred = np.asarray(predictions)
    if pred.ndim == 1:
        if not np.issubdtype(pred.dtype, np.integer) and not np.all(pred == np.round(pred)):
            raise ValueError("1-D classification predictions must be class ids")
        return pred.astype(np.int64)
    if pred.ndim != 2:
        raise ValueError(f"classification predictions must be labels (N,) or scores (N, C), got {pred.shape}")
    return pred.astype(np.float64)


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores per row; ties go to the lower class id."""
    k = min(k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def classification_metrics(predictions, truths, classes=None) -> dict[str, float]:
    """Acc@1, Acc@5, macro recall and macro F1 in percent.

    ``predictions`` are class ids (N,) or scores (N, C). With ids only, the
    single prediction is also the top-5 set. Macro averages run over
    ``classes`` (default: every class seen in truths or top-1 predictions);
    undefined per-class recall or precision counts as 0.
    """
    pred = _as_scores(predictions)
    truth = np.asarray(truths, dtype=np.int64)
    if len(truth) == 0:
        raise ValueError("metrics need at least one prediction")
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions vs {len(truth)} truths")
    if pred.ndim == 1:
        top1, top5 = pred, pred[:, None]
    else:
        top5 = top_k(pred, 5)
        top1 = top5[:, 0]
    acc1 = float(np.mean(top1 == truth))
    acc5 = float(np.mean(np.any(top5 == truth[:, None], axis=1)))
    labels = np.unique(np.concatenate([truth, top1])) if classes is None else np.asarray(classes)
    recalls, f1s = [], []
    for c in labels:
        tp = float(np.sum((top1 == c) & (truth == c)))
        support = float(np.sum(truth == c))
        predicted = float(np.sum(top1 == c))
        recall = tp / support if support else 0.0
        precision = tp / predicted if predicted else 0.0
        recalls.append(recall)
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0)
    return {"acc@1": 100 * acc1, "acc@5": 100 * acc5,
            "recall": 100 * float(np.mean(recalls)), "f1": 100 * float(np.mean(f1s))}


def regression_metrics(predictions, truths) -> dict[str, float]:
    """MAE and RMSE in the inputs' unit, MAPE in percent."""
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    truth = np.asarray(truths, dtype=np.float64).reshape(-1)
    if len(truth) == 0:
        raise ValueError("metrics need at least one prediction")
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions vs {len(truth)} truths")
    if np.any(truth == 0):
        raise ValueError("MAPE is undefined for zero-valued truths")
    err = pred - truth
    return {"mae": float(np.mean(np.abs(err))), "rmse": float(np.sqrt(np.mean(err ** 2))),
            "mape": 100 * float(np.mean(np.abs(err) / np.abs(truth)))}


def compute_metrics(task: str, predictions, truths, classes=None) -> dict[str, float]:
    if task == "eta":
        return regression_metrics(predictions, truths)
    if task in ("destination", "classification"):
        return classification_metrics(predictions, truths, classes)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------- similarity

def similar_search(query, candidates, ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Candidate ids ranked by descending cosine similarity to ``query``, with the similarities.

    Equal similarities are ordered by candidate id.
    """
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    cands = np.asarray(candidates, dtype=np.float64)
    if cands.ndim != 2 or cands.shape[0] < 1:
        raise ValueError("need at least one candidate vector")
    if cands.shape[1] != q.shape[0]:
        raise ValueError(f"query dim {q.shape[0]} vs candidate dim {cands.shape[1]}")
    ids = np.arange(len(cands)) if ids is None else np.asarray(ids)
    if len(ids) != len(cands):
        raise ValueError("one id per candidate required")
    qn = np.linalg.norm(q)
    cn = np.linalg.norm(cands, axis=1)
    if qn == 0 or np.any(cn == 0):
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    sims = cands @ q / (cn * qn)
    order = np.lexsort((ids, -sims))
    return ids[order], sims[order]


# ---------------------------------------------------------------- training

class EarlyStopping:
    """Stops after ``patience`` consecutive epochs without strict improvement."""

    def __init__(self, patience: int, mode: str = "max"):
        if patience < 0:
            raise ValueError("patience must be >= 0")
        if mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        self.patience, self.mode = patience, mode
        self.best: float | None = None
        self.best_epoch = -1
        self.bad_epochs = 0
        self.epoch = -1

    def update(self, value: float) -> bool:
        """Record one epoch's metric; True when it is a new best."""
        self.epoch += 1
        better = self.best is None or (value > self.best if self.mode == "max" else value < self.best)
        if better:
            self.best, self.best_epoch, self.bad_epochs = value, self.epoch, 0
        else:
            self.bad_epochs += 1
        return better

    @property
    def should_stop(self) -> bool:
        return self.best is not None and self.bad_epochs >= self.patience


class _Tuned(Module):
    """Encoder modules and head under one name tree so optimizer names are unique."""

    def __init__(self, encoder: list[Module], head: MLP):
        self.encoder = encoder
        self.head = head


@dataclass
class TaskData:
    inputs: list[Trajectory]
    targets: np.ndarray
    skipped: int


class TaskAdapter:
    """Builds task examples from trajectories and trains a head over an encoder."""

    def __init__(self, spec: AdapterSpec, network: RoadNetwork | None = None):
        self.spec = spec
        self.network = network
        self.time_range: tuple[float, float] | None = None
        self.n_classes = 0

    def examples(self, model: TrajectoryModel, trajs: Sequence[Trajectory]) -> TaskData:
        s = self.spec
        if s.task == "destination":
            feat = model.featurizer
            if feat.network is None:
                if self.network is None:
                    raise TaskError("destination prediction needs a road network to label final segments")
                feat.attach_network(self.network)
            return TaskData(*destination_targets(trajs, s.omit, feat.segments))
        if s.task == "eta":
            prefixes, arrival, skipped = eta_targets(trajs, s.omit)
            starts = np.asarray([p.timestamps[0] for p in prefixes])
            return TaskData(prefixes, arrival - starts, skipped)
        return TaskData(*class_targets(trajs))

    def fit_targets(self, train: TaskData, model: TrajectoryModel, others: Sequence[TaskData]) -> None:
        if not len(train.targets):
            raise TaskError("no training examples left after removing short trajectories")
        if self.spec.regression:
            lo, hi = float(train.targets.min()), float(train.targets.max())
            self.time_range = (lo, hi if hi > lo else lo + 1.0)
        elif self.spec.task == "destination":
            self.n_classes = model.featurizer.n_edges
        else:
            self.n_classes = int(max(int(d.targets.max()) for d in (train, *others) if len(d.targets))) + 1

    @property
    def out_dim(self) -> int:
        return 1 if self.spec.regression else self.n_classes

    def scale(self, seconds: np.ndarray) -> np.ndarray:
        lo, hi = self.time_range
        return (seconds - lo) / (hi - lo)

    def unscale_minutes(self, normalized: np.ndarray) -> np.ndarray:
        lo, hi = self.time_range
        return (normalized * (hi - lo) + lo) / 60.0

    def loss(self, out: Tensor, targets: np.ndarray) -> Tensor:
        if self.spec.regression:
            return pointwise_recon(out[:, 0], self.scale(targets), self.spec.eta_loss)
        return cross_entropy(out, targets)

    def metrics(self, outputs: np.ndarray, targets: np.ndarray) -> dict[str, float]:
        if self.spec.regression:
            return regression_metrics(self.unscale_minutes(outputs[:, 0]), targets / 60.0)
        return classification_metrics(outputs, targets)

    def score(self, metrics: dict[str, float]) -> float:
        return metrics["mae"] if self.spec.regression else metrics["acc@1"]


def _fresh_model(model: TrajectoryModel, seed: int) -> TrajectoryModel:
    return TrajectoryModel(model.preset, model.featurizer, model.cfg, seed)


def run_adapter(model: TrajectoryModel, spec: AdapterSpec, strategy: str,
                splits: tuple[Sequence[Trajectory], Sequence[Trajectory], Sequence[Trajectory]],
                network: RoadNetwork | None = None) -> "AdapterResult":
    """Train a head on ``splits`` (train, eval, test) under ``strategy``; report test metrics.

    ``no-finetune`` keeps the encoder fixed, ``no-pretrain`` replaces it with a
    freshly seeded one and ``full`` fine-tunes it. The caller's model is never
    modified; the (possibly fine-tuned) copy is returned with the head and report.
    """
    strategy = resolve_strategy(strategy)
    if model.preset.pretrainer == "-" and strategy == "no-pretrain":
        log.info("%s trains word2vec only; no-pretrain uses a random lookup table", model.preset.name)
    rng = SeededRng(spec.seed).split(("adapter", spec.task, strategy))
    if strategy == "no-pretrain":
        fresh_seed = int(rng.split("init").integers(0, 2 ** 31))
        model = _fresh_model(model, fresh_seed)
    else:
        model = copy.deepcopy(model)
    adapter = TaskAdapter(spec, network)
    train, valid, test = (adapter.examples(model, part) for part in splits)
    for name, part in (("eval", valid), ("test", test)):
        if not len(part.targets):
            raise TaskError(f"{name} split has no usable examples")
    adapter.fit_targets(train, model, (valid, test))

    d = model.cfg.dim
    head = MLP(rng.split("head"), [d, spec.hidden_mult * d, adapter.out_dim], activation="relu")
    tune_encoder = strategy != "no-finetune"
    net = _Tuned(model.encoder_modules() if tune_encoder else [], head)
    params = net.parameters()
    opt = Adam(params, lr=spec.lr)

    cache: dict[int, np.ndarray] = {}

    def embed(data: TaskData, idx: np.ndarray) -> Tensor:
        if tune_encoder:
            return model.embed_batch(model.make_batch([data.inputs[i] for i in idx]))
        key = id(data)
        if key not in cache:
            cache[key] = model.embed_trajectories(data.inputs)
        return Tensor(cache[key][idx])

    def predict(data: TaskData) -> np.ndarray:
        n = len(data.inputs)
        parts = [head(embed(data, np.arange(i, min(i + 256, n)))).data for i in range(0, n, 256)]
        return np.concatenate(parts)

    stopper = EarlyStopping(spec.patience, "min" if spec.regression else "max")
    best_state = net.state_dict()
    history = []
    lengths = [len(t) for t in train.inputs]
    for epoch in range(spec.epochs):
        total, batches = 0.0, length_batches(lengths, spec.batch_size, rng.split(f"order:{epoch}"))
        for idx in batches:
            loss = adapter.loss(head(embed(train, idx)), train.targets[idx])
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite adapter loss at epoch {epoch}")
            backward(loss)
            clip_grad_norm(params, spec.clip_norm)
            opt.step()
            total += loss.item()
        eval_metrics = adapter.metrics(predict(valid), valid.targets)
        improved = stopper.update(adapter.score(eval_metrics))
        if improved:
            best_state = net.state_dict()
        history.append({"epoch": epoch + 1, "loss": total / len(batches), **{f"eval_{k}": v for k, v in eval_metrics.items()}})
        log.info("adapter epoch %d: %s", epoch + 1, history[-1])
        if stopper.should_stop:
            break
    net.load_state_dict(best_state)
    metrics = adapter.metrics(predict(test), test.targets)
    report = MetricsReport(spec.task, metrics, strategy, spec.seed, model.preset.name, encoder_hash(model), history,
                           {"train": train.skipped, "eval": valid.skipped, "test": test.skipped})
    return AdapterResult(report, model, head, adapter)


@dataclass
class AdapterResult:
    report: MetricsReport
    model: TrajectoryModel
    head: MLP
    adapter: TaskAdapter

    def predict(self, trajs: Sequence[Trajectory]) -> np.ndarray:
        """Class ids, or travel time from the first point in minutes for ETA."""
        out = self.head(Tensor(self.model.embed_trajectories(trajs))).data
        if self.adapter.spec.regression:
            return self.adapter.unscale_minutes(out[:, 0])
        return np.argmax(out, axis=1)

    def scores(self, trajs: Sequence[Trajectory]) -> np.ndarray:
        return self.head(Tensor(self.model.embed_trajectories(trajs))).data


def uniform_baseline(task_data_targets: np.ndarray) -> float:
    """Acc@1 in percent of guessing uniformly among the distinct training classes."""
    return 100.0 / len(np.unique(task_data_targets))
