"""Generative, contrastive and hybrid pre-training loops plus checkpoint I/O."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import RoadNetwork, Trajectory
from .embed import Word2VecConfig, word2vec_train
from .features import Featurizer, FeaturizerConfig
from .model import ModelConfig, TrajectoryModel
from .numerics import Adam, SeededRng, Tensor, backward, clip_grad_norm
from .registry import MethodPreset, resolve_method

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
PARAMS = "params.bin"


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    clip_norm: float = 5.0
    w_gen: float = 1.0
    w_con: float = 1.0
    seed: int = 0
    word2vec_epochs: int = 2
    max_batches: int | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.w_gen < 0 or self.w_con < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PretrainResult:
    model: TrajectoryModel
    history: list[dict[str, float]] = field(default_factory=list)

    def losses(self, key: str = "loss") -> list[float]:
        return [h[key] for h in self.history]


# ---------------------------------------------------------------- assembly

def fit_featurizer(preset: MethodPreset, train: Sequence[Trajectory], network: RoadNetwork | None = None,
                   cfg: FeaturizerConfig = FeaturizerConfig()) -> Featurizer:
    if preset.tokens == "segment" and network is None:
        raise ValueError(f"method {preset.name!r} needs a road network for map-matching")
    sources = (preset.tokens,) if preset.tokens and "Word2vec" in preset.embedders else ()
    return Featurizer(cfg).fit(train, network, sources)


def build_model(method, train: Sequence[Trajectory], network: RoadNetwork | None = None,
                model_cfg: ModelConfig = ModelConfig(), seed: int = 0,
                feat_cfg: FeaturizerConfig = FeaturizerConfig()) -> TrajectoryModel:
    preset = resolve_method(method)
    return TrajectoryModel(preset, fit_featurizer(preset, train, network, feat_cfg), model_cfg, seed)


def length_batches(lengths: Sequence[int], batch_size: int, rng: SeededRng) -> list[np.ndarray]:
    """Shuffle, bucket neighbouring lengths into batches, then shuffle batch order."""
    order = rng.permutation(len(lengths))
    pool = batch_size * 16
    batches = []
    for start in range(0, len(order), pool):
        chunk = order[start:start + pool]
        chunk = chunk[np.argsort(np.asarray(lengths)[chunk], kind="stable")]
        batches += [chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


# ---------------------------------------------------------------- loops

LossFn = Callable[[TrajectoryModel, list[Trajectory], SeededRng], dict[str, Tensor]]


def _total(comps: dict[str, Tensor]) -> Tensor:
    out = None
    for v in comps.values():
        out = v if out is None else out + v
    return out


def _generative(model, trajs, rng):
    comps = model.generative_loss(trajs, rng.split("gen"))
    return {"loss": _total(comps), **comps}


def _contrastive(model, trajs, rng):
    comps = model.contrastive_loss(trajs, rng.split("con"))
    return {"loss": _total(comps), **comps}


def _word2vec(model, trajs, rng):
    comps = model.word2vec_loss(trajs, rng.split("w2v"))
    return {"loss": _total(comps), **comps}


def _hybrid(cfg: PretrainConfig) -> LossFn:
    def fn(model, trajs, rng):
        gen = model.generative_loss(trajs, rng.split("gen"))
        con = model.contrastive_loss(trajs, rng.split("con"))
        g, c = _total(gen), _total(con)
        out = {"loss": g * cfg.w_gen + c * cfg.w_con, "gen": g, "con": c}
        out.update({f"gen_{k}": v for k, v in gen.items()})
        return out
    return fn


def _warm_start_word2vec(model: TrajectoryModel, train: Sequence[Trajectory], cfg: PretrainConfig) -> None:
    p = model.preset
    if "Word2vec" not in p.embedders or p.objective == "word2vec" or cfg.word2vec_epochs == 0:
        return
    corpus = [model.featurizer.tokens(t, p.tokens) for t in train]
    w2v = Word2VecConfig(dim=model.cfg.dim, epochs=cfg.word2vec_epochs)
    table = word2vec_train(corpus, model.vocab, w2v, seed=cfg.seed)
    model.main.table.table.assign(table)


def run_pretraining(model: TrajectoryModel, train: Sequence[Trajectory], cfg: PretrainConfig,
                    loss_fn: LossFn, on_epoch: Callable[[int, dict], None] | None = None) -> PretrainResult:
    """Shared loop: batch, evaluate ``loss_fn``, backprop, clip, Adam step; one history row per epoch."""
    train = list(train)
    if not train:
        raise ValueError("pre-training needs a non-empty training set")
    params = model.parameters()
    history: list[dict[str, float]] = []
    if cfg.epochs == 0:
        return PretrainResult(model, history)
    _warm_start_word2vec(model, train, cfg)
    opt = Adam(params, lr=cfg.lr)
    rng = SeededRng(cfg.seed).split("pretrain")
    lengths = [len(t) for t in train]
    for epoch in range(cfg.epochs):
        sums: dict[str, float] = defaultdict(float)
        batches = length_batches(lengths, cfg.batch_size, rng.split(f"order:{epoch}"))
        if cfg.max_batches is not None:
            batches = batches[:cfg.max_batches]
        for b, idx in enumerate(batches):
            trajs = [train[i] for i in idx]
            comps = loss_fn(model, trajs, rng.split(f"batch:{epoch}:{b}"))
            loss = comps["loss"]
            values = {k: v.item() for k, v in comps.items()}
            if not all(np.isfinite(v) for v in values.values()):
                raise NonFiniteLossError(
                    f"non-finite loss {values} at epoch {epoch}, batch {b} (first trajectories {[t.id for t in trajs[:3]]})")
            backward(loss)
            clip_grad_norm(params, cfg.clip_norm)
            opt.step()
            for k, v in values.items():
                sums[k] += v
        row = {k: v / len(batches) for k, v in sums.items()}
        row["epoch"] = epoch + 1
        history.append(row)
        log.info("epoch %d: %s", epoch + 1, row)
        if on_epoch is not None:
            on_epoch(epoch, row)
    return PretrainResult(model, history)


def pretrain_generative(model: TrajectoryModel, train, cfg: PretrainConfig = PretrainConfig(), **kw) -> PretrainResult:
    if not model.preset.generative:
        raise ValueError(f"method {model.preset.name!r} has no decoder or reconstruction loss")
    return run_pretraining(model, train, cfg, _generative, **kw)


def pretrain_contrastive(model: TrajectoryModel, train, cfg: PretrainConfig = PretrainConfig(), **kw) -> PretrainResult:
    if not model.preset.contrastive_branch:
        raise ValueError(f"method {model.preset.name!r} has no contrastive loss")
    return run_pretraining(model, train, cfg, _contrastive, **kw)


def pretrain_hybrid(model: TrajectoryModel, train, cfg: PretrainConfig = PretrainConfig(), **kw) -> PretrainResult:
    if not (model.preset.generative and model.preset.contrastive_branch):
        raise ValueError(f"method {model.preset.name!r} needs both generative and contrastive branches")
    if cfg.w_gen == 0 and cfg.w_con == 0:
        raise ValueError("hybrid pre-training needs at least one non-zero loss weight")
    return run_pretraining(model, train, cfg, _hybrid(cfg), **kw)


def pretrain_word2vec(model: TrajectoryModel, train, cfg: PretrainConfig = PretrainConfig(), **kw) -> PretrainResult:
    if model.preset.objective != "word2vec":
        raise ValueError(f"method {model.preset.name!r} does not train word2vec tokens directly")
    return run_pretraining(model, train, cfg, _word2vec, **kw)


def pretrain(model: TrajectoryModel, train, cfg: PretrainConfig = PretrainConfig(), **kw) -> PretrainResult:
    """Dispatch on the preset's pre-trainer kind."""
    kind = model.preset.pretrainer
    fn = {"Generative": pretrain_generative, "Contrastive": pretrain_contrastive,
          "Hybrid": pretrain_hybrid, "-": pretrain_word2vec}[kind]
    return fn(model, train, cfg, **kw)


def first_batch_loss(model: TrajectoryModel, train: Sequence[Trajectory], cfg: PretrainConfig,
                     kind: str | None = None) -> dict[str, float]:
    """Loss components of the first batch the loop would see, without any update."""
    kind = kind or model.preset.pretrainer
    fn = {"Generative": _generative, "Contrastive": _contrastive, "Hybrid": _hybrid(cfg), "-": _word2vec}[kind]
    rng = SeededRng(cfg.seed).split("pretrain")
    train = list(train)
    idx = length_batches([len(t) for t in train], cfg.batch_size, rng.split("order:0"))[0]
    comps = fn(model, [train[i] for i in idx], rng.split("batch:0:0"))
    return {k: v.item() for k, v in comps.items()}


# ---------------------------------------------------------------- checkpoints

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def model_spec(model: TrajectoryModel) -> dict:
    return {"preset": model.preset.to_dict(), "model": model.cfg.to_dict(), "featurizer": model.featurizer.to_json()}


def config_fingerprint(model: TrajectoryModel) -> str:
    return hashlib.sha256(_canonical(model_spec(model)).encode()).hexdigest()


def parameter_hash(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def encoder_hash(model: TrajectoryModel) -> str:
    named = {}
    for i, m in enumerate(model.encoder_modules()):
        for name, p in m.named_parameters(f"{i}."):
            named[name] = p.data
    return parameter_hash(named)


def save_checkpoint(model: TrajectoryModel, path, epoch: int = 0) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors, offset, chunks = [], 0, []
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": "trajembed-checkpoint/1",
        "dtype": "float64-le",
        "fingerprint": config_fingerprint(model),
        "epoch": int(epoch),
        "seed": int(model.seed),
        **model_spec(model),
        "tensors": tensors,
    }
    (path / PARAMS).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        return json.loads((path / MANIFEST).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint manifest at {path / MANIFEST}") from None


def load_checkpoint(path, network: RoadNetwork | None = None, expected_fingerprint: str | None = None) -> TrajectoryModel:
    path = Path(path)
    manifest = read_manifest(path)
    preset = MethodPreset.from_dict(manifest["preset"])
    featurizer = Featurizer.from_json(manifest["featurizer"], network)
    model = TrajectoryModel(preset, featurizer, ModelConfig.from_dict(manifest["model"]), manifest["seed"])
    fingerprint = config_fingerprint(model)
    if fingerprint != manifest["fingerprint"]:
        raise CheckpointError("checkpoint manifest does not match its recorded config fingerprint")
    if expected_fingerprint is not None and expected_fingerprint != fingerprint:
        raise CheckpointError(f"config fingerprint mismatch: checkpoint {fingerprint[:12]}, expected {expected_fingerprint[:12]}")
    blob = (path / PARAMS).read_bytes()
    own = dict(model.named_parameters())
    names = [t["name"] for t in manifest["tensors"]]
    if len(set(names)) != len(names):
        raise CheckpointError("checkpoint lists a parameter more than once")
    state = {}
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        if t["name"] not in own:
            raise CheckpointError(f"checkpoint parameter {t['name']!r} is not part of the model")
        if own[t["name"]].shape != shape:
            raise CheckpointError(f"parameter {t['name']!r}: checkpoint shape {shape} vs model {own[t['name']].shape}")
        n = int(np.prod(shape)) * 8
        state[t["name"]] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=t["offset"]).reshape(shape)
    missing = set(own) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)}")
    model.load_state_dict(state)
    return model
