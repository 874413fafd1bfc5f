"""Command-line entry points: generate, pretrain, finetune, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

from .adapters import STRATEGIES, TASKS, AdapterSpec, TaskError, resolve_strategy, run_adapter
from .data import (RoadNetwork, SyntheticConfig, TrajectoryDataset, filter_short, generate_synthetic,
                   load_trajectories, resample_interval, split_dataset, write_dataset)
from .features import FeaturizerConfig
from .model import ModelConfig
from .pretrain import (CheckpointError, NonFiniteLossError, PretrainConfig, build_model, load_checkpoint,
                       pretrain, save_checkpoint)
from .registry import MethodPreset, resolve_method

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
CHECKPOINT_DIR = "checkpoint"


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# ---------------------------------------------------------------- config

def _check_value(path: str, default, value):
    # the field default fixes the expected JSON type
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
    elif isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return tuple(value)
    return value


def _section(cls, obj, path: str, exclude=("seed",)):
    """Build dataclass ``cls`` from a JSON object, naming the key path on any failure."""
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    known = {f.name: f for f in fields(cls) if f.name not in exclude}
    for key in obj:
        if key not in known:
            hint = " (use the top-level seed)" if key in exclude else ""
            raise ConfigError(f"{path}.{key}", f"unknown key{hint}")
    kw = {}
    for key, value in obj.items():
        f = known[key]
        default = f.default if f.default is not MISSING else None
        kw[key] = _check_value(f"{path}.{key}", default, value)
    try:
        return cls(**kw)
    except (ValueError, TypeError) as err:
        raise ConfigError(path, str(err)) from None


def _dump(obj, exclude=("seed",)) -> dict:
    out = {}
    for key, value in asdict(obj).items():
        if key in exclude:
            continue
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


@dataclass
class DatasetConfig:
    """Either ``synthetic`` generator parameters or ``trajectories``/``network`` file paths."""

    synthetic: SyntheticConfig | None = None
    trajectories: str | None = None
    network: str | None = None
    interval: float | None = 15.0
    min_points: int = 6
    seed: int = 0

    @classmethod
    def from_dict(cls, obj, path: str = "dataset") -> "DatasetConfig":
        if obj is None:
            obj = {"synthetic": {}}
        if not isinstance(obj, dict):
            raise ConfigError(path, "expected an object")
        unknown = set(obj) - {"synthetic", "trajectories", "network", "interval", "min_points", "seed"}
        if unknown:
            raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
        if ("synthetic" in obj) == ("trajectories" in obj):
            raise ConfigError(path, "give exactly one of 'synthetic' or 'trajectories'")
        synthetic = _section(SyntheticConfig, obj["synthetic"], f"{path}.synthetic", exclude=()) \
            if "synthetic" in obj else None
        out = cls(synthetic=synthetic)
        for key in ("trajectories", "network"):
            if key in obj:
                if not isinstance(obj[key], str):
                    raise ConfigError(f"{path}.{key}", "expected a file path")
                setattr(out, key, obj[key])
        if "interval" in obj:
            if obj["interval"] is not None:
                out.interval = _check_value(f"{path}.interval", 1.0, obj["interval"])
                if out.interval <= 0:
                    raise ConfigError(f"{path}.interval", "must be positive")
            else:
                out.interval = None
        for key in ("min_points", "seed"):
            if key in obj:
                setattr(out, key, _check_value(f"{path}.{key}", 0, obj[key]))
        if out.min_points < 2:
            raise ConfigError(f"{path}.min_points", "must be >= 2")
        return out

    def to_dict(self) -> dict:
        out: dict = {"interval": self.interval, "min_points": self.min_points, "seed": self.seed}
        if self.synthetic is not None:
            out["synthetic"] = _dump(self.synthetic, exclude=())
        else:
            out["trajectories"] = self.trajectories
            if self.network is not None:
                out["network"] = self.network
        return out


def _method_from(obj, path: str = "method"):
    """A preset name, ``{"preset": name}`` or ``{"inline": {...}}``."""
    if isinstance(obj, str):
        return obj
    if isinstance(obj, dict):
        if set(obj) == {"preset"} and isinstance(obj["preset"], str):
            return obj["preset"]
        if set(obj) == {"inline"} and isinstance(obj["inline"], dict):
            try:
                return MethodPreset.from_dict(obj["inline"])
            except (ValueError, TypeError) as err:
                raise ConfigError(f"{path}.inline", str(err)) from None
    raise ConfigError(path, "expected a preset name, {'preset': name} or {'inline': {...}}")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=lambda: DatasetConfig(SyntheticConfig()))
    method: str | MethodPreset = "t2vec"
    model: ModelConfig = field(default_factory=ModelConfig)
    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    adapter: AdapterSpec = field(default_factory=lambda: AdapterSpec("destination"))
    strategy: str = "full"
    seed: int = 0
    output_dir: str | None = None
    checkpoint: str | None = None

    @classmethod
    def from_dict(cls, obj) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise ConfigError(key, "unknown key")
        cfg = cls()
        if "dataset" in obj:
            cfg.dataset = DatasetConfig.from_dict(obj["dataset"])
        if "method" in obj:
            cfg.method = _method_from(obj["method"])
        try:
            resolve_method(cfg.method)
        except KeyError as err:
            raise ConfigError("method", err.args[0]) from None
        cfg.model = _section(ModelConfig, obj.get("model"), "model", exclude=())
        cfg.featurizer = _section(FeaturizerConfig, obj.get("featurizer"), "featurizer", exclude=())
        cfg.pretrain = _section(PretrainConfig, obj.get("pretrain"), "pretrain")
        adapter = dict(obj.get("adapter") or {})
        adapter.setdefault("task", "destination")
        cfg.adapter = _section(AdapterSpec, adapter, "adapter")
        if "strategy" in obj:
            try:
                cfg.strategy = resolve_strategy(obj["strategy"])
            except (ValueError, TypeError) as err:
                raise ConfigError("strategy", str(err)) from None
        if "seed" in obj:
            cfg.seed = _check_value("seed", 0, obj["seed"])
            if cfg.seed < 0 or cfg.seed >= 2 ** 64:
                raise ConfigError("seed", "must be an unsigned 64-bit integer")
        for key in ("output_dir", "checkpoint"):
            if obj.get(key) is not None:
                if not isinstance(obj[key], str):
                    raise ConfigError(key, "expected a path string")
                setattr(cfg, key, obj[key])
        return cfg

    def to_dict(self) -> dict:
        method = self.method if isinstance(self.method, str) else {"inline": self.method.to_dict()}
        out = {"dataset": self.dataset.to_dict(), "method": method, "model": _dump(self.model, exclude=()),
               "featurizer": _dump(self.featurizer, exclude=()), "pretrain": _dump(self.pretrain),
               "adapter": _dump(self.adapter), "strategy": self.strategy, "seed": self.seed}
        for key in ("output_dir", "checkpoint"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError("", f"cannot read config {path}: {err.strerror}") from None
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError("", f"{path} is not valid JSON: {err}") from None
        return cls.from_dict(obj)


# ---------------------------------------------------------------- helpers

def load_data(cfg: DatasetConfig) -> tuple[TrajectoryDataset, RoadNetwork | None]:
    if cfg.synthetic is not None:
        data, network = generate_synthetic(cfg.synthetic, seed=cfg.seed)
    else:
        if not Path(cfg.trajectories).is_file():
            raise ConfigError("dataset.trajectories", f"file not found: {cfg.trajectories}")
        data = load_trajectories(cfg.trajectories, cfg.min_points)
        network = None
        if cfg.network is not None:
            if not Path(cfg.network).is_file():
                raise ConfigError("dataset.network", f"file not found: {cfg.network}")
            network = RoadNetwork.load(cfg.network)
    if cfg.interval is not None:
        kept = [resample_interval(t, cfg.interval) for t in data if t.duration >= cfg.interval]
        data = TrajectoryDataset(kept, interval=cfg.interval)
    return filter_short(data, cfg.min_points), network


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _output_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("output_dir", "no output directory (pass --out or set output_dir)")
    return Path(out)


def _resolve(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    obj = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        obj["seed"] = args.seed
    if getattr(args, "method", None):
        obj["method"] = args.method
    if getattr(args, "strategy", None):
        obj["strategy"] = args.strategy
    if getattr(args, "task", None):
        obj["adapter"]["task"] = args.task
    return ExperimentConfig.from_dict(obj)


def _pretrain_config(cfg: ExperimentConfig) -> PretrainConfig:
    return PretrainConfig(**{**asdict(cfg.pretrain), "seed": cfg.seed})


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    cfg = _resolve(args)
    if cfg.dataset.synthetic is None:
        raise ConfigError("dataset.synthetic", "generate needs synthetic generator parameters")
    seed = cfg.dataset.seed if args.seed is None else args.seed
    data, network = generate_synthetic(cfg.dataset.synthetic, seed=seed)
    out = _output_dir(args, cfg)
    try:
        traj_path, net_path = write_dataset(data, network, out)
    except OSError as err:
        raise RuntimeError(f"cannot write to {out}: {err.strerror}") from None
    print(f"wrote {len(data)} trajectories to {traj_path} and the network to {net_path}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _resolve(args)
    out = _output_dir(args, cfg)
    data, network = load_data(cfg.dataset)
    train, _, _ = split_dataset(data)
    model = build_model(cfg.method, train, network, cfg.model, seed=cfg.seed, feat_cfg=cfg.featurizer)
    result = pretrain(model, train, _pretrain_config(cfg))
    save_checkpoint(model, out / CHECKPOINT_DIR, epoch=len(result.history))
    _write_json(out / "history.json", result.history)
    _write_json(out / "config.json", cfg.to_dict())
    print(f"pre-trained {model.preset.name} for {len(result.history)} epochs; checkpoint in {out / CHECKPOINT_DIR}")
    return EXIT_OK


def _run_downstream(args, save_model: bool) -> int:
    start = time.perf_counter()
    cfg = _resolve(args)
    out = _output_dir(args, cfg)
    data, network = load_data(cfg.dataset)
    splits = split_dataset(data)
    if cfg.strategy == "no-pretrain":
        model = build_model(cfg.method, splits[0], network, cfg.model, seed=cfg.seed, feat_cfg=cfg.featurizer)
    else:
        ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / CHECKPOINT_DIR
        if not (ckpt / "manifest.json").is_file():
            raise ConfigError("checkpoint", f"strategy {cfg.strategy} needs a checkpoint; none at {ckpt}")
        model = load_checkpoint(ckpt, network)
    spec = AdapterSpec(**{**asdict(cfg.adapter), "seed": cfg.seed})
    result = run_adapter(model, spec, cfg.strategy, splits, network)
    if save_model:
        save_checkpoint(result.model, out / "finetuned", epoch=len(result.report.history))
        _write_json(out / "finetune_history.json", result.report.history)
    metrics = result.report.to_json(wall_seconds=time.perf_counter() - start)
    _write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics["metrics"], sort_keys=True))
    return EXIT_OK


def cmd_finetune(args) -> int:
    return _run_downstream(args, save_model=True)


def cmd_evaluate(args) -> int:
    return _run_downstream(args, save_model=False)


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("", f"{self.prog}: {message}")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajembed", description="Trajectory embedding pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands = {
        "generate": (cmd_generate, "write a synthetic dataset and road network"),
        "pretrain": (cmd_pretrain, "pre-train a method and write a checkpoint"),
        "finetune": (cmd_finetune, "train a downstream head and write metrics"),
        "evaluate": (cmd_evaluate, "train a downstream head and write metrics only"),
    }
    for name, (fn, text) in commands.items():
        p = sub.add_parser(name, help=text)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="experiment JSON")
        p.add_argument("--seed", type=_u64, help="overrides the config seed")
        p.add_argument("--out", help="output directory")
        if name != "generate":
            p.add_argument("--method", help="preset name overriding the config")
        if name in ("finetune", "evaluate"):
            p.add_argument("--strategy", choices=STRATEGIES)
            p.add_argument("--task", choices=TASKS)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, FloatingPointError, TaskError, RuntimeError, ValueError, OSError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
