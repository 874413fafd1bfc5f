"""A trajectory embedding model assembled from a method preset."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .codecs import (CDEEncoder, CNNDecoder, CNNEncoder, NFPostprocessor, ODEDecoder, ODEEncoder, RNNDecoder,
                     RNNEncoder, TransformerEncoder, VariationalPostprocessor, masked_mean)
from .data import Trajectory
from .embed import FCEmbedder, IndexEmbedding, sgns_loss
from .features import Batch, Featurizer
from .losses import ContrastiveSpec, MECSpec, cross_entropy, infonce, mec, pointwise_recon
from .numerics import MLP, Linear, Module, Parameter, SeededRng, Tensor, ops
from .registry import MethodPreset

TIME_FEATURES = 3
WINDOW_FEATURES = 4
TRAJECTORY_FEATURES = 3


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    rnn_layers: int = 1
    transformer_layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    ode_steps: int = 4
    time_scale: float = 60.0
    cde_steps: int = 16
    flows: int = 4
    pixel_dim: int = 8
    cnn_filters: tuple[int, int] = (16, 16)
    temperature: float = 0.1
    mec_eps: float = 1.0
    zero_projection: bool = False
    word2vec_window: int = 2
    word2vec_negatives: int = 5

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("embedding dim must be >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by {self.heads} heads")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["cnn_filters"] = list(self.cnn_filters)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        if "cnn_filters" in obj:
            obj["cnn_filters"] = tuple(obj["cnn_filters"])
        return cls(**obj)


def l2_normalize(x: Tensor) -> Tensor:
    """Row-wise unit vectors; an all-zero row stays zero."""
    return x / ops.sqrt(ops.sum(x * x, axis=-1, keepdims=True) + 1e-12)


def input_kind(preset: MethodPreset) -> str:
    if preset.continuous == "pixels":
        return "pixels"
    if preset.continuous == "window":
        return "window"
    if preset.tokens is not None:
        return "window-tokens" if preset.tokens == "window" else "tokens"
    return "trajectory"


class Branch(Module):
    """Embedder plus encoder over one input view; returns ``(z, memory)``."""

    def __init__(self, rng: SeededRng, preset: MethodPreset, featurizer: Featurizer, cfg: ModelConfig):
        d = cfg.dim
        self.kind = input_kind(preset)
        self.embedders = preset.embedders
        self.codec = preset.codecs[0] if preset.codecs else None
        self.table = None
        self.time_fc = None
        self.fc = None
        if self.kind in ("tokens", "window-tokens"):
            self.table = IndexEmbedding(rng, featurizer.vocab_size(preset.tokens), d)
            if "FC" in preset.embedders:
                if "Word2vec" in preset.embedders:
                    self.fc = FCEmbedder(rng, d + TIME_FEATURES, d)
                else:
                    self.time_fc = FCEmbedder(rng, TIME_FEATURES, d)
        else:
            width = {"window": WINDOW_FEATURES, "trajectory": TRAJECTORY_FEATURES,
                     "pixels": 2}[self.kind]
            out = cfg.pixel_dim if self.kind == "pixels" else d
            self.fc = FCEmbedder(rng, width, out)
        self.encoder = None
        if self.codec == "RNN":
            self.encoder = RNNEncoder(rng, d, d, preset.rnn_variant, cfg.rnn_layers)
        elif self.codec == "Transformer":
            self.encoder = TransformerEncoder(rng, d, d, cfg.transformer_layers, cfg.heads, cfg.ff_mult)
        elif self.codec == "ODE":
            self.encoder = ODEEncoder(rng, d, d, cfg.ode_steps, cfg.time_scale)
        elif self.codec == "CNN":
            w, h = featurizer.cfg.image_width, featurizer.cfg.image_height
            self.encoder = CNNEncoder(rng, w, h, cfg.pixel_dim, d, cfg.cnn_filters)

    def embed(self, batch: Batch, tokens: np.ndarray | None = None) -> Tensor:
        if self.kind == "pixels":
            return self.fc(Tensor(batch.images))
        if self.table is None:
            return self.fc(Tensor(batch.feats))
        lookup = self.table(batch.tokens if tokens is None else tokens)
        if self.time_fc is not None:
            return lookup + self.time_fc(Tensor(batch.time))
        if self.fc is not None:
            return self.fc(ops.concat([lookup, Tensor(batch.time)], axis=-1))
        return lookup

    def encode(self, batch: Batch) -> tuple[Tensor, Tensor | None]:
        e = self.embed(batch)
        if self.encoder is None:
            return masked_mean(e, batch.mask), None
        if self.codec == "Transformer":
            m, z = self.encoder(e, batch.mask)
            return z, m
        if self.codec == "ODE":
            return self.encoder(e, batch.times, batch.mask), None
        if self.codec == "CNN":
            return self.encoder(e), None
        return self.encoder(e, batch.mask), None


class TrajectoryModel(Module):
    """Encoder stack of a preset plus the heads its pre-training objective needs."""

    def __init__(self, preset: MethodPreset, featurizer: Featurizer, cfg: ModelConfig = ModelConfig(),
                 seed: int = 0):
        self.preset, self.featurizer, self.cfg, self.seed = preset, featurizer, cfg, seed
        rng = SeededRng(seed)
        d = cfg.dim
        p = preset
        self.kind = input_kind(p)
        self.vocab = featurizer.vocab_size(p.tokens) if p.tokens else 0
        self.main = Branch(rng.split("main"), p, featurizer, cfg)
        hr = rng.split("heads")
        self.variational = VariationalPostprocessor(hr, d) if "Variational" in p.postprocessors else None
        self.flows = NFPostprocessor(hr, d, cfg.flows) if "NF" in p.postprocessors else None

        self.decoder = None
        self.token_head = None
        self.time_head = None
        if p.generative and p.objective == "seq2seq":
            if p.codecs and p.codecs[0] == "ODE":
                self.decoder = ODEDecoder(hr, d, d, 2, cfg.ode_steps, cfg.time_scale)
            else:
                out = self.vocab + int(p.reconstruct_time) if self.kind == "tokens" else WINDOW_FEATURES
                self.decoder = RNNDecoder(hr, d, d, out, p.rnn_variant)
        elif p.generative and p.objective == "masked":
            self.token_head = Linear(hr, d, self.vocab)
            if p.reconstruct_time:
                self.time_head = Linear(hr, d, 2)
        elif p.generative and p.objective == "image":
            self.decoder = CNNDecoder(hr, d, featurizer.cfg.image_width, featurizer.cfg.image_height, 2,
                                      cfg.cnn_filters)

        self.aux = None
        self.projection = None
        self.cde = None
        self.cde_projection = None
        if p.contrastive_branch:
            cr = rng.split("contrastive")
            if p.twin_encoders:
                self.aux = Branch(cr.split("aux"), p, featurizer, cfg)
            if p.contrastive == "mec":
                self.projection = Linear(cr, d, d)
                self.cde = CDEEncoder(cr, 2, d, cfg.cde_steps)
                self.cde_projection = Linear(cr, d, d)
                if cfg.zero_projection:
                    for lin in (self.projection, self.cde_projection):
                        lin.weight.assign(np.zeros_like(lin.weight.data))
                        lin.bias.assign(np.zeros_like(lin.bias.data))
            else:
                self.projection = MLP(cr, [d, d, d], activation="relu")
        self.w_out = None
        if p.objective == "word2vec":
            self.w_out = Parameter(np.zeros((self.vocab, d)))

    # ------------------------------------------------------------ batches

    def make_batch(self, trajs: Sequence[Trajectory], rng: SeededRng | None = None, corrupt: str | None = None) -> Batch:
        """Clean batch, or a corrupted one: ``augment`` for views, ``mask`` for masked prediction."""
        p, f = self.preset, self.featurizer
        if self.kind == "pixels":
            return f.image_batch(trajs)
        if self.kind in ("window", "window-tokens"):
            return f.window_batch(trajs)
        source = p.tokens if self.kind == "tokens" else None
        spec = f.augment_spec(p.noise_m, p.point_drop, p.segment_drop) if corrupt == "augment" else None
        mask_prob = p.mask_prob if corrupt == "mask" else 0.0
        batch = f.point_batch(trajs, source, spec, mask_prob, rng if corrupt else None)
        if self.cde is not None:
            batch.path = np.stack([f.spline_path(t, self.cfg.cde_steps) for t in trajs])
        return batch

    # ------------------------------------------------------------ encoding

    def encode(self, batch: Batch, rng: SeededRng | None = None, branch: Branch | None = None) -> dict:
        """``z`` from the encoder, postprocessed ``embedding``, and sampling terms when ``rng`` is given."""
        z, memory = (branch or self.main).encode(batch)
        out = {"z": z, "memory": memory, "embedding": z}
        if self.variational is not None:
            eps = None if rng is None else rng.normal(z.shape)
            g, sample = self.variational(z, eps)
            out.update(gaussian=g, eps=eps, sample=sample, embedding=g.mu)
            if self.flows is not None:
                flowed, logdet = self.flows(sample)
                out.update(sample=flowed, logdet=logdet)
                out["embedding"] = self.flows(g.mu)[0]
        return out

    def embed_batch(self, batch: Batch) -> Tensor:
        return self.encode(batch)["embedding"]

    def embed_trajectories(self, trajs: Sequence[Trajectory], batch_size: int = 256) -> np.ndarray:
        trajs = list(trajs)
        if not trajs:
            return np.zeros((0, self.cfg.dim))
        parts = [self.embed_batch(self.make_batch(trajs[i:i + batch_size])).data
                 for i in range(0, len(trajs), batch_size)]
        return np.concatenate(parts)

    def encoder_modules(self) -> list[Module]:
        """Modules that produce the downstream embedding."""
        return [m for m in (self.main, self.variational, self.flows) if m is not None]

    def encoder_parameters(self) -> list[Parameter]:
        return [p for m in self.encoder_modules() for p in m.parameters()]

    # ------------------------------------------------------------ objectives

    def generative_loss(self, trajs: Sequence[Trajectory], rng: SeededRng) -> dict[str, Tensor]:
        p = self.preset
        if p.objective == "masked":
            return self._masked_loss(trajs, rng)
        if p.objective == "image":
            batch = self.make_batch(trajs)
            recon = self.decoder(self.encode(batch)["z"])
            return {"recon": pointwise_recon(recon, batch.images, p.recon_kind)}
        if p.objective == "seq2seq":
            return self._seq2seq_loss(trajs, rng)
        raise ValueError(f"preset {p.name!r} has no generative objective")

    def _seq2seq_loss(self, trajs, rng: SeededRng) -> dict[str, Tensor]:
        p = self.preset
        corrupt = "augment" if (p.noise_m > 0 or p.point_drop > 0 or p.segment_drop) else None
        source = self.make_batch(trajs, rng.split("view"), corrupt)
        target = source if corrupt is None else self.make_batch(trajs)
        enc = self.encode(source, rng.split("sample") if self.variational is not None else None)
        z = enc.get("sample", enc["z"])
        teacher = self.main.embed(target, target.targets)
        comps: dict[str, Tensor] = {}
        if isinstance(self.decoder, ODEDecoder):
            out = self.decoder(z, teacher, target.times, target.mask)
            comps["recon"] = pointwise_recon(out, target.feats[..., :2], "mse", target.mask[..., None])
        else:
            out = self.decoder.teacher_forced(z, teacher, target.mask)
            if self.kind == "tokens":
                comps["recon"] = cross_entropy(out[..., :self.vocab], target.targets, target.mask)
                if p.reconstruct_time:
                    comps["time"] = pointwise_recon(out[..., self.vocab], target.time[..., 2], "mse", target.mask)
            else:
                comps["recon"] = pointwise_recon(out, target.feats, "mse", target.mask[..., None])
        if self.variational is not None:
            comps["kl"] = self._kl(enc)
        return comps

    def token_accuracy(self, trajs: Sequence[Trajectory], batch_size: int = 256) -> float:
        """Teacher-forced argmax accuracy of reconstructing clean tokens from the clean trajectory."""
        if not (self.kind == "tokens" and isinstance(self.decoder, RNNDecoder)):
            raise ValueError(f"method {self.preset.name!r} does not reconstruct token sequences")
        trajs = list(trajs)
        hits = total = 0.0
        for i in range(0, len(trajs), batch_size):
            batch = self.make_batch(trajs[i:i + batch_size])
            z = self.encode(batch)["embedding"]
            out = self.decoder.teacher_forced(z, self.main.embed(batch, batch.targets), batch.mask)
            pred = np.argmax(out.data[..., :self.vocab], axis=-1)
            hits += float(((pred == batch.targets) * batch.mask).sum())
            total += float(batch.mask.sum())
        return hits / total

    def _kl(self, enc: dict) -> Tensor:
        g = enc["gaussian"]
        eps = enc["eps"]
        if self.flows is None:
            per = (g.mu * g.mu + ops.exp(g.log_sigma * 2.0) - 1.0 - g.log_sigma * 2.0) * 0.5
            return ops.mean(ops.sum(per, axis=-1))
        # single-sample estimate of log q(z'') - log p(z''); Gaussian constants cancel
        zk = enc["sample"]
        log_q = -ops.sum(g.log_sigma, axis=-1) - 0.5 * (eps * eps).sum(axis=-1) - enc["logdet"]
        log_p = ops.sum(zk * zk, axis=-1) * -0.5
        return ops.mean(log_q - log_p)

    def _masked_loss(self, trajs, rng: SeededRng) -> dict[str, Tensor]:
        batch = self.make_batch(trajs, rng.split("mask"), "mask")
        target_time = batch.time
        # masked positions hide their time features too
        batch.time = batch.time * (~batch.masked)[..., None]
        _, memory = self.main.encode(batch)
        weight = batch.masked & (batch.mask > 0)
        comps = {"recon": cross_entropy(self.token_head(memory), batch.targets, weight)}
        if self.time_head is not None:
            comps["time"] = pointwise_recon(self.time_head(memory), target_time[..., :2], "mse", weight[..., None])
        return comps

    def contrastive_loss(self, trajs: Sequence[Trajectory], rng: SeededRng) -> dict[str, Tensor]:
        p = self.preset
        if p.contrastive == "mec":
            batch = self.make_batch(trajs)
            z1 = l2_normalize(self.projection(self.main.encode(batch)[0]))
            z2 = l2_normalize(self.cde_projection(self.cde(batch.path)))
            return {"con": mec(z1, z2, MECSpec(self.cfg.mec_eps))}
        v1 = self.make_batch(trajs, rng.split("view1"), "augment")
        v2 = self.make_batch(trajs, rng.split("view2"), "augment")
        z1 = self.main.encode(v1)[0]
        z2 = (self.aux or self.main).encode(v2)[0]
        p1, p2 = l2_normalize(self.projection(z1)), l2_normalize(self.projection(z2))
        return {"con": infonce(p1, p2, ContrastiveSpec(self.cfg.temperature))}

    def word2vec_loss(self, trajs: Sequence[Trajectory], rng: SeededRng) -> dict[str, Tensor]:
        batch = self.make_batch(trajs)
        centers, contexts = skipgram_pairs(batch.tokens, batch.mask, self.cfg.word2vec_window)
        if len(centers) == 0:
            raise ValueError("batch has no token with a context")
        negs = sample_negatives(self.noise_cdf(), (len(centers), self.cfg.word2vec_negatives), rng)
        table = self.main.table.table
        loss = sgns_loss(ops.gather_rows(table, centers), ops.gather_rows(self.w_out, contexts),
                         ops.gather_rows(self.w_out, negs))
        return {"sgns": loss}

    def noise_cdf(self) -> np.ndarray:
        counts = np.asarray(self.featurizer.unigram.get(self.preset.tokens, []), dtype=np.float64)
        if counts.size == 0 or counts.sum() == 0:
            counts = np.ones(self.vocab - 1)
        freq = counts ** 0.75
        return np.cumsum(freq / freq.sum())


def skipgram_pairs(tokens: np.ndarray, mask: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """(centre, context) pairs within ``window`` positions over padded rows, both directions."""
    centers, contexts = [], []
    valid = mask > 0
    for k in range(1, window + 1):
        both = valid[:, :-k] & valid[:, k:]
        a, b = tokens[:, :-k][both], tokens[:, k:][both]
        centers += [a, b]
        contexts += [b, a]
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def sample_negatives(cdf: np.ndarray, shape, rng: SeededRng) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, rng.uniform(shape), side="right"), len(cdf) - 1)
