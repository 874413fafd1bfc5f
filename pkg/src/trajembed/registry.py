"""Method presets: each surveyed method expressed as a composition of pipeline components."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

PREPROCESSORS = ("Sliding-Window", "Tokenization", "Augmentation", "Map-matching", "Pixelation",
                 "Normalization", "Spline")
EMBEDDERS = ("Word2vec", "Index-fetching", "FC")
CODECS = ("RNN", "Transformer", "CNN", "ODE", "CDE")
POSTPROCESSORS = ("Variational", "NF")
LOSSES = ("Reconstruction", "Contrastive", "Regularization")
PRETRAINERS = ("Generative", "Contrastive", "Hybrid", "-")

TOKEN_SOURCES = ("grid", "segment", "window")
CONTINUOUS_INPUTS = ("window", "trajectory", "pixels")
OBJECTIVES = ("seq2seq", "masked", "image", "word2vec", "none")


def _join(parts: tuple[str, ...]) -> str:
    return "+".join(parts) if parts else "-"


@dataclass(frozen=True)
class MethodPreset:
    """Component lists of one method plus the knobs that wire them together.

    The first seven fields are the component columns. The remaining fields pick
    the token source, the continuous input, the reconstruction objective and
    the augmentation intensities used to build views.
    """

    name: str
    preprocessors: tuple[str, ...]
    embedders: tuple[str, ...]
    codecs: tuple[str, ...]
    postprocessors: tuple[str, ...]
    losses: tuple[str, ...]
    pretrainer: str
    tokens: str | None = None
    continuous: str | None = None
    rnn_variant: str = "gru"
    objective: str = "none"
    reconstruct_time: bool = False
    recon_kind: str = "mse"
    noise_m: float = 0.0
    point_drop: float = 0.0
    segment_drop: tuple[int, int] | None = None
    mask_prob: float = 0.0
    contrastive: str | None = None
    twin_encoders: bool = False
    notes: str = ""

    def __post_init__(self):
        for value, known, what in ((self.preprocessors, PREPROCESSORS, "preprocessor"),
                                   (self.embedders, EMBEDDERS, "embedder"),
                                   (self.codecs, CODECS, "codec"),
                                   (self.postprocessors, POSTPROCESSORS, "postprocessor"),
                                   (self.losses, LOSSES, "loss")):
            for item in value:
                if item not in known:
                    raise ValueError(f"preset {self.name!r}: unknown {what} {item!r}")
        if self.pretrainer not in PRETRAINERS:
            raise ValueError(f"preset {self.name!r}: unknown pre-trainer {self.pretrainer!r}")
        if self.tokens is not None and self.tokens not in TOKEN_SOURCES:
            raise ValueError(f"preset {self.name!r}: unknown token source {self.tokens!r}")
        if self.continuous is not None and self.continuous not in CONTINUOUS_INPUTS:
            raise ValueError(f"preset {self.name!r}: unknown continuous input {self.continuous!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"preset {self.name!r}: unknown objective {self.objective!r}")
        if self.contrastive not in (None, "infonce", "mec"):
            raise ValueError(f"preset {self.name!r}: unknown contrastive loss {self.contrastive!r}")
        has_rec = "Reconstruction" in self.losses
        has_con = "Contrastive" in self.losses
        required = {"Generative": (has_rec, "a reconstruction loss"),
                    "Contrastive": (has_con, "a contrastive loss"),
                    "Hybrid": (has_rec and has_con, "reconstruction and contrastive losses"),
                    "-": (not self.losses, "no loss")}
        ok, need = required[self.pretrainer]
        if not ok:
            raise ValueError(f"preset {self.name!r}: pre-trainer {self.pretrainer} needs {need}")
        if has_con and self.contrastive is None:
            raise ValueError(f"preset {self.name!r}: contrastive loss kind missing")
        if has_rec and self.objective in ("none", "word2vec"):
            raise ValueError(f"preset {self.name!r}: reconstruction loss needs a generative objective")
        if self.pretrainer == "-" and "Word2vec" not in self.embedders:
            raise ValueError(f"preset {self.name!r}: a preset without pre-trainer must train word2vec tokens")
        if self.tokens is None and self.continuous is None:
            raise ValueError(f"preset {self.name!r}: needs a token source or a continuous input")
        if "Regularization" in self.losses and "Variational" not in self.postprocessors:
            raise ValueError(f"preset {self.name!r}: regularization is the KL term of a variational postprocessor")

    def columns(self) -> dict[str, str]:
        """The component columns as ``+``-joined strings, ``-`` for empty."""
        return {
            "preprocessor": _join(self.preprocessors),
            "embedder": _join(self.embedders),
            "codec": _join(self.codecs),
            "postprocessor": _join(self.postprocessors),
            "loss": _join(self.losses),
            "pretrainer": self.pretrainer,
        }

    @property
    def generative(self) -> bool:
        return self.pretrainer in ("Generative", "Hybrid")

    @property
    def contrastive_branch(self) -> bool:
        return self.pretrainer in ("Contrastive", "Hybrid")

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "MethodPreset":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown preset keys: {sorted(unknown)}")
        kw = {}
        for key, value in obj.items():
            kw[key] = tuple(value) if isinstance(value, list) else value
        return cls(**kw)

    def with_options(self, **changes) -> "MethodPreset":
        return replace(self, **changes)


def _p(name, pre, emb, codec, post, loss, trainer, **kw) -> MethodPreset:
    split = lambda s: tuple(s.split("+")) if s != "-" else ()  # noqa: E731
    return MethodPreset(name, split(pre), split(emb), split(codec), split(post), split(loss), trainer, **kw)


_PRESETS: dict[str, MethodPreset] = {p.name: p for p in [
    _p("FVTI", "Sliding-Window+Tokenization", "Word2vec", "-", "-", "-", "-",
       tokens="window", objective="word2vec",
       notes="window speed/turn buckets as tokens; range-rate quantisation not modelled"),
    _p("GCM", "Tokenization", "Word2vec", "-", "-", "-", "-", tokens="grid", objective="word2vec"),
    _p("POI2Vec", "Tokenization", "Word2vec", "-", "-", "-", "-", tokens="grid", objective="word2vec",
       notes="negative sampling replaces the hierarchical spatial tree"),
    _p("TALE", "Tokenization", "Word2vec", "-", "-", "-", "-", tokens="grid", objective="word2vec",
       notes="negative sampling replaces the temporal Huffman tree"),
    _p("CTLE", "Augmentation", "Index-fetching+FC", "Transformer", "-", "Reconstruction", "Generative",
       tokens="grid", objective="masked", reconstruct_time=True, mask_prob=0.15,
       notes="masked grid-cell and time-of-day prediction"),
    _p("Toast", "Augmentation", "Index-fetching", "Transformer", "-", "Reconstruction+Contrastive", "Hybrid",
       tokens="segment", objective="masked", mask_prob=0.15, point_drop=0.2, contrastive="infonce",
       notes="masked segment prediction; view discrimination stands in for next-trajectory prediction"),
    _p("DTC", "Tokenization", "Index-fetching", "RNN", "-", "Reconstruction", "Generative",
       tokens="grid", objective="seq2seq", rnn_variant="lstm"),
    _p("trajectory2vec", "Sliding-Window", "FC", "RNN", "-", "Reconstruction", "Generative",
       continuous="window", objective="seq2seq", rnn_variant="lstm"),
    _p("TremBR", "Map-matching", "Word2vec+FC", "RNN", "-", "Reconstruction", "Generative",
       tokens="segment", objective="seq2seq", reconstruct_time=True, rnn_variant="lstm",
       notes="word2vec segment vectors concatenated with time features before the FC layer"),
    _p("CAETSC", "Pixelation", "FC", "CNN", "-", "Reconstruction", "Generative",
       continuous="pixels", objective="image"),
    _p("GM-VSAE", "Tokenization", "Index-fetching", "RNN", "Variational", "Reconstruction+Regularization",
       "Generative", tokens="grid", objective="seq2seq", rnn_variant="gru",
       notes="single Gaussian component instead of a mixture"),
    _p("TrajODE", "Normalization", "FC", "ODE", "Variational+NF", "Reconstruction+Regularization", "Generative",
       continuous="trajectory", objective="seq2seq",
       notes="planar flows replace the continuous normalising flow; no spatio-temporal gating"),
    _p("t2vec", "Augmentation+Tokenization", "Index-fetching", "RNN", "-", "Reconstruction", "Generative",
       tokens="grid", objective="seq2seq", noise_m=20.0, point_drop=0.2,
       notes="cross-entropy replaces the spatial-proximity-aware loss"),
    _p("Robust DAA", "Pixelation", "FC", "CNN", "-", "Reconstruction", "Generative",
       continuous="pixels", objective="image", recon_kind="mae",
       notes="absolute error stands in for the robust decomposition"),
    _p("TrajectorySim", "Augmentation+Tokenization", "Index-fetching", "RNN", "-", "Reconstruction", "Generative",
       tokens="grid", objective="seq2seq", noise_m=30.0, point_drop=0.3,
       notes="cross-entropy replaces the spatio-temporal proximity loss"),
    _p("PreCLN", "Map-matching+Augmentation", "Index-fetching+FC", "Transformer", "-", "Contrastive",
       "Contrastive", tokens="segment", point_drop=0.2, segment_drop=(1, 3), contrastive="infonce"),
    _p("TrajCL", "Augmentation+Tokenization", "Index-fetching+FC", "Transformer", "-", "Contrastive",
       "Contrastive", tokens="grid", noise_m=20.0, point_drop=0.2, segment_drop=(1, 3), contrastive="infonce",
       notes="angle features omitted"),
    _p("START", "Map-matching+Augmentation", "Index-fetching+FC", "Transformer", "-",
       "Contrastive+Reconstruction", "Hybrid", tokens="segment", objective="masked", mask_prob=0.15,
       point_drop=0.2, segment_drop=(1, 3), contrastive="infonce"),
    _p("LightPath", "Map-matching+Augmentation", "Index-fetching", "Transformer", "-",
       "Contrastive+Reconstruction", "Hybrid", tokens="segment", objective="masked", mask_prob=0.15,
       point_drop=0.2, contrastive="infonce", twin_encoders=True,
       notes="main and auxiliary encoders are independent; no momentum update"),
    _p("MMTEC", "Map-matching+Spline", "Index-fetching+FC", "Transformer+CDE", "-", "Contrastive", "Contrastive",
       tokens="segment", continuous="trajectory", contrastive="mec",
       notes="transformer over matched segments and CDE over the coordinate spline form the two views"),
]}

METHOD_NAMES = tuple(_PRESETS)


def build_method(name: str) -> MethodPreset:
    try:
        return _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown method {name!r}; known methods: {', '.join(METHOD_NAMES)}") from None


def resolve_method(spec) -> MethodPreset:
    """A preset from its name, from an inline dict, or a preset passed through."""
    if isinstance(spec, MethodPreset):
        return spec
    if isinstance(spec, str):
        return build_method(spec)
    if isinstance(spec, dict):
        return MethodPreset.from_dict(spec)
    raise TypeError(f"method must be a name, dict or MethodPreset, got {type(spec).__name__}")
