"""Shared encoder configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass

ENCODER_KINDS = ("rnn", "lstm", "gru", "transformer", "cnn", "ode", "cde")


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture choice and sizes.

    ``steps`` is the number of RK4 steps per inter-point interval for ``ode``
    and the number of uniform control intervals for ``cde``.
    """

    kind: str = "gru"
    dim: int = 64
    layers: int = 1
    pooling: str = "mean"
    heads: int = 4
    ff_mult: int = 4
    steps: int = 4
    time_scale: float = 60.0

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; expected one of {ENCODER_KINDS}")
        if self.dim < 1:
            raise ValueError(f"encoder dim must be >= 1, got {self.dim}")
        if self.layers < 1:
            raise ValueError(f"encoder layers must be >= 1, got {self.layers}")
        if self.steps < 1:
            raise ValueError(f"solver steps must be >= 1, got {self.steps}")
        if self.pooling not in ("mean", "last"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)
