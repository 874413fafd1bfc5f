"""Float64 arrays with reverse-mode gradients, a splittable RNG and Adam."""

from . import ops
from .gradcheck import grad_check, grad_check_params
from .nn import MLP, LayerNorm, Linear, Module, xavier_uniform
from .ops import apply_primitive
from .optim import Adam, OptimizerState, adam_step, clip_grad_norm
from .rng import SeededRng
from .tensor import GradientTape, Parameter, ShapeError, Tensor, as_tensor, backward

__all__ = [
    "Adam", "GradientTape", "LayerNorm", "Linear", "MLP", "Module", "OptimizerState",
    "Parameter", "SeededRng", "ShapeError", "Tensor", "adam_step", "apply_primitive",
    "as_tensor", "backward", "clip_grad_norm", "grad_check", "grad_check_params", "ops",
    "xavier_uniform",
]
