"""Two-convolution image encoder and its mirrored decoder."""

from __future__ import annotations

import numpy as np

from ..numerics import Linear, Module, Parameter, SeededRng, Tensor, as_tensor, ops, xavier_uniform
from ..numerics.tensor import ShapeError


class Conv2d(Module):
    def __init__(self, rng: SeededRng, in_channels: int, out_channels: int, kernel: int = 3):
        fan_in, fan_out = kernel * kernel * in_channels, kernel * kernel * out_channels
        self.kernel = Parameter(xavier_uniform(rng, fan_in, fan_out, (kernel, kernel, in_channels, out_channels)))
        self.bias = Parameter(np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.kernel, self.bias)


class CNNEncoder(Module):
    """``FC(MaxPool(conv2(relu(conv1(img)))))`` on (B, W, H, C) images with even sides."""

    def __init__(self, rng: SeededRng, width: int, height: int, channels: int, dim: int,
                 filters: tuple[int, int] = (16, 16), kernel: int = 3):
        if width % 2 or height % 2:
            raise ValueError(f"image sides must be even for 2x2 pooling, got {(width, height)}")
        self.shape = (width, height, channels)
        self.kernel_size = kernel
        self.conv1 = Conv2d(rng, channels, filters[0], kernel)
        self.conv2 = Conv2d(rng, filters[0], filters[1], kernel)
        self.pooled_shape = (width // 2, height // 2, filters[1])
        self.fc = Linear(rng, int(np.prod(self.pooled_shape)), dim)

    def features(self, img: Tensor) -> Tensor:
        """Pooled activations before the fully-connected layer."""
        img = as_tensor(img)
        if img.ndim == 3:
            img = ops.reshape(img, (1,) + img.shape)
        if img.shape[1] < self.kernel_size or img.shape[2] < self.kernel_size:
            raise ShapeError(f"image {img.shape[1:3]} is smaller than the {self.kernel_size}x{self.kernel_size} kernel")
        if img.shape[1:] != self.shape:
            raise ShapeError(f"CNN encoder expects images of shape {self.shape}, got {img.shape[1:]}")
        return ops.max_pool2d(self.conv2(ops.relu(self.conv1(img))))

    def __call__(self, img: Tensor) -> Tensor:
        f = self.features(img)
        return self.fc(ops.reshape(f, (f.shape[0], -1)))


def cnn_encode(img, encoder: CNNEncoder) -> Tensor:
    img = as_tensor(img)
    z = encoder(img)
    return z[0] if img.ndim == 3 else z


class CNNDecoder(Module):
    """``conv2(relu(conv1(upsample(reshape(FC(z))))))`` back to (B, W, H, C)."""

    def __init__(self, rng: SeededRng, dim: int, width: int, height: int, channels: int,
                 filters: tuple[int, int] = (16, 16), kernel: int = 3):
        if width % 2 or height % 2:
            raise ValueError(f"image sides must be even for 2x upsampling, got {(width, height)}")
        self.shape = (width, height, channels)
        self.seed_shape = (width // 2, height // 2, filters[1])
        self.fc = Linear(rng, dim, int(np.prod(self.seed_shape)))
        self.conv1 = Conv2d(rng, filters[1], filters[0], kernel)
        self.conv2 = Conv2d(rng, filters[0], channels, kernel)

    def __call__(self, z: Tensor) -> Tensor:
        z = as_tensor(z)
        single = z.ndim == 1
        if single:
            z = ops.reshape(z, (1, -1))
        x = ops.reshape(ops.relu(self.fc(z)), (z.shape[0],) + self.seed_shape)
        out = self.conv2(ops.relu(self.conv1(ops.upsample2d(x))))
        return out[0] if single else out


def cnn_decode(z, decoder: CNNDecoder) -> Tensor:
    return decoder(z)
