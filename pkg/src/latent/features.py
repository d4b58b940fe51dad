"""Untrained convolutional feature extractor run on the data owner's device.

Images are ``(height, width, channels)`` float arrays.  A module is a fixed
stack of convolutions and max-pools ending in a row-major flatten; weights
are drawn once from a seeded He-uniform distribution and never updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ConfigError",
    "Conv",
    "MaxPool",
    "Flatten",
    "ConvConfig",
    "ConvModule",
    "build_conv_module",
    "extract",
    "extract_batch",
    "conv2d",
    "max_pool",
    "resize_nearest",
    "mnist_config",
    "cifar_config",
    "toy_config",
    "parse_layers",
]

ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
    "linear": lambda z: z,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: int
    stride: int = 1
    activation: str = "relu"
    padding: str = "valid"

    def __post_init__(self):
        if self.filters < 1 or self.kernel < 1 or self.stride < 1:
            raise ConfigError("filters, kernel and stride must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.padding not in ("valid", "same"):
            raise ConfigError(f"padding must be 'valid' or 'same', got {self.padding!r}")


@dataclass(frozen=True)
class MaxPool:
    window: int

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("pool window must be positive")


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Conv, MaxPool, Flatten]


@dataclass(frozen=True)
class ConvConfig:
    input_shape: Tuple[int, int, int]
    layers: Tuple[Layer, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError("input_shape must be (height, width, channels)")
        for layer in self.layers:
            if not isinstance(layer, (Conv, MaxPool, Flatten)):
                # dropout and friends have no place in a module that is never trained
                raise ConfigError(f"unsupported layer {layer!r}")
        if not self.layers or not isinstance(self.layers[-1], Flatten):
            raise ConfigError("the last layer must be Flatten")
        if any(isinstance(layer, Flatten) for layer in self.layers[:-1]):
            raise ConfigError("Flatten may only appear last")

    def output_shapes(self) -> List[Tuple[int, ...]]:
        """Shape after each layer; raises ConfigError on an impossible chain."""
        h, w, c = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if layer.padding == "same":
                    h, w = -(-h // layer.stride), -(-w // layer.stride)
                else:
                    if h < layer.kernel or w < layer.kernel:
                        raise ConfigError(f"layer {i}: {h}x{w} input is smaller than a {layer.kernel}x{layer.kernel} kernel")
                    h = (h - layer.kernel) // layer.stride + 1
                    w = (w - layer.kernel) // layer.stride + 1
                c = layer.filters
                shapes.append((h, w, c))
            elif isinstance(layer, MaxPool):
                if h < layer.window or w < layer.window:
                    raise ConfigError(f"layer {i}: {h}x{w} input is smaller than the pool window")
                h, w = h // layer.window, w // layer.window
                shapes.append((h, w, c))
            else:
                shapes.append((h * w * c,))
        return shapes

    @property
    def output_length(self) -> int:
        return self.output_shapes()[-1][0]


@dataclass(frozen=True, eq=False)
class ConvModule:
    config: ConvConfig
    kernels: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    output_length: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "output_length", self.config.output_length)
        for arr in (*self.kernels, *self.biases):
            arr.flags.writeable = False

    @classmethod
    def from_weights(cls, config: ConvConfig, kernels: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> "ConvModule":
        """Build a module around externally supplied (e.g. pretrained) weights."""
        convs = [layer for layer in config.layers if isinstance(layer, Conv)]
        if len(kernels) != len(convs) or len(biases) != len(convs):
            raise ConfigError("one kernel and one bias per convolution are required")
        c = config.input_shape[2]
        ks, bs = [], []
        for layer, k, b in zip(convs, kernels, biases):
            k = np.array(k, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if k.shape != (layer.kernel, layer.kernel, c, layer.filters) or b.shape != (layer.filters,):
                raise ConfigError(f"weight shape {k.shape} does not match {layer}")
            ks.append(k)
            bs.append(b)
            c = layer.filters
        return cls(config, tuple(ks), tuple(bs))

    def save_weights(self, path) -> None:
        arrays = {f"kernel{i}": k for i, k in enumerate(self.kernels)}
        arrays.update({f"bias{i}": b for i, b in enumerate(self.biases)})
        np.savez(path, **arrays)

    @classmethod
    def load_weights(cls, config: ConvConfig, path) -> "ConvModule":
        with np.load(path) as data:
            n = sum(isinstance(layer, Conv) for layer in config.layers)
            return cls.from_weights(config, [data[f"kernel{i}"] for i in range(n)], [data[f"bias{i}"] for i in range(n)])


def build_conv_module(config: ConvConfig) -> ConvModule:
    config.output_shapes()
    rng = np.random.default_rng(config.seed)
    c = config.input_shape[2]
    kernels, biases = [], []
    for layer in config.layers:
        if isinstance(layer, Conv):
            fan_in = layer.kernel * layer.kernel * c
            limit = np.sqrt(6.0 / fan_in)
            kernels.append(rng.uniform(-limit, limit, size=(layer.kernel, layer.kernel, c, layer.filters)))
            biases.append(np.zeros(layer.filters))
            c = layer.filters
    return ConvModule(config, tuple(kernels), tuple(biases))


def _same_pads(size: int, kernel: int, stride: int) -> Tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1, padding: str = "valid") -> np.ndarray:
    """Cross-correlation of ``(N, H, W, C)`` input with a ``(k, k, C, F)`` kernel."""
    k = kernel.shape[0]
    if padding == "same":
        ph, pw = _same_pads(x.shape[1], k, stride), _same_pads(x.shape[2], k, stride)
        x = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # windows: (N, Ho, Wo, C, k, k)
    return np.einsum("nhwcij,ijcf->nhwf", windows, kernel, optimize=True) + bias


def max_pool(x: np.ndarray, window: int) -> np.ndarray:
    """Non-overlapping max-pool of ``(N, H, W, C)``; trailing rows/cols are dropped."""
    n, h, w, c = x.shape
    ho, wo = h // window, w // window
    x = x[:, : ho * window, : wo * window]
    return x.reshape(n, ho, window, wo, window, c).max(axis=(2, 4))


def extract_batch(module: ConvModule, images, pre_activation: bool = False) -> np.ndarray:
    """Features for a batch ``(N, H, W, C)`` as an ``(N, r)`` array.

    ``pre_activation=True`` skips every activation (useful to check linearity).
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3 and module.config.input_shape[2] == 1 and x.shape[1:] == module.config.input_shape[:2]:
        x = x[..., None]
    if x.ndim != 4 or x.shape[1:] != module.config.input_shape:
        raise ValueError(f"expected images of shape {module.config.input_shape}, got {x.shape[1:]}")
    ki = 0
    for layer in module.config.layers:
        if isinstance(layer, Conv):
            x = conv2d(x, module.kernels[ki], module.biases[ki], layer.stride, layer.padding)
            if not pre_activation:
                x = ACTIVATIONS[layer.activation](x)
            ki += 1
        elif isinstance(layer, MaxPool):
            x = max_pool(x, layer.window)
        else:
            x = x.reshape(x.shape[0], -1)
    return x


def extract(module: ConvModule, image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    shape = module.config.input_shape
    if image.shape == shape[:2] and shape[2] == 1:
        image = image[..., None]
    if image.shape != shape:
        raise ValueError(f"expected an image of shape {shape}, got {image.shape}")
    return extract_batch(module, image[None])[0]


def resize_nearest(image: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize of an ``(H, W, ...)`` image to ``size``."""
    h, w = image.shape[:2]
    rows = (np.arange(size[0]) * h) // size[0]
    cols = (np.arange(size[1]) * w) // size[1]
    return image[rows][:, cols]


def mnist_config(seed: int = 0) -> ConvConfig:
    return ConvConfig(
        (28, 28, 1),
        (Conv(32, 3), Conv(64, 3), MaxPool(2), Flatten()),
        seed,
    )


def cifar_config(seed: int = 0, size: int = 32) -> ConvConfig:
    """CIFAR-10 stack; ``size=56`` gives the upscaled variant (r = 9216)."""
    return ConvConfig(
        (size, size, 3),
        (
            Conv(32, 3, padding="same"),
            Conv(32, 3),
            MaxPool(2),
            Conv(64, 3, padding="same"),
            Conv(64, 3),
            MaxPool(2),
            Flatten(),
        ),
        seed,
    )


def toy_config(seed: int = 0, size: int = 8, filters: int = 8) -> ConvConfig:
    return ConvConfig((size, size, 1), (Conv(filters, 3), MaxPool(2), Flatten()), seed)


def parse_layers(text: str) -> Tuple[Layer, ...]:
    """Parse ``"conv:32:3:1:relu, conv:64:3, pool:2, flatten"``.

    Conv fields are ``filters:kernel[:stride[:activation[:padding]]]``.
    """
    layers: List[Layer] = []
    for item in (part.strip() for part in text.split(",")):
        if not item:
            continue
        name, *args = item.split(":")
        name = name.lower()
        try:
            if name == "conv":
                if not 2 <= len(args) <= 5:
                    raise ConfigError(f"bad conv layer {item!r}")
                kw = dict(filters=int(args[0]), kernel=int(args[1]))
                if len(args) > 2:
                    kw["stride"] = int(args[2])
                if len(args) > 3:
                    kw["activation"] = args[3]
                if len(args) > 4:
                    kw["padding"] = args[4]
                layers.append(Conv(**kw))
            elif name in ("pool", "maxpool"):
                layers.append(MaxPool(int(args[0])))
            elif name == "flatten":
                layers.append(Flatten())
            else:
                raise ConfigError(f"unsupported layer {item!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad layer {item!r}: {exc}") from exc
    return tuple(layers)


def describe_layers(layers: Sequence[Layer]) -> str:
    out = []
    for layer in layers:
        if isinstance(layer, Conv):
            out.append(f"conv:{layer.filters}:{layer.kernel}:{layer.stride}:{layer.activation}:{layer.padding}")
        elif isinstance(layer, MaxPool):
            out.append(f"pool:{layer.window}")
        else:
            out.append("flatten")
    return ", ".join(out)
