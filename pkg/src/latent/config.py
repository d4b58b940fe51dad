"""INI experiment configuration with one section per module.

Example::

    [data]
    train = data/bars_train.csv
    test = data/bars_test.csv
    image_shape = 8, 8, 1

    [encoding]
    whole_bits = 4
    frac_bits = 5

    [privacy]
    epsilon = 0.5
    alpha = 7
    protocol = uer

    [conv]
    layers = conv:8:3, pool:2, flatten

    [dense]
    hidden = 64
    epochs = 30

Every key is optional except ``[data] train``/``test``/``image_shape``.
Unknown sections or keys raise :class:`ConfigError`.  Relative paths are
resolved against the directory holding the config file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

from .augment import AugmentParams
from .dense import DenseNetConfig, OptimizerConfig
from .encoding import EncodingSpec
from .features import ConfigError, ConvConfig, describe_layers, parse_layers
from .ldp import PrivacyParams, ProtocolKind

__all__ = ["ConfigError", "DataConfig", "ExperimentConfig", "load_config", "parse_config", "format_config"]


@dataclass(frozen=True)
class DataConfig:
    train: Path
    test: Path
    image_shape: Tuple[int, int, int]
    label_column: str = "label"
    resize: Optional[Tuple[int, int]] = None


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    encoding: EncodingSpec = EncodingSpec(4, 5)
    epsilon: float = 0.5
    alpha: float = 7.0
    protocol: ProtocolKind = ProtocolKind.UER
    randomize: bool = True
    conv: ConvConfig = None  # filled from image_shape when omitted
    conv_weights: Optional[Path] = None
    dense: DenseNetConfig = field(default_factory=DenseNetConfig)
    n_classes: Optional[int] = None
    augment: AugmentParams = field(default_factory=AugmentParams)
    augment_copies: int = 0
    seed: int = 0
    output_dir: Optional[Path] = None

    def __post_init__(self):
        if self.conv is None:
            shape = self.input_shape
            object.__setattr__(self, "conv", ConvConfig(shape, parse_layers(DEFAULT_LAYERS), 0))
        if self.conv.input_shape != self.input_shape:
            raise ConfigError(f"conv input shape {self.conv.input_shape} does not match image shape {self.input_shape}")
        # parameter-domain checks of the owning module
        try:
            PrivacyParams(self.epsilon, self.alpha, 2)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.augment_copies < 0:
            raise ConfigError("augment copies must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        if self.data.resize is None:
            return self.data.image_shape
        return (*self.data.resize, self.data.image_shape[2])

    def with_privacy(self, epsilon: Optional[float] = None, alpha: Optional[float] = None, seed: Optional[int] = None):
        """Copy with some privacy knobs (and the randomization seed) changed."""
        return replace(
            self,
            epsilon=self.epsilon if epsilon is None else epsilon,
            alpha=self.alpha if alpha is None else alpha,
            seed=self.seed if seed is None else seed,
        )


DEFAULT_LAYERS = "conv:8:3, pool:2, flatten"

_KEYS = {
    "data": {"train", "test", "image_shape", "label_column", "resize"},
    "encoding": {"whole_bits", "frac_bits"},
    "privacy": {"epsilon", "alpha", "protocol", "randomize"},
    "conv": {"layers", "seed", "weights"},
    "dense": {
        "hidden", "activations", "dropout", "n_classes", "optimizer", "lr", "momentum",
        "batch_size", "epochs", "seed",
    },
    "augment": {"shift_x", "shift_y", "rotation", "horizontal_flip", "flip_prob", "copies", "seed"},
    "run": {"seed", "output_dir"},
}


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in text.replace("x", ",").split(",") if t.strip())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _strs(text: str) -> Tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _path(base: Path, text: str, must_exist: bool = True) -> Path:
    p = Path(text).expanduser()
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"referenced file does not exist: {p}")
    return p


def parse_config(text: str, base_dir=".", check_files: bool = True) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    for section in parser.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(parser[section]) - _KEYS[section]
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
    base = Path(base_dir)

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key).strip()
        return default

    try:
        if not parser.has_section("data"):
            raise ConfigError("missing [data] section")
        for key in ("train", "test", "image_shape"):
            if get("data", key) is None:
                raise ConfigError(f"[data] {key} is required")
        shape = _ints(get("data", "image_shape"))
        if len(shape) == 2:
            shape = (*shape, 1)
        if len(shape) != 3:
            raise ConfigError("image_shape must be height, width[, channels]")
        resize = get("data", "resize")
        resize = _ints(resize) if resize else None
        if resize is not None and len(resize) != 2:
            raise ConfigError("resize must be height, width")
        data = DataConfig(
            _path(base, get("data", "train"), check_files),
            _path(base, get("data", "test"), check_files),
            shape,
            get("data", "label_column", "label"),
            resize,
        )
        encoding = EncodingSpec(int(get("encoding", "whole_bits", 4)), int(get("encoding", "frac_bits", 5)))
        input_shape = (*resize, shape[2]) if resize else shape
        conv = ConvConfig(
            input_shape,
            parse_layers(get("conv", "layers", DEFAULT_LAYERS)),
            int(get("conv", "seed", 0)),
        )
        weights = get("conv", "weights")
        hidden = _ints(get("dense", "hidden", "64"))
        n_hidden = len(hidden)
        activations = _strs(get("dense", "activations", ",".join(["relu"] * n_hidden)))
        dropout = _floats(get("dense", "dropout", ",".join(["0.5"] * n_hidden)))
        optimizer = OptimizerConfig(
            get("dense", "optimizer", "adam"),
            float(get("dense", "lr", 1e-3)),
            float(get("dense", "momentum", 0.0)),
        )
        n_classes = get("dense", "n_classes")
        dense = DenseNetConfig(
            hidden=hidden,
            activations=activations,
            dropout=dropout,
            n_classes=int(n_classes) if n_classes else 2,
            optimizer=optimizer,
            batch_size=int(get("dense", "batch_size", 32)),
            epochs=int(get("dense", "epochs", 30)),
            seed=int(get("dense", "seed", 0)),
        )
        augment = AugmentParams(
            float(get("augment", "shift_x", 0.0)),
            float(get("augment", "shift_y", 0.0)),
            float(get("augment", "rotation", 0.0)),
            parser.getboolean("augment", "horizontal_flip", fallback=False),
            float(get("augment", "flip_prob", 0.5)),
            int(get("augment", "seed", 0)),
        )
        output = get("run", "output_dir")
        return ExperimentConfig(
            data=data,
            encoding=encoding,
            epsilon=float(get("privacy", "epsilon", 0.5)),
            alpha=float(get("privacy", "alpha", 7.0)),
            protocol=ProtocolKind(get("privacy", "protocol", "uer")),
            randomize=parser.getboolean("privacy", "randomize", fallback=True),
            conv=conv,
            conv_weights=_path(base, weights, check_files) if weights else None,
            dense=dense,
            n_classes=int(n_classes) if n_classes else None,
            augment=augment,
            augment_copies=int(get("augment", "copies", 0)),
            seed=int(get("run", "seed", 0)),
            output_dir=_path(base, output, must_exist=False) if output else None,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, check_files: bool = True) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent, check_files)


def format_config(cfg: ExperimentConfig) -> str:
    """Render a config back to INI text (paths are written absolute)."""
    d = cfg.dense
    lines = [
        "[data]",
        f"train = {cfg.data.train}",
        f"test = {cfg.data.test}",
        "image_shape = " + ", ".join(map(str, cfg.data.image_shape)),
        f"label_column = {cfg.data.label_column}",
    ]
    if cfg.data.resize:
        lines.append("resize = " + ", ".join(map(str, cfg.data.resize)))
    lines += [
        "",
        "[encoding]",
        f"whole_bits = {cfg.encoding.whole_bits}",
        f"frac_bits = {cfg.encoding.frac_bits}",
        "",
        "[privacy]",
        f"epsilon = {cfg.epsilon!r}",
        f"alpha = {cfg.alpha!r}",
        f"protocol = {cfg.protocol.value.lower()}",
        f"randomize = {str(cfg.randomize).lower()}",
        "",
        "[conv]",
        f"layers = {describe_layers(cfg.conv.layers)}",
        f"seed = {cfg.conv.seed}",
    ]
    if cfg.conv_weights:
        lines.append(f"weights = {cfg.conv_weights}")
    lines += [
        "",
        "[dense]",
        "hidden = " + ", ".join(map(str, d.hidden)),
        "activations = " + ", ".join(d.activations),
        "dropout = " + ", ".join(repr(x) for x in d.dropout),
        f"optimizer = {d.optimizer.name}",
        f"lr = {d.optimizer.lr!r}",
        f"momentum = {d.optimizer.momentum!r}",
        f"batch_size = {d.batch_size}",
        f"epochs = {d.epochs}",
        f"seed = {d.seed}",
    ]
    if cfg.n_classes:
        lines.append(f"n_classes = {cfg.n_classes}")
    a = cfg.augment
    lines += [
        "",
        "[augment]",
        f"shift_x = {a.shift_x!r}",
        f"shift_y = {a.shift_y!r}",
        f"rotation = {a.rotation!r}",
        f"horizontal_flip = {str(a.horizontal_flip).lower()}",
        f"flip_prob = {a.flip_prob!r}",
        f"copies = {cfg.augment_copies}",
        f"seed = {a.seed}",
        "",
        "[run]",
        f"seed = {cfg.seed}",
    ]
    if cfg.output_dir:
        lines.append(f"output_dir = {cfg.output_dir}")
    return "\n".join(lines) + "\n"
