"""Encoder/decoder segmentation model with gated skip connections.

The encoder stacks conv blocks with channel widths base * 2^k and halves
resolution with max pooling after each. The decoder mirrors it: nearest 2x
upsampling followed by a 3x3 conv, an attention gate on the skip feature,
channel concatenation, and a conv block. A 1x1 head plus channel softmax
produces per-pixel class probabilities.

Parameters and running buffers are serialized into a bundle (config echo,
ordered names, float64 records); round trips are bitwise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, concat_channels, conv2d, max_pool2d, softmax_channels, upsample_nearest2x
from .blocks import (AttentionGateParams, ConvBlockParams, attention_gate,
                     conv_block, he_uniform, init_attention_gate,
                     init_conv_block, zero_bias)
from .errors import ConfigError, DataError, ShapeError
from .snapshot import load_bundle, save_bundle


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 4
    base_channels: int = 64
    num_classes: int = 3
    in_channels: int = 1

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"model depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")

    def encoder_channels(self) -> list[int]:
        return [self.base_channels * (1 << k) for k in range(self.depth)]

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * (1 << self.depth)


@dataclass
class DecoderLevelParams:
    """One decoder stage at spatial level `level` (skip width base * 2^level)."""

    level: int
    up_w: Tensor
    up_b: Tensor
    gate: AttentionGateParams
    block: ConvBlockParams

    def named_params(self):
        prefix = f"dec{self.level}"
        yield f"{prefix}.up_w", self.up_w
        yield f"{prefix}.up_b", self.up_b
        yield from self.gate.named_params(f"{prefix}.gate")
        yield from self.block.named_params(f"{prefix}.block")

    def named_buffers(self):
        yield from self.block.named_buffers(f"dec{self.level}.block")


@dataclass
class ModelParams:
    config: ModelConfig
    encoders: list[ConvBlockParams]
    bottleneck: ConvBlockParams
    levels: list[DecoderLevelParams] = field(default_factory=list)  # deepest first
    head_w: Tensor = None
    head_b: Tensor = None


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Build freshly initialized parameters; (config, seed) pins every value.

    Conv kernels are Kaiming-uniform, biases zero, batch norm scale 1 /
    shift 0 with zero-mean unit-variance running stats.
    """
    rng = np.random.default_rng(seed)
    widths = config.encoder_channels()
    encoders = []
    fan_in = config.in_channels
    for width in widths:
        encoders.append(init_conv_block(fan_in, width, rng))
        fan_in = width
    bottleneck = init_conv_block(widths[-1], config.bottleneck_channels, rng)

    levels = []
    deep = config.bottleneck_channels
    for k in reversed(range(config.depth)):
        skip = widths[k]
        levels.append(DecoderLevelParams(
            level=k,
            up_w=he_uniform(rng, (skip, deep, 3, 3)),
            up_b=zero_bias(skip),
            gate=init_attention_gate(x_channels=skip, g_channels=deep, rng=rng),
            block=init_conv_block(2 * skip, skip, rng),
        ))
        deep = skip

    return ModelParams(
        config=config,
        encoders=encoders,
        bottleneck=bottleneck,
        levels=levels,
        head_w=he_uniform(rng, (config.num_classes, widths[0], 1, 1)),
        head_b=zero_bias(config.num_classes),
    )


def named_params(params: ModelParams):
    for k, enc in enumerate(params.encoders):
        yield from enc.named_params(f"enc{k}")
    yield from params.bottleneck.named_params("bottleneck")
    for level in params.levels:
        yield from level.named_params()
    yield "head.w", params.head_w
    yield "head.b", params.head_b


def named_buffers(params: ModelParams):
    for k, enc in enumerate(params.encoders):
        yield from enc.named_buffers(f"enc{k}")
    yield from params.bottleneck.named_buffers("bottleneck")
    for level in params.levels:
        yield from level.named_buffers()


def param_count(params: ModelParams) -> int:
    """Trainable float count; running-stat buffers are excluded."""
    return sum(t.size for _, t in named_params(params))


def forward(params: ModelParams, x: Tensor, training: bool) -> Tensor:
    """Probabilities of shape (N, num_classes, H, W); H, W must be divisible
    by 2^depth so pooling and gating stay aligned."""
    cfg = params.config
    if x.ndim != 4:
        raise ShapeError(f"model input must be (N, C, H, W), got shape {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"model expects {cfg.in_channels} input channel(s), got shape {x.shape}")
    step = 1 << cfg.depth
    if x.shape[2] % step or x.shape[3] % step or x.shape[2] < step or x.shape[3] < step:
        raise ShapeError(f"input H, W must be positive multiples of {step} for depth {cfg.depth}, got shape {x.shape}")

    skips: list[Tensor] = []
    h = x
    for enc in params.encoders:
        h = conv_block(h, enc, training)
        skips.append(h)
        h = max_pool2d(h, 2, 2)
    h = conv_block(h, params.bottleneck, training)

    for level in params.levels:
        skip = skips[level.level]
        gated = attention_gate(skip, h, level.gate)
        up = conv2d(upsample_nearest2x(h), level.up_w, level.up_b, stride=1, padding=1)
        h = conv_block(concat_channels(up, gated), level.block, training)

    logits = conv2d(h, params.head_w, params.head_b)
    return softmax_channels(logits)


# -- checkpointing ---------------------------------------------------------------


def save_checkpoint(path: str | Path, params: ModelParams) -> None:
    named: dict[str, np.ndarray] = {}
    for name, tensor in named_params(params):
        named[name] = tensor.data
    for name, buf in named_buffers(params):
        named[name] = buf
    save_bundle(path, asdict(params.config), named)


def load_checkpoint(path: str | Path) -> ModelParams:
    config_dict, tensors = load_bundle(path)
    expected = {"depth", "base_channels", "num_classes", "in_channels"}
    if set(config_dict) != expected:
        raise DataError(f"checkpoint config keys {sorted(config_dict)} do not match {sorted(expected)}")
    try:
        config = ModelConfig(**{k: int(v) for k, v in config_dict.items()})
    except (TypeError, ValueError) as exc:
        raise DataError(f"checkpoint config is not usable: {exc}") from exc

    params = init_model(config, seed=0)
    param_map = dict(named_params(params))
    buffer_map = dict(named_buffers(params))
    expected_names = set(param_map) | set(buffer_map)
    if set(tensors) != expected_names:
        missing = sorted(expected_names - set(tensors))
        extra = sorted(set(tensors) - expected_names)
        raise DataError(f"checkpoint names do not match model: missing {missing[:4]}, extra {extra[:4]}")
    for name, arr in tensors.items():
        if name in param_map:
            if param_map[name].shape != arr.shape:
                raise DataError(f"checkpoint tensor {name!r} has shape {arr.shape}, model expects {param_map[name].shape}")
            param_map[name].data = np.ascontiguousarray(arr)
        else:
            if buffer_map[name].shape != arr.shape:
                raise DataError(f"checkpoint buffer {name!r} has shape {arr.shape}, model expects {buffer_map[name].shape}")
            buffer_map[name][...] = arr
    return params
