"""Network building blocks: conv blocks, ConvLSTM cells, attention gates.

Parameter structs are plain dataclasses of Tensors plus numpy running
buffers. Every struct exposes `named_params` (trainable, in a fixed order)
and `named_buffers` (non-trainable state) so the model can serialize and
update them uniformly. Initialization draws from a caller-supplied
generator in field order, so a seed pins every weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autograd import (Tensor, batch_norm, concat_channels, conv2d, sigmoid,
                       tanh, upsample_nearest2x)
from .errors import ShapeError, UsageError

NamedTensors = Iterator[tuple[str, Tensor]]
NamedArrays = Iterator[tuple[str, np.ndarray]]


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    """Kaiming-uniform draw with bound sqrt(6 / fan_in); fan_in is the
    receptive field size times input channels."""
    fan_in = 1
    for extent in shape[1:]:
        fan_in *= extent
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zero_bias(channels: int) -> Tensor:
    return Tensor(np.zeros(channels), requires_grad=True)


# -- batch norm ---------------------------------------------------------------


@dataclass
class BatchNormParams:
    scale: Tensor
    shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray

    def named_params(self, prefix: str) -> NamedTensors:
        yield f"{prefix}.scale", self.scale
        yield f"{prefix}.shift", self.shift

    def named_buffers(self, prefix: str) -> NamedArrays:
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var


def init_batch_norm(channels: int) -> BatchNormParams:
    return BatchNormParams(
        scale=Tensor(np.ones(channels), requires_grad=True),
        shift=Tensor(np.zeros(channels), requires_grad=True),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
    )


# -- conv block ----------------------------------------------------------------


@dataclass
class ConvBlockParams:
    """Two (3x3 conv -> batch norm -> relu) stages."""

    w1: Tensor
    b1: Tensor
    bn1: BatchNormParams
    w2: Tensor
    b2: Tensor
    bn2: BatchNormParams

    def named_params(self, prefix: str) -> NamedTensors:
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield from self.bn1.named_params(f"{prefix}.bn1")
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2
        yield from self.bn2.named_params(f"{prefix}.bn2")

    def named_buffers(self, prefix: str) -> NamedArrays:
        yield from self.bn1.named_buffers(f"{prefix}.bn1")
        yield from self.bn2.named_buffers(f"{prefix}.bn2")


def init_conv_block(in_channels: int, out_channels: int, rng: np.random.Generator) -> ConvBlockParams:
    return ConvBlockParams(
        w1=he_uniform(rng, (out_channels, in_channels, 3, 3)),
        b1=zero_bias(out_channels),
        bn1=init_batch_norm(out_channels),
        w2=he_uniform(rng, (out_channels, out_channels, 3, 3)),
        b2=zero_bias(out_channels),
        bn2=init_batch_norm(out_channels),
    )


def conv_block(x: Tensor, p: ConvBlockParams, training: bool) -> Tensor:
    h = conv2d(x, p.w1, p.b1, stride=1, padding=1)
    h = batch_norm(h, p.bn1.scale, p.bn1.shift, p.bn1.running_mean, p.bn1.running_var, training).relu()
    h = conv2d(h, p.w2, p.b2, stride=1, padding=1)
    return batch_norm(h, p.bn2.scale, p.bn2.shift, p.bn2.running_mean, p.bn2.running_var, training).relu()


# -- convolutional LSTM ----------------------------------------------------------


@dataclass
class ConvLSTMCellParams:
    """Input-to-state and state-to-state 3x3 kernels plus a bias per gate,
    in gate order: input, forget, output, candidate. No peephole terms."""

    wx_i: Tensor
    wh_i: Tensor
    b_i: Tensor
    wx_f: Tensor
    wh_f: Tensor
    b_f: Tensor
    wx_o: Tensor
    wh_o: Tensor
    b_o: Tensor
    wx_c: Tensor
    wh_c: Tensor
    b_c: Tensor

    @property
    def hidden_channels(self) -> int:
        return self.wx_i.shape[0]

    @property
    def in_channels(self) -> int:
        return self.wx_i.shape[1]

    def named_params(self, prefix: str) -> NamedTensors:
        for gate in ("i", "f", "o", "c"):
            yield f"{prefix}.wx_{gate}", getattr(self, f"wx_{gate}")
            yield f"{prefix}.wh_{gate}", getattr(self, f"wh_{gate}")
            yield f"{prefix}.b_{gate}", getattr(self, f"b_{gate}")


def init_convlstm_cell(in_channels: int, hidden_channels: int,
                       rng: np.random.Generator) -> ConvLSTMCellParams:
    fields = {}
    for gate in ("i", "f", "o", "c"):
        fields[f"wx_{gate}"] = he_uniform(rng, (hidden_channels, in_channels, 3, 3))
        fields[f"wh_{gate}"] = he_uniform(rng, (hidden_channels, hidden_channels, 3, 3))
        fields[f"b_{gate}"] = zero_bias(hidden_channels)
    return ConvLSTMCellParams(**fields)


def convlstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
                  p: ConvLSTMCellParams) -> tuple[Tensor, Tensor]:
    """One ConvLSTM update.

    i = sig(Wxi*x + Whi*h + bi), f and o likewise, cand = tanh(Wxc*x + Whc*h + bc),
    c = f.c_prev + i.cand, h = o.tanh(c). All convs 3x3, padding 1.
    """
    if x.shape[1] != p.in_channels:
        raise ShapeError(f"convlstm_step input has {x.shape[1]} channels, cell expects {p.in_channels}")
    if h_prev.shape != c_prev.shape or h_prev.shape[1] != p.hidden_channels:
        raise ShapeError(f"convlstm_step state shapes {h_prev.shape} / {c_prev.shape} do not match hidden size {p.hidden_channels}")
    if x.shape[0] != h_prev.shape[0] or x.shape[2:] != h_prev.shape[2:]:
        raise ShapeError(f"convlstm_step input {x.shape} and state {h_prev.shape} disagree on N, H, W")

    gate_i = sigmoid(conv2d(x, p.wx_i, p.b_i, 1, 1) + conv2d(h_prev, p.wh_i, None, 1, 1))
    gate_f = sigmoid(conv2d(x, p.wx_f, p.b_f, 1, 1) + conv2d(h_prev, p.wh_f, None, 1, 1))
    gate_o = sigmoid(conv2d(x, p.wx_o, p.b_o, 1, 1) + conv2d(h_prev, p.wh_o, None, 1, 1))
    cand = tanh(conv2d(x, p.wx_c, p.b_c, 1, 1) + conv2d(h_prev, p.wh_c, None, 1, 1))
    c = gate_f * c_prev + gate_i * cand
    h = gate_o * c.tanh()
    return h, c


@dataclass
class BiConvLSTMParams:
    forward_cell: ConvLSTMCellParams
    backward_cell: ConvLSTMCellParams
    merge_w: Tensor
    merge_b: Tensor

    def named_params(self, prefix: str) -> NamedTensors:
        yield from self.forward_cell.named_params(f"{prefix}.fwd")
        yield from self.backward_cell.named_params(f"{prefix}.bwd")
        yield f"{prefix}.merge_w", self.merge_w
        yield f"{prefix}.merge_b", self.merge_b


def init_biconvlstm(in_channels: int, hidden_channels: int,
                    rng: np.random.Generator) -> BiConvLSTMParams:
    return BiConvLSTMParams(
        forward_cell=init_convlstm_cell(in_channels, hidden_channels, rng),
        backward_cell=init_convlstm_cell(in_channels, hidden_channels, rng),
        merge_w=he_uniform(rng, (hidden_channels, 2 * hidden_channels, 1, 1)),
        merge_b=zero_bias(hidden_channels),
    )


def bidirectional_convlstm_fuse(seq: tuple[Tensor, Tensor], p: BiConvLSTMParams) -> Tensor:
    """Run a length-2 sequence through both directions and merge.

    The forward cell consumes (seq[0], seq[1]), the backward cell the
    reverse; both start from zero states. The two final hidden states are
    concatenated on channels and merged by a 1x1 conv.
    """
    if len(seq) != 2:
        raise UsageError(f"bidirectional fuse takes exactly two feature maps, got {len(seq)}")
    a, b = seq
    if a.shape != b.shape:
        raise ShapeError(f"bidirectional fuse inputs must match: {a.shape} vs {b.shape}")
    n, _, h, w = a.shape
    hidden = p.forward_cell.hidden_channels
    state = np.zeros((n, hidden, h, w))

    hf, cf = Tensor(state), Tensor(state)
    for step in (a, b):
        hf, cf = convlstm_step(step, hf, cf, p.forward_cell)
    hb, cb = Tensor(state), Tensor(state)
    for step in (b, a):
        hb, cb = convlstm_step(step, hb, cb, p.backward_cell)
    return conv2d(concat_channels(hf, hb), p.merge_w, p.merge_b)


# -- attention gate -----------------------------------------------------------


@dataclass
class AttentionGateParams:
    """Skip-connection gate with a bidirectional-ConvLSTM fusion stage.

    The skip feature x (fine resolution) and the gating signal g (one level
    coarser) are each projected to the intermediate width, fused, and reduced
    to a single-channel attention map that rescales x.
    """

    w_g: Tensor
    b_g: Tensor
    w_x: Tensor
    b_x: Tensor
    fuse: BiConvLSTMParams
    psi_w: Tensor
    psi_b: Tensor

    @property
    def x_channels(self) -> int:
        return self.w_x.shape[1]

    @property
    def g_channels(self) -> int:
        return self.w_g.shape[1]

    def named_params(self, prefix: str) -> NamedTensors:
        yield f"{prefix}.w_g", self.w_g
        yield f"{prefix}.b_g", self.b_g
        yield f"{prefix}.w_x", self.w_x
        yield f"{prefix}.b_x", self.b_x
        yield from self.fuse.named_params(f"{prefix}.fuse")
        yield f"{prefix}.psi_w", self.psi_w
        yield f"{prefix}.psi_b", self.psi_b


def init_attention_gate(x_channels: int, g_channels: int,
                        rng: np.random.Generator) -> AttentionGateParams:
    inter = max(1, g_channels // 2)
    return AttentionGateParams(
        w_g=he_uniform(rng, (inter, g_channels, 1, 1)),
        b_g=zero_bias(inter),
        w_x=he_uniform(rng, (inter, x_channels, 2, 2)),
        b_x=zero_bias(inter),
        fuse=init_biconvlstm(inter, inter, rng),
        psi_w=he_uniform(rng, (1, inter, 1, 1)),
        psi_b=zero_bias(1),
    )


def attention_gate(x: Tensor, g: Tensor, p: AttentionGateParams) -> Tensor:
    """Rescale skip feature x by an attention map computed against g.

    g is projected by a 1x1 conv, x by a 2x2 stride-2 conv so both live at
    the coarse resolution; a bidirectional ConvLSTM fuses the pair, and a
    1x1 conv + sigmoid yields the map, which is upsampled (nearest, 2x)
    back to x's resolution and multiplied in.
    """
    if x.shape[1] != p.x_channels or g.shape[1] != p.g_channels:
        raise ShapeError(f"attention_gate channels mismatch: x {x.shape}, g {g.shape}, "
                         f"gate expects x={p.x_channels} g={p.g_channels}")
    if x.shape[2] != 2 * g.shape[2] or x.shape[3] != 2 * g.shape[3]:
        raise ShapeError(f"attention_gate needs x at twice g's resolution, got x {x.shape} vs g {g.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"attention_gate skip feature must have even H, W, got {x.shape}")

    gs = conv2d(g, p.w_g, p.b_g)
    xs = conv2d(x, p.w_x, p.b_x, stride=2)
    fused = bidirectional_convlstm_fuse((gs, xs), p.fuse)
    att = sigmoid(conv2d(fused.relu(), p.psi_w, p.psi_b))
    return x * upsample_nearest2x(att)
