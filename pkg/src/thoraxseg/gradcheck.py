"""Central-difference gradient verification for every differentiable op.

A check owns a zero-argument closure returning a scalar Tensor plus the leaf
tensors it differentiates. Analytic gradients come from one backward pass;
numeric gradients perturb each element by +/-step with recording disabled.
The error metric is elementwise |a - n| / max(1, |a|, |n|).

`STANDARD_CHECKS` registers one named check per primitive and composite so
the CLI can run the whole table or a selection.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import (Tensor, batch_norm, concat_channels, conv2d,
                       max_pool2d, no_grad, softmax_channels, take_channel,
                       upsample_nearest2x)
from .errors import UsageError

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
MAX_CHECK_ELEMENTS = 10_000


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tol: float
    elements: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def numeric_gradients(f: Callable[[], Tensor], tensors: list[Tensor],
                      step: float = DEFAULT_STEP) -> list[np.ndarray]:
    grads = []
    with no_grad():
        for t in tensors:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = float(f().data.reshape(()))
                flat[i] = orig - step
                lo = float(f().data.reshape(()))
                flat[i] = orig
                gflat[i] = (hi - lo) / (2.0 * step)
            grads.append(g)
    return grads


def check_gradients(name: str, f: Callable[[], Tensor], tensors: list[Tensor],
                    step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL) -> CheckResult:
    total = sum(t.size for t in tensors)
    if total > MAX_CHECK_ELEMENTS:
        raise UsageError(f"gradient check {name!r} has {total} elements; finite differencing caps at {MAX_CHECK_ELEMENTS}")
    for t in tensors:
        if not t.requires_grad:
            raise UsageError(f"gradient check {name!r} given a tensor with requires_grad=False")
        t.zero_grad()
    start = time.monotonic()
    out = f()
    if out.size != 1:
        raise UsageError(f"gradient check {name!r} must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numeric_gradients(f, tensors, step=step)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        rel = np.abs(a - n) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return CheckResult(name=name, max_rel_err=worst, tol=tol, elements=total,
                       seconds=time.monotonic() - start)


# -- standard check table ----------------------------------------------------

STANDARD_CHECKS: dict[str, Callable[[int], CheckResult]] = {}


def _standard(name: str):
    def register(builder):
        STANDARD_CHECKS[name] = builder
        return builder
    return register


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _const(rng, shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape))


@_standard("arith")
def _check_arith(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 3, 4))
    y = _rand(rng, (1, 3, 1))
    def f():
        z = x * y + x / 2.0 - (y + 1.5) ** 2.0 + 3.0
        w = z / (y * y + 0.5)
        return (w * z).mean() + (x - y).sum()
    return check_gradients("arith", f, [x, y])


@_standard("activations")
def _check_activations(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (3, 5))
    # keep samples off the relu kink so finite differences stay clean
    r = Tensor(np.where(x.data >= 0, x.data + 0.1, x.data - 0.1), requires_grad=True)
    c = _const(rng, (3, 5))
    def f():
        s = x.sigmoid().tanh() + (x.exp() + 1.0).log()
        return (s * c).sum() + (r.relu() * c).sum()
    return check_gradients("activations", f, [x, r])


@_standard("softmax")
def _check_softmax(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 3, 4, 4), -2.0, 2.0)
    c = _const(rng, (2, 3, 4, 4))
    def f():
        return (softmax_channels(x) * c).sum()
    return check_gradients("softmax", f, [x])


@_standard("conv2d")
def _check_conv2d(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 3, 6, 7))
    k = _rand(rng, (4, 3, 3, 3))
    b = _rand(rng, (4,))
    c = _const(rng, (2, 4, 6, 7))
    def f():
        return (conv2d(x, k, b, stride=1, padding=1) * c).sum()
    return check_gradients("conv2d", f, [x, k, b])


@_standard("conv2d_strided")
def _check_conv2d_strided(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 3, 8, 8))
    k = _rand(rng, (4, 3, 2, 2))
    b = _rand(rng, (4,))
    c = _const(rng, (2, 4, 4, 4))
    def f():
        return (conv2d(x, k, b, stride=2, padding=0) * c).sum()
    return check_gradients("conv2d_strided", f, [x, k, b])


@_standard("max_pool2d")
def _check_max_pool2d(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    base = rng.uniform(-1.0, 1.0, size=(2, 2, 4, 6))
    # unique offsets keep window maxima isolated; pooling is nondifferentiable
    # exactly at ties, so the check stays away from them
    base += np.arange(base.size).reshape(base.shape) * 1e-3
    x = Tensor(base, requires_grad=True)
    c = _const(rng, (2, 2, 2, 3))
    def f():
        return (max_pool2d(x, 2, 2) * c).sum()
    return check_gradients("max_pool2d", f, [x])


@_standard("upsample_concat")
def _check_upsample_concat(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 2, 3, 3))
    y = _rand(rng, (2, 3, 6, 6))
    c = _const(rng, (2, 1, 6, 6))
    def f():
        joined = concat_channels(upsample_nearest2x(x), y)
        return (take_channel(joined, 3) * c).sum()
    return check_gradients("upsample_concat", f, [x, y])


@_standard("batch_norm_train")
def _check_batch_norm_train(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (3, 4, 5, 5), -2.0, 2.0)
    scale = _rand(rng, (4,), 0.5, 1.5)
    shift = _rand(rng, (4,))
    c = _const(rng, (3, 4, 5, 5))
    rm, rv = np.zeros(4), np.ones(4)
    def f():
        return (batch_norm(x, scale, shift, rm, rv, training=True) * c).sum()
    return check_gradients("batch_norm_train", f, [x, scale, shift])


@_standard("batch_norm_eval")
def _check_batch_norm_eval(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 4, 4, 4), -2.0, 2.0)
    scale = _rand(rng, (4,), 0.5, 1.5)
    shift = _rand(rng, (4,))
    c = _const(rng, (2, 4, 4, 4))
    rm = rng.uniform(-0.5, 0.5, size=4)
    rv = rng.uniform(0.5, 2.0, size=4)
    def f():
        return (batch_norm(x, scale, shift, rm, rv, training=False) * c).sum()
    return check_gradients("batch_norm_eval", f, [x, scale, shift])


@_standard("convlstm_step")
def _check_convlstm_step(seed: int) -> CheckResult:
    from .blocks import convlstm_step, init_convlstm_cell
    rng = np.random.default_rng(seed)
    params = init_convlstm_cell(2, 2, rng)
    x = _rand(rng, (1, 2, 4, 4))
    h = _rand(rng, (1, 2, 4, 4))
    cell = _rand(rng, (1, 2, 4, 4))
    ch = _const(rng, (1, 2, 4, 4))
    cc = _const(rng, (1, 2, 4, 4))
    leaves = [x, h, cell] + [t for _, t in params.named_params("cell")]
    def f():
        h1, c1 = convlstm_step(x, h, cell, params)
        return (h1 * ch).sum() + (c1 * cc).sum()
    return check_gradients("convlstm_step", f, leaves)


@_standard("biconvlstm_fuse")
def _check_biconvlstm_fuse(seed: int) -> CheckResult:
    from .blocks import bidirectional_convlstm_fuse, init_biconvlstm
    rng = np.random.default_rng(seed)
    params = init_biconvlstm(2, 2, rng)
    a = _rand(rng, (1, 2, 4, 4))
    b = _rand(rng, (1, 2, 4, 4))
    c = _const(rng, (1, 2, 4, 4))
    leaves = [a, b] + [t for _, t in params.named_params("fuse")]
    def f():
        return (bidirectional_convlstm_fuse((a, b), params) * c).sum()
    return check_gradients("biconvlstm_fuse", f, leaves)


@_standard("attention_gate")
def _check_attention_gate(seed: int) -> CheckResult:
    from .blocks import attention_gate, init_attention_gate
    rng = np.random.default_rng(seed)
    params = init_attention_gate(x_channels=4, g_channels=8, rng=rng)
    x = _rand(rng, (1, 4, 8, 8))
    g = _rand(rng, (1, 8, 4, 4))
    c = _const(rng, (1, 4, 8, 8))
    leaves = [x, g] + [t for _, t in params.named_params("gate")]
    def f():
        return (attention_gate(x, g, params) * c).sum()
    return check_gradients("attention_gate", f, leaves)


def _loss_fixture(seed: int):
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 3, 6, 6), -2.0, 2.0)
    labels = rng.integers(0, 3, size=(2, 6, 6))
    g = np.zeros((2, 3, 6, 6))
    for cls in range(3):
        g[:, cls][labels == cls] = 1.0
    return x, Tensor(g)


@_standard("dice_loss")
def _check_dice_loss(seed: int) -> CheckResult:
    from .losses import LossConfig, dice_loss
    x, g = _loss_fixture(seed)
    cfg = LossConfig()
    def f():
        return dice_loss(softmax_channels(x), g, cfg)
    return check_gradients("dice_loss", f, [x])


@_standard("tversky_loss")
def _check_tversky_loss(seed: int) -> CheckResult:
    from .losses import LossConfig, tversky_loss
    x, g = _loss_fixture(seed)
    cfg = LossConfig()
    def f():
        return tversky_loss(softmax_channels(x), g, cfg)
    return check_gradients("tversky_loss", f, [x])


@_standard("focal_tversky_loss")
def _check_focal_tversky_loss(seed: int) -> CheckResult:
    from .losses import LossConfig, focal_tversky_loss
    x, g = _loss_fixture(seed)
    cfg = LossConfig()
    def f():
        return focal_tversky_loss(softmax_channels(x), g, cfg)
    return check_gradients("focal_tversky_loss", f, [x])


@_standard("model_ftl")
def _check_model_ftl(seed: int) -> CheckResult:
    from .losses import LossConfig, focal_tversky_loss
    from .model import ModelConfig, forward, init_model, named_params
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(depth=2, base_channels=2, num_classes=3)
    params = init_model(cfg, seed=seed)
    x = _rand(rng, (1, 1, 16, 16))
    labels = rng.integers(0, 3, size=(1, 16, 16))
    g = np.zeros((1, 3, 16, 16))
    for cls in range(3):
        g[:, cls][labels == cls] = 1.0
    gt = Tensor(g)
    loss_cfg = LossConfig()
    leaves = [x] + [t for _, t in named_params(params)]
    def f():
        return focal_tversky_loss(forward(params, x, training=True), gt, loss_cfg)
    return check_gradients("model_ftl", f, leaves)


def run_standard_checks(names: list[str] | None = None, seed: int = 0) -> list[CheckResult]:
    if names:
        unknown = [n for n in names if n not in STANDARD_CHECKS]
        if unknown:
            known = ", ".join(STANDARD_CHECKS)
            raise UsageError(f"unknown gradient check(s) {', '.join(unknown)}; known: {known}")
        selected = names
    else:
        selected = list(STANDARD_CHECKS)
    return [STANDARD_CHECKS[name](seed) for name in selected]
