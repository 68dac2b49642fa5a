"""A 2D holistically-nested segmentation network with class-specific fusion.

Layout for ``S`` scales::

    image -> stem conv -> [block 1] -> head 1 ------------------> y^1
                              |
                           maxpool -> [block 2] -> head 2 -> up x2 -> y^2
                                          |
                                       maxpool -> ...          -> y^S

    fused = softmax(sum_s w[l, s] * y^s_l)

Each block is a residual pair of 3x3 convolutions with ELU. Normalisation
layers apply per-channel statistics frozen once at initialisation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import dice_losses
from ..label_metric import GroundMetric, metric_tree_brats, metric_zero_one, LabelSpace
from . import layers as L


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class NetworkConfig:
    scales: int = 3
    channels: int = 16
    classes: int = 5
    input_channels: int = 2
    seed: int = 0
    blocks: int = 1

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError("need at least one scale")
        if self.channels < 1 or self.blocks < 1:
            raise ValueError("channels and blocks must be >= 1")
        if self.classes < 2 or self.input_channels < 1:
            raise ValueError("need >= 2 classes and >= 1 input channel")


@dataclass(frozen=True)
class SupervisionWeights:
    lambda_fuse: float
    lambda_scales: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lambda_scales", tuple(float(x) for x in self.lambda_scales))
        if self.lambda_fuse < 0 or any(x < 0 for x in self.lambda_scales):
            raise ValueError("supervision weights must be nonnegative")

    @classmethod
    def default(cls, scales: int) -> "SupervisionWeights":
        c = 1.0 / (scales + 1)
        return cls(c, (c,) * scales)


@dataclass(frozen=True)
class LossKind:
    """A per-volume loss with its gradient with respect to probabilities."""

    name: str
    value: Callable
    grad: Callable

    @classmethod
    def mean_dice(cls) -> "LossKind":
        return cls(
            "mean_dice",
            lambda p, g: dice_losses.mean_dice_loss(p, g, validate=False),
            dice_losses.mean_dice_grad,
        )

    @classmethod
    def binary_dice(cls) -> "LossKind":
        return cls(
            "binary_dice",
            lambda p, g: 1.0 - dice_losses.soft_dice_binary(p, g, validate=False),
            dice_losses.soft_dice_binary_grad,
        )

    @classmethod
    def wasserstein(cls, metric: GroundMetric) -> "LossKind":
        return cls(
            f"wasserstein:{metric.name}",
            lambda p, g: dice_losses.wasserstein_dice_loss(p, g, metric, validate=False),
            lambda p, g: dice_losses.wasserstein_dice_grad(p, g, metric),
        )


def resolve_loss(spec: str | LossKind, classes: int = 5) -> LossKind:
    """``mean_dice``, ``binary_dice``, ``wasserstein:M_tree``, ``wasserstein:M_0-1``
    or ``wasserstein:<path to metric file>``."""
    if isinstance(spec, LossKind):
        return spec
    if spec == "mean_dice":
        return LossKind.mean_dice()
    if spec == "binary_dice":
        return LossKind.binary_dice()
    kind, _, arg = spec.partition(":")
    if kind != "wasserstein" or not arg:
        raise ValueError(f"unknown loss {spec!r}")
    if arg == "M_tree":
        metric = metric_tree_brats()
    elif arg == "M_0-1":
        metric = metric_zero_one(LabelSpace.anonymous(classes))
    else:
        from ..label_metric import read_metric_file

        metric = read_metric_file(arg)
    if len(metric) != classes:
        raise ValueError(f"metric {arg!r} has {len(metric)} labels, model has {classes} classes")
    return LossKind.wasserstein(metric)


class HolisticModel:
    """Parameters (trainable) and frozen normalisation buffers, in declaration order."""

    def __init__(self, config: NetworkConfig, params: dict, buffers: dict):
        self.config = config
        self.params = params
        self.buffers = buffers

    @classmethod
    def init(cls, config: NetworkConfig) -> "HolisticModel":
        rng = np.random.default_rng(config.seed)
        c, k = config.channels, config.classes
        params, buffers = {}, {}

        def conv3(name, cin, cout, gain=1.0):
            std = gain * np.sqrt(2.0 / (cin * 9))
            params[f"{name}.w"] = rng.normal(0.0, std, size=(cout, cin, 3, 3))
            params[f"{name}.b"] = np.zeros(cout)

        def norm(name, ch):
            buffers[f"{name}.mean"] = np.zeros(ch)
            buffers[f"{name}.std"] = np.ones(ch)

        conv3("stem", config.input_channels, c)
        norm("stem.norm", c)
        for s in range(1, config.scales + 1):
            for b in range(1, config.blocks + 1):
                pre = f"s{s}.b{b}"
                conv3(f"{pre}.conv1", c, c)
                norm(f"{pre}.norm1", c)
                conv3(f"{pre}.conv2", c, c, gain=0.5)
                norm(f"{pre}.norm2", c)
            params[f"s{s}.head.w"] = rng.normal(0.0, np.sqrt(1.0 / c), size=(k, c))
            params[f"s{s}.head.b"] = np.zeros(k)
        params["fusion.w"] = np.full((k, config.scales), 1.0 / config.scales)
        return cls(config, params, buffers)

    def copy(self) -> "HolisticModel":
        return HolisticModel(
            self.config,
            {n: a.copy() for n, a in self.params.items()},
            {n: a.copy() for n, a in self.buffers.items()},
        )

    def n_params(self) -> int:
        return sum(a.size for a in self.params.values())

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.params.values()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        off = 0
        for name, a in self.params.items():
            self.params[name] = np.asarray(flat[off : off + a.size], dtype=np.float64).reshape(a.shape).copy()
            off += a.size

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.params.values())

    def calibrate(self, images) -> None:
        """Freeze every normalisation layer to the channel statistics it sees
        on ``images`` (C, H, W each), layer by layer in forward order."""
        x = np.stack([_to_nhwc(im) for im in images])
        forward(self, x, calibrate=True)

    # tracing helpers for the single forward implementation below
    def _norm(self, name, x, calibrate):
        if calibrate:
            self.buffers[f"{name}.mean"] = x.mean(axis=(0, 1, 2))
            self.buffers[f"{name}.std"] = x.std(axis=(0, 1, 2)) + 1e-5
        return (x - self.buffers[f"{name}.mean"]) / self.buffers[f"{name}.std"]


def _to_nhwc(image) -> np.ndarray:
    im = np.asarray(image, dtype=np.float64)
    if im.ndim == 2:
        im = im[None]
    return im.transpose(1, 2, 0)


def forward(model: HolisticModel, x: np.ndarray, calibrate: bool = False):
    """Run the network on channel-last input ``x`` of shape (N, H, W, C_in).

    Returns ``(scale_logits, fused_probs, cache)``; scale logits are
    upsampled to full resolution, shape (S, N, H, W, L).
    """
    cfg, P = model.config, model.params
    n, h, w, _ = x.shape
    f = 2 ** (cfg.scales - 1)
    if h % f or w % f:
        raise ValueError(f"image size {h}x{w} is not divisible by {f}")
    cache = {}

    a, cache["stem.conv"] = L.conv3x3_forward(x, P["stem.w"], P["stem.b"])
    a = model._norm("stem.norm", a, calibrate)
    a, cache["stem.elu"] = L.elu_forward(a)

    scale_logits = []
    for s in range(1, cfg.scales + 1):
        if s > 1:
            a, cache[f"s{s}.pool"] = L.maxpool2_forward(a)
        for b in range(1, cfg.blocks + 1):
            pre = f"s{s}.b{b}"
            r, cache[f"{pre}.conv1"] = L.conv3x3_forward(a, P[f"{pre}.conv1.w"], P[f"{pre}.conv1.b"])
            r = model._norm(f"{pre}.norm1", r, calibrate)
            r, cache[f"{pre}.elu1"] = L.elu_forward(r)
            r, cache[f"{pre}.conv2"] = L.conv3x3_forward(r, P[f"{pre}.conv2.w"], P[f"{pre}.conv2.b"])
            r = model._norm(f"{pre}.norm2", r, calibrate)
            a, cache[f"{pre}.elu2"] = L.elu_forward(r + a)
        y, cache[f"s{s}.head"] = L.conv1x1_forward(a, P[f"s{s}.head.w"], P[f"s{s}.head.b"])
        scale_logits.append(L.upsample_forward(y, 2 ** (s - 1)))
    ys = np.stack(scale_logits)
    # class-specific fusion: weights (L, S) broadcast over the label axis
    z = np.einsum("snhwl,ls->nhwl", ys, P["fusion.w"])
    fused = L.softmax(z)
    cache["ys"] = ys
    cache["fused"] = fused
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(fused))):
        raise DivergenceError("non-finite activations in forward pass")
    return ys, fused, cache


def predict(model: HolisticModel, image) -> np.ndarray:
    """Fused label probabilities (H, W, L) for one image (C, H, W)."""
    _, fused, _ = forward(model, _to_nhwc(image)[None])
    return fused[0]


def total_loss(scale_logits, fused_probs, g, loss: LossKind, weights: SupervisionWeights) -> float:
    """Deep-supervision loss for one sample: fused term plus one term per scale.

    ``scale_logits`` is (S, H, W, L) and ``fused_probs`` is (H, W, L).
    """
    if len(weights.lambda_scales) != len(scale_logits):
        raise ValueError("one supervision weight per scale is required")
    terms = [weights.lambda_fuse * loss.value(fused_probs, g)]
    for lam, y in zip(weights.lambda_scales, scale_logits):
        terms.append(lam * loss.value(L.softmax(y), g))
    total = float(sum(terms))
    if not np.isfinite(total):
        raise DivergenceError("loss is not finite")
    return total


def loss_and_grad(model: HolisticModel, image, g, loss: LossKind, weights: SupervisionWeights):
    """Deep-supervision loss of one sample and exact gradients for every parameter."""
    cfg, P = model.config, model.params
    x = _to_nhwc(image)[None]
    ys, fused, cache = forward(model, x)
    g = np.asarray(g)
    value = total_loss(ys[:, 0], fused[0], g, loss, weights)

    grads = {}
    dz = L.softmax_backward(weights.lambda_fuse * loss.grad(fused[0], g)[None], fused)
    grads["fusion.w"] = np.einsum("nhwl,snhwl->ls", dz, ys)
    dys = dz[None] * P["fusion.w"].T[:, None, None, None, :]
    for s in range(cfg.scales):
        ps = L.softmax(ys[s])
        dys[s] += L.softmax_backward(weights.lambda_scales[s] * loss.grad(ps[0], g)[None], ps)

    da = None
    for s in range(cfg.scales, 0, -1):
        dy = L.upsample_backward(dys[s - 1], 2 ** (s - 1))
        dh, grads[f"s{s}.head.w"], grads[f"s{s}.head.b"] = L.conv1x1_backward(
            dy, P[f"s{s}.head.w"], cache[f"s{s}.head"]
        )
        da = dh if da is None else da + dh
        for b in range(cfg.blocks, 0, -1):
            pre = f"s{s}.b{b}"
            dsum = L.elu_backward(da, cache[f"{pre}.elu2"])
            dr = dsum / model.buffers[f"{pre}.norm2.std"]
            dr, grads[f"{pre}.conv2.w"], grads[f"{pre}.conv2.b"] = L.conv3x3_backward(
                dr, P[f"{pre}.conv2.w"], cache[f"{pre}.conv2"]
            )
            dr = L.elu_backward(dr, cache[f"{pre}.elu1"])
            dr = dr / model.buffers[f"{pre}.norm1.std"]
            dr, grads[f"{pre}.conv1.w"], grads[f"{pre}.conv1.b"] = L.conv3x3_backward(
                dr, P[f"{pre}.conv1.w"], cache[f"{pre}.conv1"]
            )
            da = dsum + dr
        if s > 1:
            da = L.maxpool2_backward(da, cache[f"s{s}.pool"])

    da = L.elu_backward(da, cache["stem.elu"]) / model.buffers["stem.norm.std"]
    _, grads["stem.w"], grads["stem.b"] = L.conv3x3_backward(da, P["stem.w"], cache["stem.conv"])
    return value, {name: grads[name] for name in P}
