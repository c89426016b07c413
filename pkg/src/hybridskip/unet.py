"""Five-level encoder-decoder UNet with one pluggable skip connection per level.

Encoder stages run (3x3 conv, act, 3x3 conv, act) and downsample between
stages with 2x2 max pooling; a conv pair sits at the bottleneck.  Each
decoder stage upsamples bilinearly, projects to the level's channel count
with a 1x1 conv, fuses with the matching encoder features through the
configured skip connection, and refines with a 3x3 conv.  A 1x1 head maps
to one channel; softplus keeps predicted depth positive.

Shared (encoder/decoder/head) parameters are drawn from one seeded stream
and skip parameters from a second, so two models that differ only in skip
kind share bit-identical backbone weights for the same seed.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import skips as S
from . import tensor as T
from .errors import DimensionError, ParameterError, UsageError
from .skips import ConvParams
from .tensor import Tensor

ACTIVATION_CHOICES = ("elu", "relu")
OUTPUT_TRANSFORMS = ("softplus", "identity")


@dataclass(frozen=True)
class UNetConfig:
    channel_plan: tuple = (32, 64, 128, 256, 512)
    input_channels: int = 3
    skip: str = "vanilla"
    activation: str = "elu"
    output_transform: str = "softplus"
    filter_size: int = 3
    highpass: str = "log"
    conv_k: int = 2
    residual_units: Optional[int] = None
    sqex_ratio: int = 16
    blend_mode: str = "learnable"

    def __post_init__(self):
        plan = tuple(int(f) for f in self.channel_plan)
        object.__setattr__(self, "channel_plan", plan)
        if len(plan) != 5 or any(b <= a for a, b in zip(plan, plan[1:])):
            raise ParameterError(
                f"channel_plan must be 5 strictly increasing widths, got {plan}")
        if self.skip not in S.SKIP_KINDS:
            raise ParameterError(f"unknown skip kind {self.skip!r}")
        if self.activation not in ACTIVATION_CHOICES:
            raise ParameterError(f"activation must be one of {ACTIVATION_CHOICES}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ParameterError(
                f"output_transform must be one of {OUTPUT_TRANSFORMS}")


@dataclass
class _Stage:
    conv1: ConvParams
    conv2: ConvParams


@dataclass
class _DecoderStage:
    proj: ConvParams
    refine: ConvParams


@dataclass
class UNet:
    cfg: UNetConfig
    encoder: list
    bottleneck: _Stage
    decoder: dict            # level -> _DecoderStage
    skips: dict              # level -> SkipParams
    head: ConvParams

    def named_parameters(self):
        """All learnable tensors, deterministically ordered, names unique.

        Backbone names come first and are independent of the skip kind.
        """
        out = []
        for i, stage in enumerate(self.encoder, start=1):
            out.append((f"enc{i}.conv1.weight", stage.conv1.weight))
            out.append((f"enc{i}.conv1.bias", stage.conv1.bias))
            out.append((f"enc{i}.conv2.weight", stage.conv2.weight))
            out.append((f"enc{i}.conv2.bias", stage.conv2.bias))
        out.append(("bottleneck.conv1.weight", self.bottleneck.conv1.weight))
        out.append(("bottleneck.conv1.bias", self.bottleneck.conv1.bias))
        out.append(("bottleneck.conv2.weight", self.bottleneck.conv2.weight))
        out.append(("bottleneck.conv2.bias", self.bottleneck.conv2.bias))
        for level in range(5, 0, -1):
            stage = self.decoder[level]
            out.append((f"dec{level}.proj.weight", stage.proj.weight))
            out.append((f"dec{level}.proj.bias", stage.proj.bias))
            out.append((f"dec{level}.refine.weight", stage.refine.weight))
            out.append((f"dec{level}.refine.bias", stage.refine.bias))
        out.append(("head.weight", self.head.weight))
        out.append(("head.bias", self.head.bias))
        for level in range(1, 6):
            for name, t in self.skips[level].named_parameters():
                out.append((f"skip{level}.{name}", t))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def forward(self, image):
        return forward(self, image)


def _gate_channels(plan, level):
    # the pre-upsample decoder feature: next level's width, or the bottleneck's
    return plan[level] if level < 5 else plan[-1]


def build_unet(cfg, seed):
    """Deterministically initialized model; (cfg, seed) fixes every weight bit."""
    plan = cfg.channel_plan
    shared_seq, skip_seq = np.random.SeedSequence(seed).spawn(2)
    shared = np.random.default_rng(shared_seq)
    skip_rng = np.random.default_rng(skip_seq)

    encoder = []
    cin = cfg.input_channels
    for f in plan:
        encoder.append(_Stage(S.he_conv(shared, f, cin, 3, 3),
                              S.he_conv(shared, f, f, 3, 3)))
        cin = f
    bottleneck = _Stage(S.he_conv(shared, plan[-1], plan[-1], 3, 3),
                        S.he_conv(shared, plan[-1], plan[-1], 3, 3))
    decoder = {}
    for level in range(5, 0, -1):
        f = plan[level - 1]
        prev = plan[-1] if level == 5 else plan[level]
        decoder[level] = _DecoderStage(S.he_conv(shared, f, prev, 1, 1),
                                       S.he_conv(shared, f, f, 3, 3))
    head = S.he_conv(shared, 1, plan[0], 1, 1)

    skip_map = {}
    for level in range(1, 6):
        skip_map[level] = S.make_skip(
            cfg.skip, level, plan[level - 1], skip_rng,
            gate_channels=_gate_channels(plan, level),
            activation=cfg.activation, filter_size=cfg.filter_size,
            highpass=cfg.highpass, conv_k=cfg.conv_k,
            residual_units=cfg.residual_units, sqex_ratio=cfg.sqex_ratio,
            blend_mode=cfg.blend_mode)

    return UNet(cfg=cfg, encoder=encoder, bottleneck=bottleneck,
                decoder=decoder, skips=skip_map, head=head)


def forward(model, image):
    """(C,H,W) image -> (1,H,W) prediction; H and W must be multiples of 32."""
    cfg = model.cfg
    if image.data.ndim != 3 or image.shape[0] != cfg.input_channels:
        raise DimensionError(
            f"expected ({cfg.input_channels},H,W) input, got {tuple(image.shape)}")
    h, w = image.shape[1], image.shape[2]
    if h % 32 or w % 32:
        raise DimensionError(
            f"input spatial dims must be divisible by 32, got {h}x{w}")
    act = cfg.activation

    feats = []
    x = image
    for stage in model.encoder:
        x = S.activate(stage.conv1.apply(x), act)
        x = S.activate(stage.conv2.apply(x), act)
        feats.append(x)
        x = T.pool(x, "max2")
    x = S.activate(model.bottleneck.conv1.apply(x), act)
    x = S.activate(model.bottleneck.conv2.apply(x), act)

    dec = x
    for level in range(5, 0, -1):
        gate = dec
        up = T.upsample_bilinear(dec, 2)
        d = model.decoder[level].proj.apply(up)
        fused = S.apply_skip(model.skips[level], feats[level - 1], d, gate=gate)
        dec = S.activate(model.decoder[level].refine.apply(fused), act)

    out = model.head.apply(dec)
    if cfg.output_transform == "softplus":
        out = T.softplus(out)
    return out


def parameter_count(model):
    return sum(t.data.size for _, t in model.named_parameters())


def inspect_blending_factors(model):
    """Per-level blending vectors eps, delta in (0,1) with their means."""
    if model.cfg.skip not in ("hybrid", "blend"):
        raise UsageError(
            f"blending factors exist only for hybrid/blend skips, "
            f"model uses {model.cfg.skip!r}")
    report = []
    for level in range(1, 6):
        p = model.skips[level]
        if p.eps_hat is not None:
            eps = 1.0 / (1.0 + np.exp(-p.eps_hat.data))
            delta = 1.0 / (1.0 + np.exp(-p.delta_hat.data))
        else:
            eps = np.full(p.f, p.fixed_eps)
            delta = np.full(p.f, p.fixed_delta)
        report.append({"level": level, "eps": eps, "delta": delta,
                       "eps_mean": float(eps.mean()),
                       "delta_mean": float(delta.mean())})
    return report
