"""Skip-connection fusion functions.

Ten interchangeable ways to fuse encoder features E with upsampled,
channel-matched decoder features D at one UNet level, all mapping
(F,H,W) x (F,H,W) -> (F,H,W):

  vanilla    conv([E; D])
  hybrid     conv([eps*E + (1-eps)*f_h(D);  delta*D + (1-delta)*f_l(E)])
  blend      conv([eps*E + (1-eps)*D;       delta*D + (1-delta)*E])
  low        conv([f_l(E); D])
  high       conv([E; f_h(D)])
  conv       conv([stack_of_convs(E); D])
  residual   conv([residual_units(E); D])
  attention  conv([gate_mask(E, coarser_decoder) * E; D])
  sqex       conv([channel_excitation(E) * E; D])
  exfuse     global_conv(conv3x3(E) + D) + D      (additive, no fusion conv)

f_l / f_h are the fixed Gaussian / high-pass kernels from the filters
module; eps and delta are per-channel vectors, either learned through a
sigmoid or pinned to constants.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import filters
from . import tensor as T
from .errors import ConfigError, DimensionError, ParameterError
from .tensor import Tensor

SKIP_KINDS = ("vanilla", "conv", "residual", "attention", "sqex", "exfuse",
              "hybrid", "blend", "low", "high")

_ACTIVATIONS = {"elu": T.elu, "relu": T.relu, "identity": lambda x: x}

GLOBAL_CONV_SIZE = 9  # large-kernel context conv in the exfuse adaptation


def activate(x, kind):
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ParameterError(f"unknown activation {kind!r}") from None


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor
    activation: str = "identity"

    def apply(self, x, padding=None):
        if padding is None:
            padding = (self.weight.shape[2] // 2, self.weight.shape[3] // 2)
        y = T.conv2d(x, self.weight, self.bias, padding=padding)
        return activate(y, self.activation)


@dataclass
class SkipParams:
    kind: str
    level: int
    f: int
    activation: str = "elu"
    filter_size: int = 3
    highpass: str = "log"
    eps_hat: Optional[Tensor] = None
    delta_hat: Optional[Tensor] = None
    fixed_eps: Optional[float] = None
    fixed_delta: Optional[float] = None
    pre: tuple = ()                      # conv/residual stacks, exfuse chain
    we: Optional[ConvParams] = None      # attention
    wg: Optional[ConvParams] = None
    psi: Optional[ConvParams] = None
    reduce: Optional[ConvParams] = None  # sqex
    expand: Optional[ConvParams] = None
    fuse: Optional[ConvParams] = None    # H_i, absent for exfuse

    def named_parameters(self):
        """Deterministic (name, tensor) iteration over learnable tensors."""
        out = []
        if self.eps_hat is not None:
            out.append(("eps_hat", self.eps_hat))
        if self.delta_hat is not None:
            out.append(("delta_hat", self.delta_hat))
        for i, cp in enumerate(self.pre):
            out.append((f"pre{i}.weight", cp.weight))
            out.append((f"pre{i}.bias", cp.bias))
        for label in ("we", "wg", "psi", "reduce", "expand", "fuse"):
            cp = getattr(self, label)
            if cp is not None:
                out.append((f"{label}.weight", cp.weight))
                out.append((f"{label}.bias", cp.bias))
        return out


def _check_pair(e, d):
    if e.shape != d.shape:
        raise DimensionError(
            f"skip fusion needs matching shapes, got {tuple(e.shape)} vs {tuple(d.shape)}")


def _fuse_concat(parts, conv_params):
    x = parts[0]
    for p in parts[1:]:
        x = T.concat_channels(x, p)
    return conv_params.apply(x)


def _blend_vectors(params):
    """(eps, delta) as (F,) tensors; learned via sigmoid or fixed constants."""
    if params.eps_hat is not None and params.delta_hat is not None:
        return T.sigmoid(params.eps_hat), T.sigmoid(params.delta_hat)
    if params.fixed_eps is not None and params.fixed_delta is not None:
        return (Tensor(np.full(params.f, params.fixed_eps)),
                Tensor(np.full(params.f, params.fixed_delta)))
    raise ConfigError(
        f"skip kind {params.kind!r} needs blending parameters "
        "(learnable eps_hat/delta_hat or fixed values)")


def fuse_vanilla(e, d, conv_params):
    _check_pair(e, d)
    return _fuse_concat([e, d], conv_params)


def fuse_hybrid(e, d, params, k=None, conv_params=None):
    """Bidirectional frequency exchange, then learnable fusion.

    The decoder stream keeps its own content weighted by delta and takes
    the low frequencies of the encoder; the encoder stream keeps eps of
    itself and takes the high frequencies of the decoder.
    """
    _check_pair(e, d)
    k = params.filter_size if k is None else k
    conv_params = params.fuse if conv_params is None else conv_params
    eps, delta = _blend_vectors(params)
    low_e = filters.depthwise_filter(e, filters.gaussian_kernel(k))
    high_d = filters.depthwise_filter(d, filters.highpass_kernel(k, params.highpass))
    h_enc = T.add(T.mul(e, eps), T.mul(high_d, T.affine(eps, -1.0, 1.0)))
    h_dec = T.add(T.mul(d, delta), T.mul(low_e, T.affine(delta, -1.0, 1.0)))
    return _fuse_concat([h_enc, h_dec], conv_params)


def fuse_ablation(kind, e, d, params, k=None, conv_params=None):
    """The three reduced variants: blend (no filters), low, high."""
    _check_pair(e, d)
    k = params.filter_size if k is None else k
    conv_params = params.fuse if conv_params is None else conv_params
    if kind == "blend":
        eps, delta = _blend_vectors(params)
        h_enc = T.add(T.mul(e, eps), T.mul(d, T.affine(eps, -1.0, 1.0)))
        h_dec = T.add(T.mul(d, delta), T.mul(e, T.affine(delta, -1.0, 1.0)))
        return _fuse_concat([h_enc, h_dec], conv_params)
    if kind == "low":
        low_e = filters.depthwise_filter(e, filters.gaussian_kernel(k))
        return _fuse_concat([low_e, d], conv_params)
    if kind == "high":
        high_d = filters.depthwise_filter(d, filters.highpass_kernel(k, params.highpass))
        return _fuse_concat([e, high_d], conv_params)
    raise ConfigError(f"unknown ablation kind {kind!r}")


def _residual_unit(x, cp1, cp2, activation):
    y = cp2.apply(activate(cp1.apply(x), activation))
    return activate(T.add(x, y), activation)


def fuse_baseline(kind, e, d, gate=None, params=None, conv_params=None):
    _check_pair(e, d)
    conv_params = params.fuse if conv_params is None else conv_params
    act = params.activation
    if kind == "conv":
        x = e
        for cp in params.pre:
            x = activate(cp.apply(x), act)
        return _fuse_concat([x, d], conv_params)
    if kind == "residual":
        x = e
        for j in range(0, len(params.pre), 2):
            x = _residual_unit(x, params.pre[j], params.pre[j + 1], act)
        return _fuse_concat([x, d], conv_params)
    if kind == "attention":
        if gate is None:
            raise ConfigError("attention skip needs the coarser decoder gate")
        q = T.add(params.we.apply(e),
                  T.upsample_bilinear(params.wg.apply(gate), 2))
        a = T.sigmoid(params.psi.apply(activate(q, act)))
        gated = T.mul(e, T.expand_channels(a, e.shape[0]))
        return _fuse_concat([gated, d], conv_params)
    if kind == "sqex":
        z = T.pool(e, "global_avg")
        s = T.sigmoid(params.expand.apply(activate(params.reduce.apply(z), act)))
        return _fuse_concat([T.mul(e, s), d], conv_params)
    if kind == "exfuse":
        t = T.add(params.pre[0].apply(e), d)
        left = params.pre[2].apply(params.pre[1].apply(t))
        right = params.pre[4].apply(params.pre[3].apply(t))
        return T.add(T.add(left, right), d)
    raise ConfigError(f"unknown baseline kind {kind!r}")


def apply_skip(params, e, d, gate=None):
    kind = params.kind
    if kind == "vanilla":
        return fuse_vanilla(e, d, params.fuse)
    if kind == "hybrid":
        return fuse_hybrid(e, d, params)
    if kind in ("blend", "low", "high"):
        return fuse_ablation(kind, e, d, params)
    return fuse_baseline(kind, e, d, gate=gate, params=params)


# ---------------------------------------------------------------------------
# construction

def he_conv(rng, f_out, f_in, kh, kw, activation="identity"):
    """3x3/1x1/... conv parameters with He fan-in init and zero bias."""
    std = float(np.sqrt(2.0 / (f_in * kh * kw)))
    weight = Tensor(rng.normal(0.0, std, (f_out, f_in, kh, kw)), requires_grad=True)
    bias = Tensor(np.zeros(f_out), requires_grad=True)
    return ConvParams(weight, bias, activation)


def default_residual_units(level):
    # more refinement where encoder features are rawest
    return 6 - level


def parse_blend_mode(mode):
    """'learnable' or 'fixed:<eps>,<delta>' (or 'fixed:<x>' for eps=delta=x)."""
    if mode == "learnable":
        return None
    if isinstance(mode, str) and mode.startswith("fixed:"):
        body = mode[len("fixed:"):]
        parts = [p.strip() for p in body.split(",") if p.strip()]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ConfigError(f"bad fixed blending values {body!r}") from None
        if len(vals) == 1:
            vals = [vals[0], vals[0]]
        if len(vals) != 2 or not all(0.0 <= v <= 1.0 for v in vals):
            raise ConfigError(
                f"fixed blending needs one or two values in [0,1], got {body!r}")
        return (vals[0], vals[1])
    raise ConfigError(f"blend_mode must be 'learnable' or 'fixed:...', got {mode!r}")


def make_skip(kind, level, f, rng, *, gate_channels=None, activation="elu",
              filter_size=3, highpass="log", conv_k=2, residual_units=None,
              sqex_ratio=16, blend_mode="learnable"):
    """Create the parameter bundle for one skip connection level.

    ``rng`` draws are consumed in a fixed order, so a given generator state
    yields a reproducible bundle.
    """
    if kind not in SKIP_KINDS:
        raise ConfigError(f"unknown skip kind {kind!r}")
    if not 1 <= level <= 5:
        raise ParameterError(f"level must be in [1,5], got {level}")
    p = SkipParams(kind=kind, level=level, f=f, activation=activation,
                   filter_size=filter_size, highpass=highpass)
    if kind in ("hybrid", "blend"):
        fixed = parse_blend_mode(blend_mode)
        if fixed is None:
            p.eps_hat = Tensor(rng.standard_normal(f), requires_grad=True)
            p.delta_hat = Tensor(rng.standard_normal(f), requires_grad=True)
        else:
            p.fixed_eps, p.fixed_delta = fixed
    if kind == "conv":
        if conv_k < 1:
            raise ConfigError(f"conv skip needs k >= 1, got {conv_k}")
        p.pre = tuple(he_conv(rng, f, f, 3, 3) for _ in range(conv_k))
    if kind == "residual":
        units = default_residual_units(level) if residual_units is None else residual_units
        if units < 1:
            raise ConfigError(f"residual skip needs at least one unit, got {units}")
        p.pre = tuple(he_conv(rng, f, f, 3, 3) for _ in range(2 * units))
    if kind == "attention":
        if gate_channels is None:
            raise ConfigError("attention skip needs gate_channels")
        inner = f // 2
        p.we = he_conv(rng, inner, f, 1, 1)
        p.wg = he_conv(rng, inner, gate_channels, 1, 1)
        p.psi = he_conv(rng, 1, inner, 1, 1)
    if kind == "sqex":
        if sqex_ratio < 1 or f % sqex_ratio != 0:
            raise ConfigError(
                f"sqex ratio {sqex_ratio} must be >= 1 and divide F={f}")
        hidden = f // sqex_ratio
        p.reduce = he_conv(rng, hidden, f, 1, 1)
        p.expand = he_conv(rng, f, hidden, 1, 1)
    if kind == "exfuse":
        g = GLOBAL_CONV_SIZE
        p.pre = (he_conv(rng, f, f, 3, 3),
                 he_conv(rng, f, f, g, 1), he_conv(rng, f, f, 1, g),
                 he_conv(rng, f, f, 1, g), he_conv(rng, f, f, g, 1))
    if kind != "exfuse":
        p.fuse = he_conv(rng, f, 2 * f, 3, 3, activation=activation)
    return p


def skip_extra_parameters(kind, channel_plan, *, conv_k=2, residual_units=None,
                          sqex_ratio=16, blend_mode="learnable"):
    """Closed-form parameter overhead of ``kind`` relative to vanilla.

    Matches the instantiated difference exactly: everything a kind adds,
    minus anything of vanilla's it drops (exfuse drops the fusion conv).
    """
    plan = list(channel_plan)
    if kind in ("vanilla", "low", "high"):
        return 0
    if kind in ("hybrid", "blend"):
        return 0 if parse_blend_mode(blend_mode) is not None else 2 * sum(plan)
    if kind == "conv":
        return sum(conv_k * (9 * f * f + f) for f in plan)
    if kind == "residual":
        total = 0
        for level, f in enumerate(plan, start=1):
            units = default_residual_units(level) if residual_units is None else residual_units
            total += units * 2 * (9 * f * f + f)
        return total
    if kind == "attention":
        total = 0
        for i, f in enumerate(plan):
            gate = plan[i + 1] if i + 1 < len(plan) else plan[-1]
            inner = f // 2
            total += (f * inner + inner) + (gate * inner + inner) + (inner + 1)
        return total
    if kind == "sqex":
        return sum(2 * f * (f // sqex_ratio) + f // sqex_ratio + f for f in plan)
    if kind == "exfuse":
        g = GLOBAL_CONV_SIZE
        added = sum((9 * f * f + f) + 4 * (g * f * f + f) for f in plan)
        dropped = sum(9 * (2 * f) * f + f for f in plan)
        return added - dropped
    raise ConfigError(f"unknown skip kind {kind!r}")
