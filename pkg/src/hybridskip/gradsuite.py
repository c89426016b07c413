"""Gradient-check suite covering every differentiable operation, the fixed
filters, each skip connection, and a reduced end-to-end model.

Each check returns the max relative error between tape gradients and central
differences at eps=1e-5; everything must come in under 1e-4.  Inputs are
seeded and kept away from kinks (relu, absolute, max pooling ties) so the
finite-difference reference is valid.
"""

import numpy as np

from . import filters as F
from . import skips as S
from . import tensor as T
from .errors import UsageError
from .tensor import Tensor
from .unet import UNetConfig, build_unet

EPS = 1e-5
TOLERANCE = 1e-4
MODULE_CHOICES = ("all", "unet", "skips", "filters")

_REDUCED_PLAN = (4, 8, 12, 16, 24)


def _away_from_kinks(rng, shape, margin=0.15):
    x = rng.normal(size=shape)
    x = np.where(np.abs(x) < margin, x + np.sign(x + 0.5) * margin, x)
    return x


def _ops_checks(rng):
    def t(shape):
        return Tensor(_away_from_kinks(rng, shape))

    shape = (2, 6, 6)
    yield "ops.conv2d_3x3", lambda: T.gradcheck(
        lambda x, w, b: T.mean_all(T.conv2d(x, w, b, padding=1)),
        [t(shape), t((3, 2, 3, 3)), t((3,))], EPS)
    yield "ops.conv2d_1x1_stride2", lambda: T.gradcheck(
        lambda x, w, b: T.mean_all(T.conv2d(x, w, b, stride=2)),
        [t(shape), t((4, 2, 1, 1)), t((4,))], EPS)
    tap_kernel = rng.normal(size=(3, 3))
    yield "ops.depthwise_conv2d", lambda: T.gradcheck(
        lambda x: T.mean_all(T.depthwise_conv2d(x, tap_kernel)),
        [t(shape)], EPS)
    yield "ops.upsample_bilinear", lambda: T.gradcheck(
        lambda x: T.mean_all(T.upsample_bilinear(x, 2)), [t((2, 4, 4))], EPS)
    yield "ops.concat_channels", lambda: T.gradcheck(
        lambda a, b: T.mean_all(T.mul(T.concat_channels(a, b),
                                      T.concat_channels(b, a))),
        [t(shape), t(shape)], EPS)
    spread_weights = Tensor(rng.normal(size=shape))
    yield "ops.expand_channels", lambda: T.gradcheck(
        lambda v: T.mean_all(T.mul(T.expand_channels(v, 2), spread_weights)),
        [t((1, 6, 6))], EPS)
    for kind in ("sigmoid", "relu", "elu", "softplus"):
        yield f"ops.{kind}", (lambda k: lambda: T.gradcheck(
            lambda x: T.mean_all(T.elementwise(x, k)), [t(shape)], EPS))(kind)
    yield "ops.absolute", lambda: T.gradcheck(
        lambda x: T.mean_all(T.absolute(x)), [t(shape)], EPS)
    yield "ops.add", lambda: T.gradcheck(
        lambda a, b: T.sum_all(T.mul(T.add(a, b), T.add(a, b))),
        [t(shape), t(shape)], EPS)
    yield "ops.sub", lambda: T.gradcheck(
        lambda a, b: T.sum_all(T.mul(T.sub(a, b), T.add(a, b))),
        [t(shape), t(shape)], EPS)
    yield "ops.mul_broadcast_vec", lambda: T.gradcheck(
        lambda x, v: T.mean_all(T.mul(x, v)), [t(shape), t((2, 1, 1))], EPS)
    yield "ops.affine", lambda: T.gradcheck(
        lambda x: T.mean_all(T.affine(x, 1.7, -0.3)), [t(shape)], EPS)
    yield "ops.sum_all", lambda: T.gradcheck(
        lambda x: T.sum_all(x), [t(shape)], EPS)
    yield "ops.mean_all", lambda: T.gradcheck(
        lambda x: T.mean_all(x), [t(shape)], EPS)
    yield "ops.diff_x", lambda: T.gradcheck(
        lambda x: T.mean_all(T.absolute(T.diff_x(x))), [t(shape)], EPS)
    yield "ops.diff_y", lambda: T.gradcheck(
        lambda x: T.mean_all(T.absolute(T.diff_y(x))), [t(shape)], EPS)
    yield "ops.pool_max2", lambda: T.gradcheck(
        lambda x: T.mean_all(T.pool(x, "max2")), [t((2, 4, 4))], EPS)
    yield "ops.pool_avg2", lambda: T.gradcheck(
        lambda x: T.mean_all(T.pool(x, "avg2")), [t((2, 4, 4))], EPS)
    channel_weights = Tensor(rng.normal(size=(2, 1, 1)))
    yield "ops.pool_global_avg", lambda: T.gradcheck(
        lambda x: T.sum_all(T.mul(T.pool(x, "global_avg"), channel_weights)),
        [t((2, 4, 4))], EPS)
    yield "ops.sigmoid_of_sum", lambda: T.gradcheck(
        lambda x: T.sigmoid(T.mean_all(x)), [t(shape)], EPS)


def _filter_checks(rng):
    def image(shape=(2, 8, 8)):
        return Tensor(rng.normal(size=shape))

    yield "filters.gaussian_low_k5", lambda: T.gradcheck(
        lambda x: T.mean_all(F.depthwise_filter(x, F.gaussian_kernel(5))),
        [image()], EPS)
    yield "filters.laplacian_high_k5", lambda: T.gradcheck(
        lambda x: T.mean_all(T.absolute(
            F.depthwise_filter(x, F.laplacian_kernel(5)))), [image()], EPS)
    yield "filters.residual_high_k3", lambda: T.gradcheck(
        lambda x: T.mean_all(T.absolute(
            F.depthwise_filter(x, F.residual_kernel(3)))), [image()], EPS)
    yield "filters.hybrid_image", lambda: T.gradcheck(
        lambda a, b: T.mean_all(F.make_hybrid_image(a, b, 5, 0.3)),
        [image((3, 8, 8)), image((3, 8, 8))], EPS)


def _skip_checks(rng):
    f, gate_channels = 4, 6

    def one(kind, **kwargs):
        def run():
            params = S.make_skip(kind, 2, f, np.random.default_rng(7),
                                 gate_channels=gate_channels,
                                 sqex_ratio=2, **kwargs)
            e = Tensor(rng.normal(size=(f, 8, 8)))
            d = Tensor(rng.normal(size=(f, 8, 8)))
            gate = Tensor(rng.normal(size=(gate_channels, 4, 4)))
            inputs = [e, d, gate] + [p for _, p in params.named_parameters()]

            def fn(e_, d_, gate_, *rest):
                return T.mean_all(S.apply_skip(params, e_, d_, gate=gate_))

            return T.gradcheck(fn, inputs, EPS, max_coords=4,
                               rng=np.random.default_rng(3))
        return run

    for kind in S.SKIP_KINDS:
        yield f"skips.{kind}", one(kind)
    yield "skips.hybrid_residual_highpass", one("hybrid", highpass="residual")
    yield "skips.hybrid_fixed_blend", one("hybrid", blend_mode="fixed:0.3,0.6")


def _unet_checks(rng):
    def one(kind, **kwargs):
        def run():
            cfg = UNetConfig(channel_plan=_REDUCED_PLAN, skip=kind,
                             sqex_ratio=2, **kwargs)
            model = build_unet(cfg, seed=5)
            image = Tensor(rng.normal(size=(3, 32, 32)) * 0.5 + 1.0)
            inputs = [image] + model.parameters()

            def fn(img, *params):
                return T.mean_all(model.forward(img))

            return T.gradcheck(fn, inputs, EPS, max_coords=2,
                               rng=np.random.default_rng(1))
        return run

    for kind in S.SKIP_KINDS:
        yield f"unet.{kind}", one(kind)
    yield "unet.hybrid_residual_highpass", one("hybrid", highpass="residual")


def run_suite(module="all", seed=123):
    """Run the selected checks; returns [(name, max relative error)]."""
    if module not in MODULE_CHOICES:
        raise UsageError(f"module must be one of {MODULE_CHOICES}, got {module!r}")
    rng = np.random.default_rng(seed)
    groups = {"filters": _filter_checks, "skips": _skip_checks,
              "unet": _unet_checks}
    if module == "all":
        checks = list(_ops_checks(rng))
        for name in ("filters", "skips", "unet"):
            checks.extend(groups[name](rng))
    else:
        checks = list(groups[module](rng))
    return [(name, run()) for name, run in checks]
