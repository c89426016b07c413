"""Fixed low-pass and high-pass kernels and hybrid-image composition.

A hybrid image blends the low spatial frequencies of one image with the
high spatial frequencies of another.  The same two fixed kernels are later
applied to feature maps inside the skip connections, so their construction
lives here in one place.  Coefficients never receive gradients.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .tensor import Tensor

HIGHPASS_MODES = ("log", "residual")


@dataclass(frozen=True)
class FilterKernel:
    size: int
    coefficients: Tensor  # (K, K), fixed, never differentiated
    kind: str


def _sigma_for(k):
    # effective support matched to the kernel size
    return 0.3 * ((k - 1) / 2 - 1) + 0.8


def _check_size(k):
    if not isinstance(k, int) or k < 3 or k % 2 == 0:
        raise ParameterError(f"kernel size must be an odd int >= 3, got {k!r}")


def _centered_grid(k):
    r = np.arange(k) - (k - 1) / 2
    yy, xx = np.meshgrid(r, r, indexing="ij")
    return xx, yy


def gaussian_kernel(k):
    """Isotropic Gaussian on the centered integer grid, normalized to sum 1.

    sigma = 0.3*((K-1)/2 - 1) + 0.8.
    """
    _check_size(k)
    sigma = _sigma_for(k)
    xx, yy = _centered_grid(k)
    g = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return FilterKernel(k, Tensor(g), "gaussian_low")


def laplacian_kernel(k):
    """Laplacian-of-Gaussian high-pass, zero-sum, center coefficient +1.

    Raw LoG values ((x^2+y^2-2*sigma^2)/sigma^4)*exp(-(x^2+y^2)/(2*sigma^2))
    are shifted by their mean so the coefficients sum exactly to zero, then
    divided by the (negative) center value, which flips the profile into
    the usual sharpening shape: positive center, negative surround.
    """
    _check_size(k)
    sigma = _sigma_for(k)
    xx, yy = _centered_grid(k)
    r2 = xx ** 2 + yy ** 2
    log = ((r2 - 2.0 * sigma ** 2) / sigma ** 4) * np.exp(-r2 / (2.0 * sigma ** 2))
    log -= log.mean()
    center = log[k // 2, k // 2]
    log /= center
    return FilterKernel(k, Tensor(log), "laplacian_high")


def residual_kernel(k):
    """High-pass as identity minus Gaussian: f_h(x) = x - f_l(x)."""
    _check_size(k)
    coeff = -gaussian_kernel(k).coefficients.data
    coeff[k // 2, k // 2] += 1.0
    return FilterKernel(k, Tensor(coeff), "residual_high")


def highpass_kernel(k, mode="log"):
    if mode == "log":
        return laplacian_kernel(k)
    if mode == "residual":
        return residual_kernel(k)
    raise ParameterError(f"highpass mode must be one of {HIGHPASS_MODES}, got {mode!r}")


def depthwise_filter(features, kernel):
    """Convolve every channel with the same fixed kernel (zero 'same' padding).

    Differentiable w.r.t. features only.
    """
    return T.depthwise_conv2d(features, kernel.coefficients.data)


def make_hybrid_image(a, b, k, alpha, highpass="log"):
    """alpha * f_l(A) + (1-alpha) * f_h(B); alpha=0.5 is the classic hybrid."""
    if not (0.0 <= alpha <= 1.0):
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    low = depthwise_filter(a, gaussian_kernel(k))
    high = depthwise_filter(b, highpass_kernel(k, highpass))
    return T.add(T.affine(low, alpha), T.affine(high, 1.0 - alpha))


def hybrid_sweep(a, b, k, alphas, highpass="log"):
    """One hybrid frame per blending factor."""
    alphas = list(alphas)
    if not alphas:
        raise ParameterError("alphas must be non-empty")
    return [make_hybrid_image(a, b, k, alpha, highpass) for alpha in alphas]
