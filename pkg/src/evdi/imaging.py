"""Image containers, transfer curves, Bayer ops, and quality metrics.

Images are float64 arrays with an explicit domain tag: "linear" for scene
radiance (the only domain in which averaging, integrating, or dividing
intensities is meaningful) and "gamma" for display-encoded values as stored
in PNG files. Functions that assume linear input check the tag and refuse
gamma-encoded buffers instead of silently producing nonsense.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
from scipy.signal import convolve2d

from .events import BayerPattern

LINEAR = "linear"
GAMMA = "gamma"

# intensities are clamped to >= this floor before any log or division
DEFAULT_LOG_FLOOR = 1e-3

BT601_WEIGHTS = np.array([0.299, 0.587, 0.114])

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class ImageBuffer:
    """A (height, width, channels) float64 image with a domain tag.

    Invariants: channels is 1 or 3, every value is finite and nonnegative
    (values above 1.0 are permitted; they only get clipped when a file
    format requires it). The pixel data is read-only.
    """

    data: np.ndarray
    domain: str = LINEAR

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(
                f"image must be (h, w, c) with c in {{1, 3}}, "
                f"got shape {np.asarray(self.data).shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"empty image shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains NaN or infinity")
        if np.any(arr < 0):
            raise ValueError("image contains negative values")
        if self.domain not in (LINEAR, GAMMA):
            raise ValueError(f"unknown domain {self.domain!r}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self) -> np.ndarray:
        """The (h, w) array of a single-channel image."""
        if self.channels != 1:
            raise ValueError("plane() requires a single-channel image")
        return self.data[:, :, 0]


def _require_domain(img: ImageBuffer, domain: str, op: str) -> None:
    if img.domain != domain:
        raise ValueError(f"{op} expects a {domain}-domain image, "
                         f"got {img.domain}")


def _require_comparable(a: ImageBuffer, b: ImageBuffer, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs "
                         f"{b.data.shape}")
    if a.domain != b.domain:
        raise ValueError(f"{op}: domain mismatch {a.domain} vs {b.domain}")


@dataclass(frozen=True)
class GammaCurve:
    """Invertible transfer curve between linear and display-encoded values.

    Two modes: a pure power law with exponent ``gamma`` (decode raises the
    encoded value to ``gamma``), or the piecewise sRGB curve with its linear
    toe segment. encode and decode are exact inverses of each other up to
    floating point.
    """

    mode: str = "power"
    gamma: float = 2.2

    def __post_init__(self):
        if self.mode not in ("power", "srgb"):
            raise ValueError(f"unknown gamma mode {self.mode!r}")
        if self.mode == "power" and not (np.isfinite(self.gamma)
                                         and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @classmethod
    def power(cls, gamma: float = 2.2) -> "GammaCurve":
        return cls("power", gamma)

    @classmethod
    def srgb(cls) -> "GammaCurve":
        return cls("srgb", 2.4)

    def decode(self, v: np.ndarray) -> np.ndarray:
        """Encoded -> linear, elementwise."""
        v = np.asarray(v, dtype=np.float64)
        if np.any(v < 0):
            raise ValueError("negative input to gamma decode")
        if self.mode == "power":
            return v ** self.gamma
        return np.where(v <= 0.04045, v / 12.92,
                        ((v + 0.055) / 1.055) ** 2.4)

    def encode(self, v: np.ndarray) -> np.ndarray:
        """Linear -> encoded, elementwise."""
        v = np.asarray(v, dtype=np.float64)
        if np.any(v < 0):
            raise ValueError("negative input to gamma encode")
        if self.mode == "power":
            return v ** (1.0 / self.gamma)
        return np.where(v <= 0.0031308, v * 12.92,
                        1.055 * v ** (1.0 / 2.4) - 0.055)

    def label(self) -> str:
        return "srgb" if self.mode == "srgb" else f"power:{self.gamma:g}"

    @classmethod
    def parse(cls, label: str) -> "GammaCurve":
        if label == "srgb":
            return cls.srgb()
        if label.startswith("power:"):
            return cls.power(float(label.split(":", 1)[1]))
        raise ValueError(f"unknown gamma label {label!r}")


def to_linear(img: ImageBuffer, curve: GammaCurve) -> ImageBuffer:
    """Decode a gamma-domain image to linear."""
    _require_domain(img, GAMMA, "to_linear")
    return ImageBuffer(curve.decode(img.data), LINEAR)


def to_gamma(img: ImageBuffer, curve: GammaCurve) -> ImageBuffer:
    """Encode a linear-domain image for storage or metrics on encoded values."""
    _require_domain(img, LINEAR, "to_gamma")
    return ImageBuffer(curve.encode(img.data), GAMMA)


def luma_bt601(img: ImageBuffer) -> ImageBuffer:
    """Project an RGB image to BT.601 luma (0.299 R + 0.587 G + 0.114 B).

    Single-channel input is returned unchanged.
    """
    if img.channels == 1:
        return img
    y = img.data @ BT601_WEIGHTS
    return ImageBuffer(y[:, :, np.newaxis], img.domain)


def mosaic(img: ImageBuffer, pattern: BayerPattern) -> ImageBuffer:
    """Subsample an RGB image to a single-channel Bayer mosaic."""
    if img.channels != 3:
        raise ValueError("mosaic requires a 3-channel image")
    cmap = pattern.channel_map(img.height, img.width)
    rows, cols = np.ogrid[0:img.height, 0:img.width]
    raw = img.data[rows, cols, cmap]
    return ImageBuffer(raw[:, :, np.newaxis], img.domain)


# normalized-convolution kernels: green sits on a checkerboard so a plain
# cross reaches it from anywhere; red/blue need the diagonal taps too
_KERNEL_G = np.array([[0., 1., 0.], [1., 4., 1.], [0., 1., 0.]])
_KERNEL_RB = np.array([[1., 2., 1.], [2., 4., 2.], [1., 2., 1.]])


def demosaic_bilinear(raw: ImageBuffer, pattern: BayerPattern) -> ImageBuffer:
    """Bilinear demosaic of a single-channel Bayer image to RGB.

    Each missing sample is the average of its nearest same-channel
    neighbors (normalized convolution), which reproduces affine images
    exactly in the interior; borders use replicated edges. Measured pixels
    pass through untouched.
    """
    if raw.channels != 1:
        raise ValueError("demosaic expects a single-channel mosaic")
    plane = raw.plane()
    cmap = pattern.channel_map(raw.height, raw.width)
    out = np.empty((raw.height, raw.width, 3))
    for c, kernel in ((0, _KERNEL_RB), (1, _KERNEL_G), (2, _KERNEL_RB)):
        mask = (cmap == c).astype(np.float64)
        num = ndi.convolve(plane * mask, kernel, mode="nearest")
        den = ndi.convolve(mask, kernel, mode="nearest")
        with np.errstate(divide="ignore", invalid="ignore"):
            est = np.where(den > 0, num / den, 0.0)
        out[:, :, c] = np.where(mask > 0, plane, est)
    return ImageBuffer(out, raw.domain)


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB for unit peak, capped at 99 dB.

    Parameters
    ----------
    a, b : ImageBuffer
        Same shape and same domain. The peak is taken as 1.0.

    Returns
    -------
    float
        10*log10(1/MSE), or the 99 dB cap when the images are identical.
    """
    _require_comparable(a, b, "psnr")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean structural similarity over an 11x11 Gaussian window (sigma 1.5).

    Uses the standard constants K1=0.01, K2=0.03 with dynamic range 1.0.
    Color images are projected to BT.601 luma first. Both images must be at
    least 11 pixels on each side.

    Returns
    -------
    float
        Mean local SSIM over all fully valid window positions.
    """
    _require_comparable(a, b, "ssim")
    if min(a.height, a.width) < _SSIM_WINDOW:
        raise ValueError(
            f"ssim needs images at least {_SSIM_WINDOW} px per side, "
            f"got {a.height}x{a.width}")
    xa = luma_bt601(a).plane()
    xb = luma_bt601(b).plane()
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    mu_a = convolve2d(xa, win, mode="valid")
    mu_b = convolve2d(xb, win, mode="valid")
    var_a = convolve2d(xa * xa, win, mode="valid") - mu_a ** 2
    var_b = convolve2d(xb * xb, win, mode="valid") - mu_b ** 2
    cov = convolve2d(xa * xb, win, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
