"""Image containers, convolution, the Poisson photon model, and quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.fft import next_fast_len
from scipy.ndimage import uniform_filter
from scipy.signal import fftconvolve


class Boundary(Enum):
    """Boundary handling for convolution: mirror padding or periodic wrap."""

    SYMMETRIC = "symmetric"
    CIRCULAR = "circular"


@dataclass(frozen=True)
class NoiseParams:
    """Photon level (mean counts per pixel at unit intensity) plus Gaussian read noise."""

    alpha: float
    sigma_read: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"photon level alpha must be positive, got {self.alpha}")
        if self.sigma_read < 0:
            raise ValueError(f"sigma_read must be >= 0, got {self.sigma_read}")


def as_image(x) -> np.ndarray:
    """Coerce to a finite 2-D float64 array with both dimensions >= 1."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must be 2-D with nonzero dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def validate_kernel(h, image_shape=None) -> np.ndarray:
    """Check kernel invariants: square, nonnegative, unit sum, fits inside the image."""
    arr = np.asarray(h, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"kernel must be square 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("kernel contains non-finite values")
    if np.any(arr < 0):
        raise ValueError("kernel has negative entries")
    total = arr.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"kernel entries must sum to 1 (got {total!r})")
    if image_shape is not None and arr.shape[0] > min(image_shape):
        raise ValueError(
            f"kernel of size {arr.shape[0]} does not fit inside image of shape {image_shape}"
        )
    return arr


def kernel_center(size: int) -> tuple[int, int]:
    """Integer center index used by convolve/correlate; (size-1)//2 on both axes."""
    c = (size - 1) // 2
    return c, c


def delta_kernel(size: int) -> np.ndarray:
    """Kernel that leaves images unchanged under convolve."""
    h = np.zeros((size, size))
    h[kernel_center(size)] = 1.0
    return h


def _embed_kernel_fft(h: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """rfft2 of the kernel placed on the image grid with its center at the origin."""
    m = h.shape[0]
    cy, cx = kernel_center(m)
    emb = np.zeros(shape)
    rows = (np.arange(m) - cy) % shape[0]
    cols = (np.arange(m) - cx) % shape[1]
    emb[np.ix_(rows, cols)] = h
    return np.fft.rfft2(emb)


class ConvPlan:
    """Convolution with a fixed kernel on a fixed image shape, kernel FFT cached.

    Iterative solvers apply the same kernel hundreds of times; caching its
    transform roughly halves the FFT work. `convolve` and `convolve_adjoint`
    below are one-shot wrappers around this class, so there is a single
    numerical path.
    """

    def __init__(self, h, image_shape: tuple[int, int], boundary: Boundary):
        self.h = validate_kernel(h, image_shape=image_shape)
        self.shape = tuple(image_shape)
        self.boundary = boundary
        m = self.h.shape[0]
        self._m = m
        cy, cx = kernel_center(m)
        self._pad_conv = ((m - 1 - cy, cy), (m - 1 - cx, cx))
        self._pad_adj = ((cy, m - 1 - cy), (cx, m - 1 - cx))
        if boundary is Boundary.CIRCULAR:
            hf = _embed_kernel_fft(self.h, self.shape)
            self._hf_fwd = hf
            self._hf_adj = np.conj(hf)
            self._fshape = None
        else:
            # Linear convolution of the padded image (H+m-1) with the kernel.
            full = (self.shape[0] + 2 * m - 2, self.shape[1] + 2 * m - 2)
            self._fshape = (next_fast_len(full[0]), next_fast_len(full[1]))
            self._hf_fwd = np.fft.rfft2(self.h, s=self._fshape)
            self._hf_adj = np.fft.rfft2(self.h[::-1, ::-1], s=self._fshape)

    def _apply(self, img: np.ndarray, pad, hf) -> np.ndarray:
        if self.boundary is Boundary.CIRCULAR:
            return np.fft.irfft2(np.fft.rfft2(img) * hf, s=self.shape)
        m = self._m
        padded = np.pad(img, pad, mode="symmetric")
        full = np.fft.irfft2(np.fft.rfft2(padded, s=self._fshape) * hf, s=self._fshape)
        return full[m - 1 : m - 1 + self.shape[0], m - 1 : m - 1 + self.shape[1]]

    def convolve(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.shape:
            raise ValueError(f"planned for shape {self.shape}, got {x.shape}")
        return self._apply(x, self._pad_conv, self._hf_fwd)

    def adjoint(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != self.shape:
            raise ValueError(f"planned for shape {self.shape}, got {r.shape}")
        return self._apply(r, self._pad_adj, self._hf_adj)


def convolve(x, h, boundary: Boundary = Boundary.SYMMETRIC) -> np.ndarray:
    """2-D convolution of image x with kernel h, output the same size as x.

    Symmetric mode mirror-pads the image (edge pixels repeated); circular mode
    wraps around, which makes the operator an exact FFT-diagonal map.
    """
    x = as_image(x)
    return ConvPlan(h, x.shape, boundary).convolve(x)


def convolve_adjoint(r, h, boundary: Boundary = Boundary.SYMMETRIC) -> np.ndarray:
    """Correlate image r with kernel h (the image-side adjoint of convolve).

    Exact adjoint for the circular boundary; for the symmetric boundary the
    padding is mirrored the same way, which is the usual choice inside
    Richardson-Lucy style iterations.
    """
    r = as_image(r)
    return ConvPlan(h, r.shape, boundary).adjoint(r)


def correlate(r, g, size: int, boundary: Boundary = Boundary.SYMMETRIC) -> np.ndarray:
    """Kernel-side adjoint of convolve: grid q with <h (*) g, r> = <h, q> for all h.

    r and g are images of equal shape; the result has the requested kernel
    support size x size. The identity is exact for the circular boundary and
    for the symmetric boundary (the padded image is constant in h).
    """
    r = as_image(r)
    g = as_image(g)
    if r.shape != g.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {g.shape}")
    if size > min(r.shape):
        raise ValueError(f"kernel support {size} exceeds image shape {r.shape}")
    cy, cx = kernel_center(size)
    if boundary is Boundary.CIRCULAR:
        cc = np.fft.irfft2(np.conj(np.fft.rfft2(r)) * np.fft.rfft2(g), s=r.shape)
        rows = (cy - np.arange(size)) % r.shape[0]
        cols = (cx - np.arange(size)) % r.shape[1]
        return cc[np.ix_(rows, cols)]
    gp = np.pad(g, ((size - 1 - cy, cy), (size - 1 - cx, cx)), mode="symmetric")
    corr = fftconvolve(gp, r[::-1, ::-1], mode="valid")
    return corr[::-1, ::-1]


def poisson_forward(x, noise: NoiseParams, seed: int) -> np.ndarray:
    """Draw y ~ Poisson(alpha * x) + N(0, sigma_read^2), pixelwise, deterministically.

    The raw sample is returned; negative values from the Gaussian term are
    not clipped.
    """
    x = as_image(x)
    if np.any(x < 0):
        raise ValueError("poisson_forward requires a nonnegative image")
    rng = np.random.default_rng(seed)
    y = rng.poisson(noise.alpha * x).astype(np.float64)
    if noise.sigma_read > 0:
        y = y + rng.normal(0.0, noise.sigma_read, size=x.shape)
    return y


def snr_db(alpha: float, x: float, sigma: float) -> float:
    """SNR in dB of a Poisson(alpha*x) + N(0, sigma^2) measurement: mean over noise std."""
    mean = alpha * x
    var = alpha * x + sigma * sigma
    if var <= 0 or mean <= 0:
        raise ValueError(f"SNR undefined for alpha*x={mean}, sigma={sigma}")
    return 20.0 * math.log10(mean / math.sqrt(var))


def spatial_gradients(x) -> tuple[np.ndarray, np.ndarray]:
    """Forward-difference gradients (horizontal, vertical); last column/row zero."""
    x = as_image(x)
    if x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"image must be at least 2x2 for gradients, got {x.shape}")
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    gy[:-1, :] = x[1:, :] - x[:-1, :]
    return gx, gy


def gradients_adjoint(gx, gy) -> np.ndarray:
    """Adjoint of spatial_gradients: <grad(u), (gx, gy)> = <u, gradients_adjoint(gx, gy)>."""
    gx = as_image(gx)
    gy = as_image(gy)
    if gx.shape != gy.shape:
        raise ValueError(f"shape mismatch: {gx.shape} vs {gy.shape}")
    out = np.zeros_like(gx)
    out[:, 1:] += gx[:, :-1]
    out[:, :-1] -= gx[:, :-1]
    out[1:, :] += gy[:-1, :]
    out[:-1, :] -= gy[:-1, :]
    return out


def estimate_photon_level(y, percentile: float = 99.0, smooth: int = 3) -> float:
    """Estimate the photon level from an observation as a high percentile of its counts.

    Clean scenes are normalized so their brightest regions are near 1, so the
    upper percentile of the counts approximates alpha. The counts are mean
    filtered first (smooth x smooth window) because the raw upper percentile
    rides the Poisson tail ~2.3*sqrt(alpha) above the bright level; smooth=1
    disables the filter. The percentile is configurable; 99 ignores hot
    outlier pixels.
    """
    y = as_image(y)
    if np.any(y < 0):
        raise ValueError("observation must be nonnegative")
    if smooth < 1:
        raise ValueError(f"smooth must be >= 1, got {smooth}")
    if smooth > 1:
        y = uniform_filter(y, size=smooth, mode="reflect")
    level = float(np.percentile(y, percentile))
    if level <= 0:
        raise ValueError("photon level estimate is not positive (image dark or empty)")
    return level


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB (the MSE == 0 sentinel)."""
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 99.0
    return min(10.0 * math.log10(peak * peak / mse), 99.0)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _ssim_window() -> np.ndarray:
    ax = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, dynamic_range: float = 1.0) -> float:
    """Mean structural similarity over Gaussian-weighted 11x11 windows.

    Uses the standard constants (sigma 1.5, k1 0.01, k2 0.03) and averages
    only fully interior windows, so the images must be at least 11x11.
    """
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _ssim_window()
    mu_a = fftconvolve(a, w, mode="valid")
    mu_b = fftconvolve(b, w, mode="valid")
    var_a = fftconvolve(a * a, w, mode="valid") - mu_a**2
    var_b = fftconvolve(b * b, w, mode="valid") - mu_b**2
    cov = fftconvolve(a * b, w, mode="valid") - mu_a * mu_b
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def kernel_ncc(h1, h2) -> float:
    """Best normalized cross-correlation of two kernels over all integer shifts.

    Insensitive to the translation ambiguity of blind deconvolution: h2 is
    shifted over the full +-(M-1) range (zeros filled in) and the Pearson
    correlation against h1 is maximized.
    """
    a = np.asarray(h1, dtype=np.float64)
    b = np.asarray(h2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"kernels must share a 2-D shape: {a.shape} vs {b.shape}")
    a = a - a.mean()
    norm_a = np.sqrt((a * a).sum())
    if norm_a == 0 or np.ptp(b) == 0:
        raise ValueError("kernel_ncc undefined for zero-variance kernels")
    rows, cols = a.shape
    best = -1.0
    shifted = np.empty_like(b)
    for dy in range(-(rows - 1), rows):
        for dx in range(-(cols - 1), cols):
            shifted[:] = 0.0
            src_r = slice(max(0, -dy), min(rows, rows - dy))
            src_c = slice(max(0, -dx), min(cols, cols - dx))
            dst_r = slice(max(0, dy), min(rows, rows + dy))
            dst_c = slice(max(0, dx), min(cols, cols + dx))
            shifted[dst_r, dst_c] = b[src_r, src_c]
            bs = shifted - shifted.mean()
            norm_b = np.sqrt((bs * bs).sum())
            if norm_b == 0:
                continue
            best = max(best, float((a * bs).sum() / (norm_a * norm_b)))
    return best
