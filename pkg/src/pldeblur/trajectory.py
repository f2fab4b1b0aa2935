"""Structured motion-kernel model: key points -> cubic-spline path -> rasterized kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np
from scipy.interpolate import CubicSpline


class KernelWindowError(ValueError):
    """Trajectory falls outside the kernel window after centering."""


class Centering(Enum):
    CENTROID = "centroid"
    NONE = "none"


@dataclass(frozen=True)
class RenderConfig:
    """Rasterization settings: window size, spline sample count, centering mode."""

    kernel_size: int = 32
    samples: int = 1024
    centering: Centering = Centering.CENTROID

    def __post_init__(self):
        if self.kernel_size < 3:
            raise ValueError(f"kernel_size must be >= 3, got {self.kernel_size}")
        if self.samples < 2:
            raise ValueError(f"samples must be >= 2, got {self.samples}")


# Trajectory coordinates are snapped to this subpixel grid before splatting.
# With 20 fractional bits the bilinear weights and their pairwise products are
# exact dyadics, so splat accumulation is exact for up to 2**12 samples and
# mirrored or translated inputs rasterize to bit-identical kernels.
COORD_QUANTUM = 2.0**20


def as_keypoints(points, require_origin: bool = True) -> np.ndarray:
    """Coerce to a (K, 2) float array of finite key points, K >= 2."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError(f"key points must have shape (K, 2) with K >= 2, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("key points contain non-finite values")
    if require_origin and (pts[0, 0] != 0.0 or pts[0, 1] != 0.0):
        raise ValueError(f"first key point must be the origin, got {pts[0]}")
    return pts


def keypoints_to_vector(points) -> np.ndarray:
    """Flatten key points to the optimized vector of length 2(K-1); origin dropped."""
    pts = as_keypoints(points)
    return pts[1:].ravel().copy()


def vector_to_keypoints(vec) -> np.ndarray:
    """Inverse of keypoints_to_vector: prepend the fixed origin."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1 or v.size < 2 or v.size % 2 != 0:
        raise ValueError(f"key-point vector must have even length >= 2, got {v.shape}")
    return np.vstack([np.zeros((1, 2)), v.reshape(-1, 2)])


def _merge_duplicates(pts: np.ndarray) -> np.ndarray:
    """Drop consecutive duplicate points (zero chords break the spline system)."""
    if len(pts) == 1:
        return pts
    keep = np.ones(len(pts), dtype=bool)
    same = (pts[1:, 0] == pts[:-1, 0]) & (pts[1:, 1] == pts[:-1, 1])
    keep[1:] = ~same
    return pts[keep]


class TrajectorySpline:
    """Natural cubic spline through key points, chord-length parameterized."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        pts = _merge_duplicates(pts)
        self.points = pts
        if len(pts) == 1:
            self.knots = np.zeros(1)
            self._spline = None
        else:
            chords = np.sqrt(np.sum(np.diff(pts, axis=0) ** 2, axis=1))
            self.knots = np.concatenate([[0.0], np.cumsum(chords)])
            self._spline = CubicSpline(self.knots, pts, axis=0, bc_type="natural")

    @property
    def length(self) -> float:
        return float(self.knots[-1])

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self._spline is None:
            return np.tile(self.points[0], (t.size, 1))
        return self._spline(t)


def interpolate_spline(points, samples: int) -> np.ndarray:
    """Sample the key-point spline at `samples` parameter values, uniformly spaced.

    Degenerate inputs (all points coincident) yield a constant trajectory.
    """
    pts = as_keypoints(points, require_origin=False)
    if samples < len(pts):
        raise ValueError(f"need at least {len(pts)} samples for {len(pts)} key points")
    path = TrajectorySpline(pts)
    return path(np.linspace(0.0, path.length, samples))


def _snap(values: np.ndarray) -> np.ndarray:
    return np.rint(values * COORD_QUANTUM) / COORD_QUANTUM


def render_kernel(points, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Rasterize the key-point trajectory into a normalized blur kernel.

    A point source is moved along the spline; each of the S samples deposits
    mass 1/S with bilinear weights. Centroid centering translates the
    trajectory so its mean sits at the window center ((M-1)/2, (M-1)/2).
    The key-point y axis points up, so row index decreases with y.
    """
    pts = as_keypoints(points, require_origin=False)
    m = cfg.kernel_size
    if cfg.centering is Centering.CENTROID:
        # Anchoring on the first point costs nothing after centroid centering
        # but makes uniformly translated inputs rasterize identically.
        pts = pts - pts[0]
    traj = interpolate_spline(pts, cfg.samples)
    center = (m - 1) / 2.0
    if cfg.centering is Centering.CENTROID:
        offsets = _snap(traj - traj.mean(axis=0))
        cols = center + offsets[:, 0]
        rows = center - offsets[:, 1]
    else:
        snapped = _snap(traj)
        cols = snapped[:, 0]
        rows = (m - 1) - snapped[:, 1]
    high = float(m - 1)
    excess = max(
        float(np.max(-rows, initial=0.0)),
        float(np.max(rows - high, initial=0.0)),
        float(np.max(-cols, initial=0.0)),
        float(np.max(cols - high, initial=0.0)),
    )
    if excess > 0:
        raise KernelWindowError(
            f"trajectory exceeds the {m}x{m} window by up to {excess:.4f} px after centering"
        )
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    fr = rows - r0
    fc = cols - c0
    # Zero-weight corners are clipped back inside the grid instead of masked.
    r1 = np.minimum(r0 + 1, m - 1)
    c1 = np.minimum(c0 + 1, m - 1)
    idx = np.concatenate([r0 * m + c0, r0 * m + c1, r1 * m + c0, r1 * m + c1])
    wts = np.concatenate([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc])
    kernel = np.bincount(idx, weights=wts, minlength=m * m).reshape(m, m)
    return kernel / cfg.samples


def random_keypoints(k: int, rng_seed: int) -> np.ndarray:
    """Random-walk key points: unit-uniform directions, step length U[0, 100/(K-1)]."""
    if k < 2:
        raise ValueError(f"need at least 2 key points, got {k}")
    rng = np.random.default_rng(rng_seed)
    angles = rng.uniform(0.0, 2.0 * math.pi, size=k - 1)
    lengths = rng.uniform(0.0, 100.0 / (k - 1), size=k - 1)
    steps = np.stack([lengths * np.cos(angles), lengths * np.sin(angles)], axis=1)
    return np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])


def generate_kernel_dataset(
    count: int,
    k: int,
    cfg: RenderConfig = RenderConfig(),
    rng_seed: int = 0,
    scale: float = 0.3,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield `count` (key points, kernel) pairs from seeded random walks.

    Raw walks live on a ~100 px canvas, so they are shrunk by `scale` to fit
    the kernel window; a trajectory that still escapes is shrunk by half up
    to 5 more times before giving up. Record i uses seed rng_seed + i, so
    generation can be split across workers.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    for i in range(count):
        raw = random_keypoints(k, rng_seed + i)
        last_err: KernelWindowError | None = None
        for attempt in range(6):
            scaled = raw * (scale * 0.5**attempt)
            try:
                kernel = render_kernel(scaled, cfg)
            except KernelWindowError as err:
                last_err = err
                continue
            yield scaled, kernel
            break
        else:
            raise KernelWindowError(
                f"record {i}: trajectory does not fit after 5 rescale retries ({last_err})"
            )


def keypoints_from_line(rho: float, theta_deg: float, k: int) -> np.ndarray:
    """K points equally spaced on the ray at angle theta (degrees), total length rho."""
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    if k < 2:
        raise ValueError(f"need at least 2 key points, got {k}")
    t = math.radians(theta_deg)
    reach = np.arange(k) * (rho / (k - 1))
    return np.stack([reach * math.cos(t), reach * math.sin(t)], axis=1)
