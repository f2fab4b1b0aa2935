"""File formats: PFM float images, PGM previews, key-point JSON, kernel text, trace CSV."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import as_image
from .trajectory import as_keypoints


def _read_token(stream, allow_comments: bool = False) -> bytes:
    """Next whitespace-delimited header token; consumes one trailing whitespace byte."""
    token = b""
    while True:
        ch = stream.read(1)
        if not ch:
            if token:
                return token
            raise ValueError("truncated header")
        if allow_comments and ch == b"#" and not token:
            while ch and ch != b"\n":
                ch = stream.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def write_pfm(path, image) -> None:
    """Write a grayscale PFM: 32-bit little-endian floats, rows stored bottom-up."""
    arr = as_image(image).astype(np.float32)
    height, width = arr.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM written by write_pfm or other tools (either endianness)."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic != b"Pf":
            raise ValueError(f"not a grayscale PFM (magic {magic!r})")
        width = int(_read_token(f))
        height = int(_read_token(f))
        if width < 1 or height < 1:
            raise ValueError(f"invalid PFM dimensions {width}x{height}")
        scale = float(_read_token(f))
        if scale == 0:
            raise ValueError("PFM scale token must be nonzero")
        payload = f.read(width * height * 4)
    if len(payload) != width * height * 4:
        raise ValueError("truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    if np.any(np.isnan(arr)):
        raise ValueError("PFM payload contains NaN")
    return np.flipud(arr).astype(np.float64)


def write_pgm(path, image, peak: float, maxval: int = 255) -> None:
    """Write a binary PGM preview; values are linearly quantized by x/peak."""
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak}")
    if maxval not in (255, 65535):
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    arr = as_image(image)
    quantized = np.clip(np.rint(arr / peak * maxval), 0, maxval)
    height, width = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        if maxval == 255:
            f.write(quantized.astype(np.uint8).tobytes())
        else:
            f.write(quantized.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM; returns intensities normalized to [0, 1]."""
    with open(path, "rb") as f:
        magic = _read_token(f, allow_comments=True)
        if magic != b"P5":
            raise ValueError(f"not a binary PGM (magic {magic!r})")
        width = int(_read_token(f, allow_comments=True))
        height = int(_read_token(f, allow_comments=True))
        maxval = int(_read_token(f, allow_comments=True))
        if width < 1 or height < 1 or not 0 < maxval < 65536:
            raise ValueError(f"invalid PGM header {width}x{height} maxval={maxval}")
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        count = width * height
        payload = f.read(count * dtype.itemsize if maxval >= 256 else count)
    expected = count * (2 if maxval >= 256 else 1)
    if len(payload) != expected:
        raise ValueError("truncated PGM payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    if arr.max(initial=0) > maxval:
        raise ValueError("PGM sample exceeds declared maxval")
    return arr.astype(np.float64) / maxval


def write_keypoints_json(path, points) -> None:
    pts = as_keypoints(points)
    doc = {"k": len(pts), "points": [[float(x), float(y)] for x, y in pts]}
    with open(path, "w", encoding="ascii") as f:
        json.dump(doc, f)
        f.write("\n")


def read_keypoints_json(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as f:
        doc = json.load(f)
    points = doc.get("points")
    if not isinstance(points, list) or doc.get("k") != len(points):
        raise ValueError("key-point document must carry 'k' matching len(points)")
    return as_keypoints(points)


def write_kernel_text(path, kernel) -> None:
    """Plain-text kernel: first line the size M, then M rows of 17-digit floats."""
    arr = np.asarray(kernel, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"kernel must be square, got shape {arr.shape}")
    with open(path, "w", encoding="ascii") as f:
        f.write(f"{arr.shape[0]}\n")
        for row in arr:
            f.write(" ".join(f"{v:.17g}" for v in row))
            f.write("\n")


def read_kernel_text(path) -> np.ndarray:
    """Read a text kernel and validate its invariants (nonnegative, unit sum)."""
    text = Path(path).read_text(encoding="ascii").split()
    if not text:
        raise ValueError("empty kernel file")
    size = int(text[0])
    values = text[1:]
    if size < 1 or len(values) != size * size:
        raise ValueError(f"expected {size}x{size} kernel entries, found {len(values)}")
    arr = np.array([float(v) for v in values]).reshape(size, size)
    if not np.all(np.isfinite(arr)):
        raise ValueError("kernel contains non-finite values")
    if np.any(arr < 0):
        raise ValueError("kernel has negative entries")
    total = arr.sum()
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"kernel sum {total!r} deviates from 1 by more than 1e-6")
    return arr


def write_trace_csv(path, result) -> None:
    """Loss traces of an EstimateResult as stage,iteration,loss,step_size rows."""
    with open(path, "w", encoding="ascii", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["stage", "iteration", "loss", "step_size"])
        for stage, losses, steps in (
            ("stage1", result.loss_trace_stage1, result.step_trace_stage1),
            ("stage2", result.loss_trace_stage2, result.step_trace_stage2),
        ):
            for i, (loss, step) in enumerate(zip(losses, steps)):
                writer.writerow([stage, i, f"{loss:.17g}", f"{step:.17g}"])
