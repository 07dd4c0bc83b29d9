"""Dense array helpers: checked matmul, bilinear resampling, seeded RNG streams
and central finite differences.

Arrays are plain row-major :class:`numpy.ndarray` objects. Training runs in
``float32``; gradient checks switch to ``float64``.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError

DEFAULT_DTYPE = np.float32


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of ``a`` (m x k) and ``b`` (k x n)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def _axis_weights(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres (align_corners=False), clamped to the border
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, x - i0


def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an ``h x w [x c]`` raster with bilinear interpolation.

    Uses the half-pixel convention ``x_src = (x + 0.5) * w / out_w - 0.5``
    with source coordinates clamped to the border. Extra leading axes are
    not supported; the optional trailing axis is treated as channels.
    """
    src = np.asarray(src)
    if src.ndim not in (2, 3):
        raise DimensionError(f"expected h x w or h x w x c, got shape {src.shape}")
    h, w = src.shape[:2]
    if h < 1 or w < 1 or out_h < 1 or out_w < 1:
        raise DimensionError(f"zero extent in resize {src.shape} -> ({out_h}, {out_w})")
    dtype = src.dtype if np.issubdtype(src.dtype, np.floating) else np.float64
    work = src.astype(np.float64, copy=False)
    y0, y1, fy = _axis_weights(out_h, h)
    x0, x1, fx = _axis_weights(out_w, w)
    if work.ndim == 3:
        fy = fy[:, None]
        fx = fx[:, None]
    rows = work[y0] * (1.0 - fy[:, None]) + work[y1] * fy[:, None]
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return out.astype(dtype, copy=False)


def resize_batch(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize over the last two axes of ``(..., h, w)``.

    Same sampling rule as :func:`bilinear_resize`; exists so the patch
    pipeline can shrink thousands of flow rasters in one call.
    """
    src = np.asarray(src)
    h, w = src.shape[-2:]
    if h < 1 or w < 1 or out_h < 1 or out_w < 1:
        raise DimensionError(f"zero extent in resize {src.shape} -> ({out_h}, {out_w})")
    work = src.astype(np.float64, copy=False)
    y0, y1, fy = _axis_weights(out_h, h)
    x0, x1, fx = _axis_weights(out_w, w)
    rows = work[..., y0, :] * (1.0 - fy)[:, None] + work[..., y1, :] * fy[:, None]
    out = rows[..., x0] * (1.0 - fx) + rows[..., x1] * fx
    return out.astype(src.dtype if np.issubdtype(src.dtype, np.floating) else np.float64)


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray, *, border: str = "zero") -> np.ndarray:
    """Sample ``img`` at subpixel positions ``(x, y)``.

    ``img`` is either a single ``h x w`` raster, sampled at coordinate arrays
    of any shape, or a stack ``(b, h, w)`` sampled at ``(b, ...)`` arrays (one
    coordinate set per image). ``border="zero"`` treats pixels outside the
    raster as 0, ``border="edge"`` replicates the nearest border pixel.
    """
    img = np.asarray(img)
    h, w = img.shape[-2:]
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    if border == "edge":
        x = np.clip(x, 0.0, w - 1)
        y = np.clip(y, 0.0, h - 1)
    elif border != "zero":
        raise ValueError(f"unknown border mode {border!r}")
    x0f = np.floor(x)
    y0f = np.floor(y)
    fx = x - x0f
    fy = y - y0f
    x0 = x0f.astype(np.intp)
    y0 = y0f.astype(np.intp)
    if img.ndim == 2:
        flat = img.reshape(1, -1)
        nb = 1
    elif img.ndim == 3:
        if x.shape[0] != img.shape[0]:
            raise DimensionError(f"coordinate batch {x.shape} does not match images {img.shape}")
        flat = img.reshape(img.shape[0], -1)
        nb = img.shape[0]
    else:
        raise DimensionError(f"expected (h, w) or (b, h, w) image, got {img.shape}")

    def tap(yi, xi):
        idx = np.clip(yi, 0, h - 1) * w + np.clip(xi, 0, w - 1)
        vals = np.take_along_axis(flat, idx.reshape(nb, -1), axis=1).reshape(x.shape)
        if border == "zero":
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.where(inside, vals, 0.0)
        return vals

    top = tap(y0, x0) * (1.0 - fx) + tap(y0, x0 + 1) * fx
    bot = tap(y0 + 1, x0) * (1.0 - fx) + tap(y0 + 1, x0 + 1) * fx
    return top * (1.0 - fy) + bot * fy


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for ``seed``; the stream is fixed across platforms."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent, reproducible child streams derived from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit seed for a sub-task identified by integer keys."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, in float64."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f is not finite near element {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``max|a-b| / max(max|a|, max|b|, floor)``; the metric used by gradient checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_finite(arr: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite values")
    return arr
