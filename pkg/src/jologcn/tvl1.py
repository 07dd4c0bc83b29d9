"""Duality-based TV-L1 optical flow for small grayscale patches.

The solver follows the classic coarse-to-fine scheme: at every pyramid level
the second image is warped by the current flow, brightness constancy is
linearised around it, and the solver alternates a pointwise thresholding step
on the auxiliary field ``v`` with a Chambolle fixed-point step on the dual
variables ``p`` of the total-variation term.

All routines accept a stack of patches ``(b, h, w)``. Each patch stops
iterating on its own convergence test, so a patch's flow never depends on
what else is in the batch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import DimensionError, InputError, NumericError
from .numerics import bilinear_sample, resize_batch

# lambda is a published default for 8-bit intensities; inputs in [0, 1] are
# rescaled so that value keeps its meaning.
INTENSITY_SCALE = 255.0
MIN_LEVEL_SIZE = 8


@dataclass(frozen=True)
class Tvl1Params:
    lam: float = 0.15
    theta: float = 0.3
    tau: float = 0.25
    warps: int = 5
    inner_iters: int = 30
    pyramid_scale: float = 0.5
    max_levels: int = 5
    stop_eps: float = 1e-3
    median_filter: bool = False

    def __post_init__(self):
        if not (self.lam > 0 and self.theta > 0):
            raise InputError("lam and theta must be positive")
        if not 0 < self.tau <= 0.25:
            raise InputError("tau must lie in (0, 0.25]")
        if not 0 < self.pyramid_scale < 1:
            raise InputError("pyramid_scale must lie in (0, 1)")
        if self.warps < 1 or self.inner_iters < 1 or self.max_levels < 1:
            raise InputError("warps, inner_iters and max_levels must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FlowField:
    """Displacement field in pixels; ``u`` is horizontal, ``v`` vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u)
        self.v = np.asarray(self.v)
        if self.u.shape != self.v.shape:
            raise DimensionError(f"u {self.u.shape} and v {self.v.shape} differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def stack(self) -> np.ndarray:
        """``(..., h, w, 2)`` array with channels (u, v)."""
        return np.stack([self.u, self.v], axis=-1)


def endpoint_error(est: FlowField, gt: FlowField, mask: np.ndarray | None = None) -> float:
    """Mean Euclidean distance between two flow fields (optionally masked)."""
    if est.shape != gt.shape:
        raise DimensionError(f"flow shapes differ: {est.shape} vs {gt.shape}")
    err = np.hypot(np.asarray(est.u, np.float64) - gt.u, np.asarray(est.v, np.float64) - gt.v)
    if mask is not None:
        err = err[np.broadcast_to(mask, err.shape)]
    return float(err.mean())


def central_mask(h: int, w: int, fraction: float = 0.75) -> np.ndarray:
    """Boolean mask of the centred ``fraction`` of each axis."""
    mh = int(round(h * (1 - fraction) / 2))
    mw = int(round(w * (1 - fraction) / 2))
    m = np.zeros((h, w), dtype=bool)
    m[mh:h - mh, mw:w - mw] = True
    return m


# -- finite-difference operators on (b, h, w) stacks -------------------------

def _centered_gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # central differences with replicated borders
    p = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = 0.5 * (p[:, 1:-1, 2:] - p[:, 1:-1, :-2])
    gy = 0.5 * (p[:, 2:, 1:-1] - p[:, :-2, 1:-1])
    return gx, gy


def _forward_gradient(f: np.ndarray) -> np.ndarray:
    """Forward differences of ``(..., h, w)``; returns ``(2, ..., h, w)`` as (d/dx, d/dy)."""
    g = np.zeros((2,) + f.shape, dtype=f.dtype)
    np.subtract(f[..., :, 1:], f[..., :, :-1], out=g[0][..., :, :-1])
    np.subtract(f[..., 1:, :], f[..., :-1, :], out=g[1][..., :-1, :])
    return g


def _divergence(p: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`_forward_gradient`; ``p`` is ``(2, ..., h, w)``."""
    px, py = p[0], p[1]
    div = px.copy()
    div[..., :, 1:] -= px[..., :, :-1]
    div[..., :, -1] = -px[..., :, -2]
    div += py
    div[..., 1:, :] -= py[..., :-1, :]
    div[..., -1, :] -= py[..., -1, :]
    return div


def tv_l1_energy(u1, u2, i1w, i1wx, i1wy, u1_0, u2_0, i0, lam) -> np.ndarray:
    """Linearised TV-L1 energy per patch around the warp point ``(u1_0, u2_0)``."""
    rho = i1w + i1wx * (u1 - u1_0) + i1wy * (u2 - u2_0) - i0
    g = _forward_gradient(np.stack([u1, u2]))
    tv = np.sqrt(g[0] ** 2 + g[1] ** 2).sum(axis=0)
    return (tv + lam * np.abs(rho)).sum(axis=(-2, -1))


def _warp(img: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    b, h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    return bilinear_sample(img, xx[None] + u1, yy[None] + u2, border="edge").astype(img.dtype, copy=False)


def _solve_level(i0, i1, u1, u2, params: Tvl1Params, monitor: Callable | None = None):
    """Refine ``(u1, u2)`` at one pyramid level. Arrays are ``(b, h, w)``."""
    lam, theta, tau = params.lam, params.theta, params.tau
    l_t = lam * theta
    taut = tau / theta
    b, h, w = i0.shape
    eps2 = params.stop_eps**2
    i1x, i1y = _centered_gradient(i1)
    u = np.stack([u1, u2])              # (2, b, h, w): flow components
    p = np.zeros((2,) + u.shape, u.dtype)  # (2 dirs, 2 comps, b, h, w): dual of TV

    for warp_idx in range(params.warps):
        i1w = _warp(i1, u[0], u[1])
        g = np.stack([_warp(i1x, u[0], u[1]), _warp(i1y, u[0], u[1])])
        gg = g[0] ** 2 + g[1] ** 2
        rho_c = i1w - (g * u).sum(axis=0) - i0
        with np.errstate(divide="ignore"):
            inv_gg = np.where(gg > 1e-10, 1.0 / gg, 0.0).astype(gg.dtype)
        u0 = u.copy()

        # patches still iterating at this warp; converged ones drop out
        active = np.arange(b)
        wu, wp = u, p
        wg, wgg, wrc, winv = g, gg, rho_c, inv_gg
        for it in range(params.inner_iters):
            rho = wrc + (wg * wu).sum(axis=0)
            # thresholding step: one scalar step length along the image gradient
            c = np.where(rho < -l_t * wgg, l_t, np.where(rho > l_t * wgg, -l_t, -rho * winv))
            new = wu + c * wg
            new += theta * _divergence(wp)
            err = ((new - wu) ** 2).sum(axis=(0, 2, 3)) / (h * w)
            wu = new
            grad_u = _forward_gradient(wu)
            norm = 1.0 + taut * np.sqrt(grad_u[0] ** 2 + grad_u[1] ** 2)
            wp = (wp + taut * grad_u) / norm

            if monitor is not None:
                u[:, active] = wu
                monitor(warp_idx, it, u[0], u[1], (i1w, g[0], g[1], u0[0], u0[1], i0))

            done = err <= eps2
            if done.any():
                u[:, active] = wu
                p[:, :, active] = wp
                keep = ~done
                active = active[keep]
                if active.size == 0:
                    break
                wu, wp = wu[:, keep], wp[:, :, keep]
                wg, wgg, wrc, winv = wg[:, keep], wgg[keep], wrc[keep], winv[keep]
        if active.size:
            u[:, active] = wu
            p[:, :, active] = wp

        if params.median_filter:
            u = ndimage.median_filter(u, size=(1, 1, 3, 3), mode="nearest")
    return u[0], u[1]


def _pyramid(img: np.ndarray, params: Tvl1Params) -> list[np.ndarray]:
    levels = [img]
    h, w = img.shape[1:]
    s = params.pyramid_scale
    sigma = 0.6 * np.sqrt(1.0 / s**2 - 1.0)
    while len(levels) < params.max_levels:
        nh, nw = int(round(h * s)), int(round(w * s))
        if min(nh, nw) < MIN_LEVEL_SIZE:
            break
        smooth = ndimage.gaussian_filter(levels[-1], sigma=(0, sigma, sigma), mode="nearest")
        levels.append(resize_batch(smooth, nh, nw))
        h, w = nh, nw
    return levels


def estimate_flow_batch(prev: np.ndarray, nxt: np.ndarray, params: Tvl1Params | None = None,
                        *, dtype=np.float32, monitor: Callable | None = None) -> FlowField:
    """TV-L1 flow from each ``prev[i]`` to ``nxt[i]``; inputs are ``(b, h, w)``.

    ``monitor(warp, iteration, u1, u2, linearisation)`` is called after every
    inner iteration at the finest level; it exists for diagnostics and tests.
    """
    params = params or Tvl1Params()
    prev = np.asarray(prev)
    nxt = np.asarray(nxt)
    if prev.shape != nxt.shape:
        raise DimensionError(f"patch shapes differ: {prev.shape} vs {nxt.shape}")
    if prev.ndim != 3:
        raise DimensionError(f"expected (b, h, w) stacks, got {prev.shape}")
    b, h, w = prev.shape
    if h < MIN_LEVEL_SIZE or w < MIN_LEVEL_SIZE:
        raise DimensionError(f"patches must be at least {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}, got {h}x{w}")
    if not (np.all(np.isfinite(prev)) and np.all(np.isfinite(nxt))):
        raise NumericError("non-finite intensities in flow input")

    i0 = prev.astype(dtype) * dtype(INTENSITY_SCALE)
    i1 = nxt.astype(dtype) * dtype(INTENSITY_SCALE)
    pyr0 = _pyramid(i0, params)
    pyr1 = _pyramid(i1, params)

    ch, cw = pyr0[-1].shape[1:]
    u1 = np.zeros((b, ch, cw), dtype=dtype)
    u2 = np.zeros((b, ch, cw), dtype=dtype)
    for lvl in range(len(pyr0) - 1, -1, -1):
        mon = monitor if lvl == 0 else None
        u1, u2 = _solve_level(pyr0[lvl], pyr1[lvl], u1, u2, params, mon)
        if lvl > 0:
            nh, nw = pyr0[lvl - 1].shape[1:]
            sy, sx = nh / u1.shape[1], nw / u1.shape[2]
            u1 = (resize_batch(u1, nh, nw) * sx).astype(dtype)
            u2 = (resize_batch(u2, nh, nw) * sy).astype(dtype)

    if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
        raise NumericError("flow solver diverged")
    if max(np.abs(u1).max(), np.abs(u2).max()) > h + w:
        raise NumericError(f"flow exceeds the {h + w} px sanity bound for {h}x{w} patches")
    return FlowField(u1, u2)


def estimate_flow(prev: np.ndarray, nxt: np.ndarray, params: Tvl1Params | None = None, *,
                  dtype=np.float32) -> FlowField:
    """TV-L1 flow between two equal-size ``h x w`` patches with values in [0, 1]."""
    prev = np.asarray(prev)
    nxt = np.asarray(nxt)
    if prev.shape != nxt.shape:
        raise DimensionError(f"patch shapes differ: {prev.shape} vs {nxt.shape}")
    if prev.ndim != 2:
        raise DimensionError(f"expected h x w patches, got {prev.shape}")
    flow = estimate_flow_batch(prev[None], nxt[None], params, dtype=dtype)
    return FlowField(flow.u[0], flow.v[0])
