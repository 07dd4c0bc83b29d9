"""Joint-aligned optical flow patches (JFP).

Image coordinates are continuous with pixel ``(i, j)`` covering
``[j, j+1) x [i, i+1)``; a joint at ``(x, y)`` therefore sits between pixels
when ``x`` is an integer. A crop of side ``l`` around ``(x, y)`` samples pixel
indices ``x - l/2 + k`` for ``k = 0..l-1`` (and the same vertically), so an
integer joint yields an exact, interpolation-free crop.

Packed layout: a JFP sequence ``T' x K x mu x mu x 2 x N`` becomes
``2T' x K x mu^2 x N``; frame ``t`` contributes row ``2t`` (horizontal flow)
and row ``2t + 1`` (vertical flow), and each ``mu x mu`` raster is flattened
row-major.
"""
from __future__ import annotations

import concurrent.futures as cf
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, InputError, SchemaError
from .graph import OPENPOSE18_NAMES
from .numerics import bilinear_sample, resize_batch
from .tvl1 import FlowField, Tvl1Params, estimate_flow_batch

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class FrameSequence:
    """``T x H x W x c`` intensities in [0, 1] (c = 1 or 3)."""

    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim == 3:
            f = f[..., None]
        if f.ndim != 4 or f.shape[-1] not in (1, 3):
            raise DimensionError(f"frames must be T x H x W x {{1,3}}, got {f.shape}")
        if f.shape[0] < 2:
            raise InputError("a frame sequence needs at least two frames")
        self.frames = f

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def gray(self, t: int | None = None) -> np.ndarray:
        f = self.frames if t is None else self.frames[t]
        if f.shape[-1] == 1:
            return f[..., 0]
        return f @ LUMA.astype(f.dtype)


@dataclass
class SkeletonSequence:
    """Joint coordinates ``T x K x C x N`` with per-frame person validity."""

    coords: np.ndarray
    joint_names: tuple[str, ...] = ()
    person_mask: np.ndarray | None = None
    parent: tuple[int, ...] | None = None

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 4 or c.shape[2] not in (2, 3):
            raise SchemaError(f"coords must be T x K x C x N with C in (2, 3), got {c.shape}")
        if c.shape[1] < 1:
            raise SchemaError("K must be at least 1")
        self.coords = c
        T, K, _, N = c.shape
        if self.person_mask is None:
            self.person_mask = np.ones((T, N), dtype=bool)
        else:
            self.person_mask = np.asarray(self.person_mask, dtype=bool)
            if self.person_mask.shape != (T, N):
                raise SchemaError(f"person_mask must be {(T, N)}, got {self.person_mask.shape}")
        if not self.joint_names:
            self.joint_names = tuple(f"joint{k}" for k in range(K))
        self.joint_names = tuple(self.joint_names)
        if len(self.joint_names) != K:
            raise SchemaError(f"{len(self.joint_names)} joint names for K={K}")
        if self.parent is not None:
            self.parent = tuple(int(p) for p in self.parent)
            if len(self.parent) != K:
                raise SchemaError("parent map length differs from K")
        valid = self.coords.transpose(0, 3, 1, 2)[self.person_mask]
        if not np.all(np.isfinite(valid)):
            raise SchemaError("valid persons have non-finite joint coordinates")

    @property
    def T(self) -> int:
        return self.coords.shape[0]

    @property
    def K(self) -> int:
        return self.coords.shape[1]

    @property
    def C(self) -> int:
        return self.coords.shape[2]

    @property
    def N(self) -> int:
        return self.coords.shape[3]

    def joint(self, t: int, k: int, n: int) -> np.ndarray:
        return self.coords[t, k, :2, n]


@dataclass
class Patch:
    pixels: np.ndarray            # l x l x c
    source_joint: tuple[int, int, int] = (0, 0, 0)
    center: tuple[float, float] = (0.0, 0.0)

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def gray(self) -> np.ndarray:
        p = self.pixels
        if p.ndim == 2:
            return p
        if p.shape[-1] == 1:
            return p[..., 0]
        return p @ LUMA.astype(p.dtype)


@dataclass
class JfpSequence:
    """Flow patches ``T' x K x mu x mu x 2 x N`` (or 1 channel for appearance)."""

    flows: np.ndarray
    d: int
    mu: int

    @property
    def channels(self) -> int:
        return self.flows.shape[4]


@dataclass
class PackedJfpTensor:
    data: np.ndarray              # (C*T') x K x mu^2 x N
    config_hash: str = ""


@dataclass(frozen=True)
class JfpConfig:
    patch_size: int = 32
    mu: int = 8
    temporal_factor: int = 2
    target_len: int = 64
    tvl1: Tvl1Params = field(default_factory=Tvl1Params)

    def __post_init__(self):
        if self.patch_size < 2 or self.patch_size % 2:
            raise InputError("patch side must be an even integer >= 2")
        if self.mu < 1 or self.temporal_factor < 1 or self.target_len < 1:
            raise InputError("mu, temporal_factor and target_len must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(obj) -> str:
    """Short SHA-256 of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- cropping ----------------------------------------------------------------

def _crop_grid(joint, l: int) -> tuple[np.ndarray, np.ndarray]:
    x, y = float(joint[0]), float(joint[1])
    offs = np.arange(l, dtype=np.float64) - l / 2
    return np.meshgrid(x + offs, y + offs)


def crop_patch(frame: np.ndarray, joint, l: int, source_joint=(0, 0, 0)) -> Patch:
    """``l x l`` window centred on ``joint``; outside samples are zero."""
    if l < 2 or l % 2:
        raise InputError(f"patch side must be an even integer >= 2, got {l}")
    joint = np.asarray(joint, dtype=np.float64)[:2]
    if not np.all(np.isfinite(joint)):
        raise InputError("joint coordinate is not finite")
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = frame[..., None]
    xs, ys = _crop_grid(joint, l)
    chans = [bilinear_sample(frame[..., c], xs, ys, border="zero") for c in range(frame.shape[-1])]
    pixels = np.stack(chans, axis=-1).astype(frame.dtype if frame.dtype.kind == "f" else np.float64)
    return Patch(pixels=pixels, source_joint=tuple(source_joint), center=(float(joint[0]), float(joint[1])))


def crop_batch(gray: np.ndarray, joints: np.ndarray, l: int) -> np.ndarray:
    """Crop ``l x l`` grayscale patches around each row of ``joints`` (m x 2)."""
    joints = np.asarray(joints, dtype=np.float64)
    offs = np.arange(l, dtype=np.float64) - l / 2
    xs = joints[:, 0, None, None] + offs[None, None, :]
    ys = joints[:, 1, None, None] + offs[None, :, None]
    xs, ys = np.broadcast_arrays(xs, ys)
    return bilinear_sample(gray, xs, ys, border="zero")


# -- flow patches --------------------------------------------------------------

def zero_mean(flow: np.ndarray) -> np.ndarray:
    """Subtract the spatial mean over the last two axes."""
    return flow - flow.mean(axis=(-2, -1), keepdims=True)


def make_jfp(prev_patch: Patch, next_patch: Patch, params: Tvl1Params | None = None,
             *, normalize: bool = True) -> FlowField:
    """Residual flow between two joint-aligned patches, zero-mean per channel."""
    a, b = prev_patch.gray(), next_patch.gray()
    if a.shape != b.shape:
        raise DimensionError(f"patch shapes differ: {a.shape} vs {b.shape}")
    if prev_patch.source_joint[1:] != next_patch.source_joint[1:]:
        raise InputError("patches come from different joints")
    flow = estimate_flow_batch(a[None], b[None], params)
    u, v = flow.u[0], flow.v[0]
    if normalize:
        u, v = zero_mean(u), zero_mean(v)
    return FlowField(u, v)


def reconstruct_full_motion(vj, ur: FlowField) -> FlowField:
    """Full motion approximated as joint displacement plus residual field."""
    vj = np.asarray(vj, dtype=np.float64)
    if not (np.all(np.isfinite(vj)) and np.all(np.isfinite(ur.u)) and np.all(np.isfinite(ur.v))):
        raise InputError("non-finite motion input")
    return FlowField(ur.u + vj[0], ur.v + vj[1])


def joint_displacement(skel: SkeletonSequence, t: int, k: int, n: int, d: int) -> np.ndarray:
    """``J_k^{t+d} - J_k^t`` in pixels for person ``n``."""
    if not (0 <= t < skel.T and 0 <= t + d < skel.T and 0 <= k < skel.K and 0 <= n < skel.N):
        raise IndexError(f"(t={t}, d={d}, k={k}, n={n}) outside skeleton of shape {skel.coords.shape}")
    if not (skel.person_mask[t, n] and skel.person_mask[t + d, n]):
        raise IndexError(f"person {n} not valid at frames {t} and {t + d}")
    return skel.coords[t + d, k, :2, n] - skel.coords[t, k, :2, n]


# -- skeleton preprocessing --------------------------------------------------

_EYE_EAR = ("r_eye", "l_eye", "r_ear", "l_ear")


def select_joints_14(skel18: SkeletonSequence) -> SkeletonSequence:
    """Drop the eye and ear joints from an 18-joint OpenPose layout."""
    if skel18.K != 18:
        raise SchemaError(f"expected the 18-joint layout, got K={skel18.K}")
    names = [n.lower() for n in skel18.joint_names]
    drop = [i for i, n in enumerate(names) if "eye" in n or "ear" in n]
    if len(drop) != 4:
        drop = [OPENPOSE18_NAMES.index(n) for n in _EYE_EAR]
    keep = [i for i in range(18) if i not in drop]
    names_out = tuple(skel18.joint_names[i] for i in keep)
    if any(("eye" in n.lower() or "ear" in n.lower()) for n in names_out):
        names_out = tuple(OPENPOSE18_NAMES[i] for i in keep)
    parent = None
    if skel18.parent is not None:
        remap = {old: new for new, old in enumerate(keep)}
        parent = tuple(remap.get(skel18.parent[i], new) for new, i in enumerate(keep))
    return SkeletonSequence(coords=skel18.coords[:, keep], joint_names=names_out,
                            person_mask=skel18.person_mask.copy(), parent=parent)


def round_to_even(x: float) -> int:
    return 2 * int(np.floor(x / 2 + 0.5))


def adaptive_patch_size(skel: SkeletonSequence, alpha: float = 1.0, parent=None,
                        lo: int = 8, hi: int = 64) -> int:
    """Even patch side from the sample's mean 2-D bone length."""
    if not alpha > 0:
        raise InputError("alpha must be positive")
    parent = parent if parent is not None else skel.parent
    if parent is None:
        raise InputError("a parent map is needed to measure bones")
    parent = np.asarray(parent)
    child = np.flatnonzero(parent != np.arange(skel.K))
    if child.size == 0:
        raise InputError("skeleton has no bones")
    xy = skel.coords[:, :, :2, :]
    vec = xy[:, child] - xy[:, parent[child]]           # T x B x 2 x N
    lengths = np.linalg.norm(vec, axis=2)               # T x B x N
    valid = np.broadcast_to(skel.person_mask[:, None, :], lengths.shape) & np.isfinite(lengths)
    if not valid.any():
        raise InputError("no valid bones in sample")
    mean_len = float(lengths[valid].mean())
    return int(np.clip(round_to_even(alpha * mean_len), lo, hi))


def temporal_downsample(num_frames: int, factor: int = 2, target_len: int = 64) -> list[int]:
    """Strided frame indices cropped or padded (last index repeated) to ``target_len``."""
    if factor < 1:
        raise InputError("factor must be >= 1")
    if num_frames < 1:
        raise InputError("empty sequence")
    idx = list(range(0, num_frames, factor))[:target_len]
    idx += [idx[-1]] * (target_len - len(idx))
    return idx


# -- packing -----------------------------------------------------------------

def pack_jfp(jfp: JfpSequence | np.ndarray, config_hash: str = "") -> PackedJfpTensor:
    """``T' x K x mu x mu x C x N`` -> ``(C T') x K x mu^2 x N`` (rows ``C t + c``)."""
    flows = jfp.flows if isinstance(jfp, JfpSequence) else np.asarray(jfp)
    if flows.ndim != 6 or flows.shape[2] != flows.shape[3]:
        raise DimensionError(f"expected T x K x mu x mu x C x N, got {flows.shape}")
    T, K, mu, _, C, N = flows.shape
    data = flows.transpose(0, 4, 1, 2, 3, 5).reshape(T * C, K, mu * mu, N)
    return PackedJfpTensor(data=np.ascontiguousarray(data), config_hash=config_hash)


def unpack_jfp(packed: PackedJfpTensor | np.ndarray, channels: int = 2) -> np.ndarray:
    """Inverse of :func:`pack_jfp`."""
    data = packed.data if isinstance(packed, PackedJfpTensor) else np.asarray(packed)
    if data.ndim != 4:
        raise DimensionError(f"expected a 4-D packed tensor, got {data.shape}")
    TC, K, mm, N = data.shape
    mu = int(round(np.sqrt(mm)))
    if mu * mu != mm or TC % channels:
        raise DimensionError(f"cannot unpack shape {data.shape} with {channels} channels")
    flows = data.reshape(TC // channels, channels, K, mu, mu, N).transpose(0, 2, 3, 4, 1, 5)
    return np.ascontiguousarray(flows)


# -- pipeline ----------------------------------------------------------------

def _pair_indices(num_frames: int, cfg: JfpConfig) -> tuple[list[int], list[int]]:
    idx = temporal_downsample(num_frames, cfg.temporal_factor, cfg.target_len)
    nxt = [min(t + cfg.temporal_factor, num_frames - 1) for t in idx]
    return idx, nxt


def _flow_item(args):
    """One work item: every valid (k, n) patch pair for one frame pair."""
    g0, g1, j0, j1, cfg = args
    l, mu = cfg.patch_size, cfg.mu
    if len(j0) == 0:
        return np.zeros((0, mu, mu, 2), dtype=np.float32)
    p0 = crop_batch(g0, j0, l).astype(np.float32)
    p1 = crop_batch(g1, j1, l).astype(np.float32)
    flow = estimate_flow_batch(p0, p1, cfg.tvl1)
    small = resize_batch(np.stack([flow.u, flow.v], axis=-3), mu, mu)   # m x 2 x mu x mu
    small = zero_mean(small.astype(np.float64)).astype(np.float32)
    return small.transpose(0, 2, 3, 1)


def _appearance_item(args):
    g0, _g1, j0, _j1, cfg = args
    l, mu = cfg.patch_size, cfg.mu
    if len(j0) == 0:
        return np.zeros((0, mu, mu, 1), dtype=np.float32)
    p0 = crop_batch(g0, j0, l)
    return resize_batch(p0, mu, mu).astype(np.float32)[..., None]


def _run_items(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with cf.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _extract(frames: FrameSequence, skel: SkeletonSequence, cfg: JfpConfig, workers: int,
             modality: str) -> JfpSequence:
    if frames.T != skel.T:
        raise DimensionError(f"{frames.T} frames but {skel.T} skeleton frames")
    idx, nxt = _pair_indices(frames.T, cfg)
    unique = sorted(set(zip(idx, nxt)))
    items, slots = [], []
    for t0, t1 in unique:
        valid_n = [n for n in range(skel.N) if skel.person_mask[t0, n] and skel.person_mask[t1, n]]
        kn = [(k, n) for n in valid_n for k in range(skel.K)]
        j0 = np.array([skel.joint(t0, k, n) for k, n in kn]).reshape(-1, 2)
        j1 = np.array([skel.joint(t1, k, n) for k, n in kn]).reshape(-1, 2)
        items.append((frames.gray(t0), frames.gray(t1), j0, j1, cfg))
        slots.append(kn)
    fn = _flow_item if modality == "jfp" else _appearance_item
    results = _run_items(fn, items, workers)

    channels = 2 if modality == "jfp" else 1
    out = np.zeros((len(idx), skel.K, cfg.mu, cfg.mu, channels, skel.N), dtype=np.float32)
    by_pair = {}
    for pair, kn, res in zip(unique, slots, results):
        block = np.zeros((skel.K, cfg.mu, cfg.mu, channels, skel.N), dtype=np.float32)
        for (k, n), r in zip(kn, res):
            block[k, :, :, :, n] = r
        by_pair[pair] = block
    for i, pair in enumerate(zip(idx, nxt)):
        out[i] = by_pair[pair]
    return JfpSequence(flows=out, d=cfg.temporal_factor, mu=cfg.mu)


def extract_jfp(frames: FrameSequence, skel: SkeletonSequence, cfg: JfpConfig | None = None,
                workers: int = 1) -> JfpSequence:
    """JFP sequence for one sample.

    Frames are selected with :func:`temporal_downsample`; entry ``i`` holds the
    flow from frame ``idx[i]`` to ``min(idx[i] + d, T - 1)``. Absent persons
    give all-zero patches. Output does not depend on ``workers``.
    """
    return _extract(frames, skel, cfg or JfpConfig(), workers, "jfp")


def extract_jap(frames: FrameSequence, skel: SkeletonSequence, cfg: JfpConfig | None = None,
                workers: int = 1) -> JfpSequence:
    """Appearance patches (grayscale, downsampled to ``mu x mu``) at the selected frames."""
    return _extract(frames, skel, cfg or JfpConfig(), workers, "jap")
