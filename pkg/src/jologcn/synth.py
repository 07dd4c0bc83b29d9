"""Synthetic articulated actions with exact skeletons and analytic motion.

A figure is seven textured discs, one per joint, over a flat background. The
whole figure follows a global trajectory, the hands swing about the
shoulders, and selected joints carry a local motion program:

``none``      texture moves rigidly with the joint
``rotate``    texture spins about the joint at ``omega`` rad/frame
``pulsate``   disc and texture scale by ``1 + a sin(2 pi f t + phase)``
``scroll``    texture slides vertically inside a fixed disc at ``speed`` px/frame

The default catalogue has three class pairs. A1/A2 differ only by travel
direction. B1/B2 and C1/C2 share every kinematic and texture parameter for a
given sample index, so their skeleton streams are identical; C1/C2 also share
silhouettes, and only the texture flow tells them apart.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, InputError
from .graph import FIGURE7_NAMES, FIGURE7_PARENT
from .jfp import FrameSequence, SkeletonSequence
from .numerics import derive_seed, make_rng
from .tvl1 import FlowField

# joint offsets from the hip, in pixels (x right, y down)
FIGURE7_OFFSETS = np.array([
    [0.0, -26.0],    # head
    [-13.0, -12.0],  # l_shoulder
    [13.0, -12.0],   # r_shoulder
    [-30.0, 0.0],    # l_hand
    [30.0, 0.0],     # r_hand
    [0.0, 4.0],      # hip
    [0.0, 22.0],     # foot
])
HANDS = (3, 4)
HAND_PIVOT = {3: 1, 4: 2}
BACKGROUND = 0.1

CLASS_NAMES = (
    "A1_translate_left", "A2_translate_right",
    "B1_limb_rotation", "B2_limb_pulsation",
    "C1_scroll_up", "C2_scroll_down",
)


@dataclass(frozen=True)
class LocalMotion:
    kind: str = "none"
    omega: float = 0.0          # rotate: rad/frame
    amplitude: float = 0.0      # pulsate: relative radius change
    freq: float = 0.0           # pulsate: cycles/frame
    phase: float = 0.0
    speed: float = 0.0          # scroll: px/frame, positive = down

    def __post_init__(self):
        if self.kind not in ("none", "rotate", "pulsate", "scroll"):
            raise ConfigError(f"unknown local motion {self.kind!r}")
        if abs(self.omega) > 0.2 or not 0 <= self.amplitude < 0.5 or abs(self.speed) > 2.0:
            raise ConfigError("local motion parameter outside documented range")

    def scale(self, t):
        if self.kind != "pulsate":
            return np.ones_like(np.asarray(t, dtype=np.float64))
        return 1.0 + self.amplitude * np.sin(2 * np.pi * self.freq * np.asarray(t, np.float64) + self.phase)

    def angle(self, t):
        return self.omega * np.asarray(t, np.float64) if self.kind == "rotate" else 0.0 * np.asarray(t, np.float64)

    def scroll(self, t):
        return self.speed * np.asarray(t, np.float64) if self.kind == "scroll" else 0.0 * np.asarray(t, np.float64)


@dataclass(frozen=True)
class Trajectory:
    """Global figure path; ``s = t / (T - 1)`` is normalised time."""

    kind: str                     # "linear" | "bob" | "sway"
    origin: tuple[float, float]
    travel: float = 0.0           # linear: signed x travel over the clip
    amplitude: float = 0.0
    cycles: float = 1.0
    phase: float = 0.0
    swing_amp: float = 0.0        # hand swing about the shoulder, rad
    swing_freq: float = 0.0       # cycles/frame
    swing_phase: float = 0.0

    def center(self, t, T: int) -> np.ndarray:
        s = np.asarray(t, np.float64) / max(T - 1, 1)
        x0, y0 = self.origin
        x = np.full_like(s, x0)
        y = np.full_like(s, y0)
        if self.kind == "linear":
            x = x0 + self.travel * s
        elif self.kind == "bob":
            y = y0 + self.amplitude * np.sin(2 * np.pi * self.cycles * s + self.phase)
        elif self.kind == "sway":
            x = x0 + self.amplitude * np.sin(2 * np.pi * self.cycles * s + self.phase)
        else:
            raise ConfigError(f"unknown trajectory {self.kind!r}")
        return np.stack([x, y], axis=-1)

    def swing(self, t):
        t = np.asarray(t, np.float64)
        return self.swing_amp * np.sin(2 * np.pi * self.swing_freq * t + self.swing_phase)


@dataclass(frozen=True)
class ActionSpec:
    class_id: int
    name: str
    trajectory: Trajectory
    local: tuple[LocalMotion, ...]           # one per joint
    texture_seed: int


@dataclass(frozen=True)
class SynthConfig:
    frames: int = 128
    height: int = 96
    width: int = 128
    radius: float = 8.0
    margin: float = 16.0          # half the patch side: joints stay this far inside
    texture_waves: int = 24

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthSample:
    spec: ActionSpec
    config: SynthConfig
    frames: FrameSequence
    skeleton: SkeletonSequence
    label: int
    sample_id: str = ""
    textures: "list[_Texture]" = field(default_factory=list, repr=False)

    def joint_positions(self, t) -> np.ndarray:
        return joint_positions(self.spec, self.config, t)

    def displacement(self, t: int, k: int, d: int) -> np.ndarray:
        p = joint_positions(self.spec, self.config, np.array([t, t + d]))
        return p[1, k] - p[0, k]

    def velocity(self, t: float, k: int, h: float = 1e-4) -> np.ndarray:
        p = joint_positions(self.spec, self.config, np.array([t - h, t + h]))
        return (p[1, k] - p[0, k]) / (2 * h)


# -- kinematics ----------------------------------------------------------------

def _rot(a):
    c, s = np.cos(a), np.sin(a)
    return c, s


def joint_positions(spec: ActionSpec, cfg: SynthConfig, t) -> np.ndarray:
    """Exact joint coordinates, shape ``(len(t), K, 2)``."""
    t = np.atleast_1d(np.asarray(t, np.float64))
    center = spec.trajectory.center(t, cfg.frames)              # n x 2
    offs = np.broadcast_to(FIGURE7_OFFSETS, (t.size,) + FIGURE7_OFFSETS.shape).copy()
    ang = spec.trajectory.swing(t)
    c, s = _rot(ang)
    for hand, pivot in HAND_PIVOT.items():
        rel = FIGURE7_OFFSETS[hand] - FIGURE7_OFFSETS[pivot]
        sign = -1.0 if hand == 3 else 1.0  # arms swing in mirror image
        cs, sn = c, sign * s
        offs[:, hand, 0] = FIGURE7_OFFSETS[pivot, 0] + cs * rel[0] - sn * rel[1]
        offs[:, hand, 1] = FIGURE7_OFFSETS[pivot, 1] + sn * rel[0] + cs * rel[1]
    return center[:, None, :] + offs


def figure_skeleton(spec: ActionSpec, cfg: SynthConfig) -> SkeletonSequence:
    pos = joint_positions(spec, cfg, np.arange(cfg.frames))     # T x K x 2
    return SkeletonSequence(coords=pos[..., None], joint_names=FIGURE7_NAMES, parent=FIGURE7_PARENT)


# -- textures and rendering ----------------------------------------------------

class _Texture:
    """Smooth band-limited noise: a sum of random plane waves."""

    def __init__(self, rng: np.random.Generator, waves: int):
        wavelength = rng.uniform(4.0, 9.0, waves)
        theta = rng.uniform(0, np.pi, waves)
        k = 2 * np.pi / wavelength
        self.kx = k * np.cos(theta)
        self.ky = k * np.sin(theta)
        self.phase = rng.uniform(0, 2 * np.pi, waves)
        self.norm = 1.0 / np.sqrt(waves / 2.0)

    def __call__(self, qx, qy):
        arg = qx[..., None] * self.kx + qy[..., None] * self.ky + self.phase
        n = np.cos(arg).sum(axis=-1) * self.norm
        return 0.55 + 0.35 * np.tanh(0.8 * n)


def _textures(spec: ActionSpec, cfg: SynthConfig) -> list[_Texture]:
    rng = make_rng(spec.texture_seed)
    return [_Texture(rng, cfg.texture_waves) for _ in range(len(FIGURE7_OFFSETS))]


def _texture_coords(lm: LocalMotion, rel_x, rel_y, t):
    """Material (texture) coordinates of image offsets ``rel`` from the joint at time ``t``."""
    sc = lm.scale(t)
    ang = lm.angle(t)
    c, s = _rot(-ang)
    qx = (c * rel_x - s * rel_y) / sc
    qy = (s * rel_x + c * rel_y) / sc - lm.scroll(t)
    return qx, qy


def render_frame(spec: ActionSpec, cfg: SynthConfig, t: float, textures=None) -> np.ndarray:
    textures = textures or _textures(spec, cfg)
    img = np.full((cfg.height, cfg.width), BACKGROUND, dtype=np.float64)
    pos = joint_positions(spec, cfg, t)[0]
    for k, (cx, cy) in enumerate(pos):
        lm = spec.local[k]
        r = cfg.radius * float(lm.scale(t))
        x0 = max(int(np.floor(cx - r - 2)), 0)
        x1 = min(int(np.ceil(cx + r + 2)), cfg.width)
        y0 = max(int(np.floor(cy - r - 2)), 0)
        y1 = min(int(np.ceil(cy + r + 2)), cfg.height)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        rx = xx + 0.5 - cx
        ry = yy + 0.5 - cy
        alpha = np.clip(r + 0.5 - np.hypot(rx, ry), 0.0, 1.0)
        qx, qy = _texture_coords(lm, rx, ry, t)
        tex = textures[k](qx, qy)
        img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1 - alpha) + tex * alpha
    return img


def render_sequence(spec: ActionSpec, cfg: SynthConfig) -> FrameSequence:
    textures = _textures(spec, cfg)
    frames = np.stack([render_frame(spec, cfg, t, textures) for t in range(cfg.frames)])
    return FrameSequence(frames=frames.astype(np.float32)[..., None])


def analytic_flow_at(spec: ActionSpec, cfg: SynthConfig, t: float, d: float, xs, ys) -> FlowField:
    """Closed-form displacement from ``t`` to ``t + d`` of the material at ``(xs, ys)``.

    Points outside every disc belong to the static background.
    """
    xs = np.asarray(xs, np.float64)
    ys = np.asarray(ys, np.float64)
    u = np.zeros(np.broadcast_shapes(xs.shape, ys.shape))
    v = np.zeros_like(u)
    p = joint_positions(spec, cfg, np.array([t, t + d]))
    for k in range(p.shape[1]):
        lm = spec.local[k]
        c0, c1 = p[0, k], p[1, k]
        rx, ry = xs - c0[0], ys - c0[1]
        inside = np.hypot(rx, ry) <= cfg.radius * float(lm.scale(t))
        if lm.kind == "rotate":
            c, s = _rot(lm.omega * d)
            nx, ny = c * rx - s * ry, s * rx + c * ry
        elif lm.kind == "pulsate":
            ratio = float(lm.scale(t + d) / lm.scale(t))
            nx, ny = ratio * rx, ratio * ry
        elif lm.kind == "scroll":
            nx, ny = rx, ry + lm.speed * d
        else:
            nx, ny = rx, ry
        du = c1[0] + nx - xs
        dv = c1[1] + ny - ys
        u = np.where(inside, du, u)
        v = np.where(inside, dv, v)
    return FlowField(u, v)


def analytic_flow(sample: SynthSample, t: int, region=None, d: int = 1) -> FlowField:
    """Analytic flow of ``sample`` from frame ``t`` to ``t + d``.

    ``region`` is ``(x0, y0, h, w)`` in pixels (default: the whole frame); the
    field is sampled at pixel centres.
    """
    cfg = sample.config
    if not (0 <= t and t + d < cfg.frames):
        raise IndexError(f"t={t}, d={d} outside a {cfg.frames}-frame sample")
    x0, y0, h, w = region if region is not None else (0, 0, cfg.height, cfg.width)
    yy, xx = np.mgrid[y0:y0 + h, x0:x0 + w]
    return analytic_flow_at(sample.spec, cfg, t, d, xx + 0.5, yy + 0.5)


def figure_mask(sample: SynthSample, t: int, inset: float = 1.0) -> np.ndarray:
    """Pixels whose centre lies at least ``inset`` px inside some disc at frame ``t``."""
    cfg = sample.config
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width] + 0.5
    pos = joint_positions(sample.spec, cfg, t)[0]
    m = np.zeros((cfg.height, cfg.width), dtype=bool)
    for k, (cx, cy) in enumerate(pos):
        r = cfg.radius * float(sample.spec.local[k].scale(t))
        m |= np.hypot(xx - cx, yy - cy) <= r - inset
    return m


# -- class catalogue -------------------------------------------------------------

def _local_for(class_name: str, rng: np.random.Generator) -> tuple[LocalMotion, ...]:
    none = LocalMotion()
    omega = rng.uniform(0.08, 0.12) * rng.choice([-1.0, 1.0])
    amp = rng.uniform(0.15, 0.22)
    freq = rng.uniform(1 / 10, 1 / 7)
    phase = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.45, 0.7)
    if class_name.startswith("B1"):
        lm = LocalMotion("rotate", omega=omega)
    elif class_name.startswith("B2"):
        lm = LocalMotion("pulsate", amplitude=amp, freq=freq, phase=phase)
    elif class_name.startswith("C1"):
        lm = LocalMotion("scroll", speed=-speed)
    elif class_name.startswith("C2"):
        lm = LocalMotion("scroll", speed=speed)
    else:
        lm = none
    return tuple(lm if k in HANDS else none for k in range(len(FIGURE7_OFFSETS)))


def _figure_extent(traj: Trajectory, cfg: SynthConfig, local) -> tuple[np.ndarray, np.ndarray]:
    spec = ActionSpec(0, "", replace(traj, origin=(0.0, 0.0)), local, 0)
    pos = joint_positions(spec, cfg, np.arange(cfg.frames))
    return pos.reshape(-1, 2).min(axis=0), pos.reshape(-1, 2).max(axis=0)


def make_action_spec(class_id: int, index: int, seed: int, cfg: SynthConfig) -> ActionSpec:
    """ActionSpec for sample ``index`` of ``class_id``; pair classes share all draws."""
    if not 0 <= class_id < len(CLASS_NAMES):
        raise ConfigError(f"class id {class_id} outside the {len(CLASS_NAMES)}-class catalogue")
    name = CLASS_NAMES[class_id]
    group = class_id // 2
    rng = make_rng(derive_seed(seed, group, index, 0))
    travel = rng.uniform(12.0, 22.0)
    amp = rng.uniform(3.0, 6.0)
    cycles = rng.uniform(0.8, 1.4)
    phase = rng.uniform(0, 2 * np.pi)
    swing = dict(swing_amp=rng.uniform(0.03, 0.08), swing_freq=rng.uniform(1 / 64, 1 / 40),
                 swing_phase=rng.uniform(0, 2 * np.pi))
    if group == 0:
        traj = Trajectory("linear", (0.0, 0.0), travel=-travel if class_id == 0 else travel, **swing)
    elif group == 1:
        traj = Trajectory("bob", (0.0, 0.0), amplitude=amp, cycles=cycles, phase=phase, **swing)
    else:
        traj = Trajectory("sway", (0.0, 0.0), amplitude=amp, cycles=cycles, phase=phase, **swing)
    local = _local_for(name, make_rng(derive_seed(seed, group, index, 1)))

    lo, hi = _figure_extent(traj, cfg, local)
    xmin, xmax = cfg.margin - lo[0], cfg.width - cfg.margin - hi[0]
    ymin, ymax = cfg.margin - lo[1], cfg.height - cfg.margin - hi[1]
    if xmin > xmax or ymin > ymax:
        raise ConfigError(f"figure path does not fit a {cfg.width}x{cfg.height} frame with margin {cfg.margin}")
    origin = (float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)))
    traj = replace(traj, origin=origin)
    return ActionSpec(class_id=class_id, name=name, trajectory=traj, local=local,
                      texture_seed=derive_seed(seed, group, index, 2))


def generate_sample(class_id: int, index: int, seed: int, cfg: SynthConfig | None = None) -> SynthSample:
    cfg = cfg or SynthConfig()
    spec = make_action_spec(class_id, index, seed, cfg)
    return SynthSample(spec=spec, config=cfg, frames=render_sequence(spec, cfg),
                       skeleton=figure_skeleton(spec, cfg), label=class_id,
                       sample_id=f"c{class_id}_i{index:04d}", textures=_textures(spec, cfg))


def generate_samples(num_classes: int, per_class: int, seed: int, cfg: SynthConfig | None = None):
    """Yield samples class by class, index by index."""
    if num_classes < 2:
        raise ConfigError("need at least two classes")
    if num_classes > len(CLASS_NAMES):
        raise ConfigError(f"catalogue has {len(CLASS_NAMES)} classes, {num_classes} requested")
    if per_class < 1:
        raise InputError("per_class must be >= 1")
    cfg = cfg or SynthConfig()
    for c in range(num_classes):
        for i in range(per_class):
            yield generate_sample(c, i, seed, cfg)


def split_indices(per_class: int, seed: int, val_fraction: float = 0.2, val_per_class: int | None = None) -> np.ndarray:
    """Boolean mask over sample indices marking the validation part.

    The same indices are held out in every class, so paired classes keep
    their pairs on one side of the split.
    """
    n_val = val_per_class if val_per_class is not None else int(round(val_fraction * per_class))
    if not 0 <= n_val <= per_class:
        raise InputError("validation count outside [0, per_class]")
    order = make_rng(derive_seed(seed, 0x5EED)).permutation(per_class)
    mask = np.zeros(per_class, dtype=bool)
    mask[order[:n_val]] = True
    return mask
