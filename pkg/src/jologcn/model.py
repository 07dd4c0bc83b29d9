"""Graph-convolutional classifier with explicit forward/backward passes.

Activations flow as ``(B*N, C, T, K)`` arrays: persons are folded into the
batch axis until pooling, where per-person features are summed.

Each block is a masked spatial graph convolution
``ReLU(W (X (A_norm * M)) + b)`` followed by a strided temporal convolution
over frames and a ReLU.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, InputError, NumericError
from .graph import GraphTopology
from .numerics import make_rng

DEFAULT_BLOCKS = ((16, 1), (32, 1), (32, 2), (64, 2))


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int
    T_in: int
    K: int
    N: int = 1
    num_classes: int = 6
    blocks: tuple = DEFAULT_BLOCKS
    kt: int = 5
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(int(v) for v in b) for b in self.blocks))
        if not self.blocks:
            raise InputError("need at least one block")
        if self.num_classes < 2:
            raise InputError("need at least two classes")
        if self.kt < 1 or self.kt % 2 == 0:
            raise InputError("temporal kernel width must be odd")
        if not 0 <= self.dropout < 1:
            raise InputError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**{**d, "blocks": tuple(tuple(b) for b in d["blocks"])})


# -- layers --------------------------------------------------------------------

class SpatialGCN:
    """Masked graph convolution over joints, with ReLU."""

    def __init__(self, d_in: int, d_out: int, A_norm: np.ndarray, rng: np.random.Generator, dtype=np.float32):
        K = A_norm.shape[0]
        self.A_norm = np.asarray(A_norm, dtype=dtype)
        self.params = {
            "W": (rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in)).astype(dtype),
            "M": np.ones((K, K), dtype=dtype),
            "b": np.zeros(d_out, dtype=dtype),
        }
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        W, M, b = self.params["W"], self.params["M"], self.params["b"]
        if x.ndim != 4 or x.shape[1] != W.shape[1] or x.shape[3] != M.shape[0]:
            raise DimensionError(f"spatial GCN expects (*, {W.shape[1]}, T, {M.shape[0]}), got {x.shape}")
        G = self.A_norm * M
        z = x @ G                                             # (B, C, T, K)
        pre = np.einsum("oc,bctk->botk", W, z, optimize=True) + b[None, :, None, None]
        self._cache = (x, z, G, pre > 0)
        return np.maximum(pre, 0)

    def backward(self, gy: np.ndarray) -> tuple[np.ndarray, dict]:
        x, z, G, active = self._cache
        W = self.params["W"]
        gpre = gy * active
        gW = np.einsum("botk,bctk->oc", gpre, z, optimize=True)
        gb = gpre.sum(axis=(0, 2, 3))
        gz = np.einsum("oc,botk->bctk", W, gpre, optimize=True)
        gx = gz @ G.T
        gG = np.einsum("bctk,bctj->kj", x, gz, optimize=True)
        return gx, {"W": gW, "M": gG * self.A_norm, "b": gb}


class TemporalConv:
    """Convolution along frames with kernel ``(d_out, d_in, kt)``, zero padding ``(kt-1)/2``."""

    def __init__(self, d_in: int, d_out: int, kt: int, stride: int, rng: np.random.Generator, dtype=np.float32):
        self.kt, self.stride, self.pad = kt, stride, (kt - 1) // 2
        self.params = {
            "W": (rng.standard_normal((d_out, d_in, kt)) * np.sqrt(2.0 / (d_in * kt))).astype(dtype),
            "b": np.zeros(d_out, dtype=dtype),
        }
        self._cache = None

    def out_len(self, T: int) -> int:
        return (T + 2 * self.pad - self.kt) // self.stride + 1

    def _taps(self, T: int):
        To = self.out_len(T)
        return To, [slice(i, i + self.stride * (To - 1) + 1, self.stride) for i in range(self.kt)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        W, b = self.params["W"], self.params["b"]
        if x.ndim != 4 or x.shape[1] != W.shape[1]:
            raise DimensionError(f"temporal conv expects (*, {W.shape[1]}, T, K), got {x.shape}")
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (0, 0)))
        To, taps = self._taps(x.shape[2])
        y = np.zeros((x.shape[0], W.shape[0], To, x.shape[3]), dtype=x.dtype)
        for i, sl in enumerate(taps):
            y += np.einsum("oc,bctk->botk", W[:, :, i], xp[:, :, sl], optimize=True)
        y += b[None, :, None, None]
        self._cache = (xp, x.shape)
        return y

    def backward(self, gy: np.ndarray) -> tuple[np.ndarray, dict]:
        xp, shape = self._cache
        W = self.params["W"]
        To, taps = self._taps(shape[2])
        gW = np.zeros_like(W)
        gxp = np.zeros_like(xp)
        for i, sl in enumerate(taps):
            gW[:, :, i] = np.einsum("botk,bctk->oc", gy, xp[:, :, sl], optimize=True)
            gxp[:, :, sl] += np.einsum("oc,botk->bctk", W[:, :, i], gy, optimize=True)
        gx = gxp[:, :, self.pad:self.pad + shape[2]]
        return gx, {"W": gW, "b": gy.sum(axis=(0, 2, 3))}


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, zero_init=False):
        if zero_init:
            W = np.zeros((d_out, d_in), dtype=dtype)
        else:
            W = (rng.standard_normal((d_out, d_in)) * np.sqrt(1.0 / d_in)).astype(dtype)
        self.params = {"W": W, "b": np.zeros(d_out, dtype=dtype)}
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, gy: np.ndarray) -> tuple[np.ndarray, dict]:
        return gy @ self.params["W"], {"W": gy.T @ self._x, "b": gy.sum(axis=0)}


def relu_backward(gy, y):
    return gy * (y > 0)


# -- network -------------------------------------------------------------------

@dataclass
class ModelState:
    params: dict
    momentum: dict = field(default_factory=dict)
    step: int = 0


class Network:
    """Stack of (spatial GCN, temporal conv, ReLU) blocks, pooling and a linear head."""

    def __init__(self, config: NetworkConfig, topo: GraphTopology, dtype=np.float32,
                 zero_init_classifier: bool = False):
        if topo.K != config.K:
            raise DimensionError(f"topology has {topo.K} joints, config expects {config.K}")
        self.config = config
        self.topo = topo
        self.dtype = dtype
        rng = make_rng(config.seed)
        self.layers: dict[str, object] = {}
        c_in = config.in_channels
        self.block_names = []
        for i, (c_out, stride) in enumerate(config.blocks):
            self.layers[f"blocks.{i}.gcn"] = SpatialGCN(c_in, c_out, topo.A_norm, rng, dtype)
            self.layers[f"blocks.{i}.tcn"] = TemporalConv(c_out, c_out, config.kt, stride, rng, dtype)
            self.block_names.append((f"blocks.{i}.gcn", f"blocks.{i}.tcn"))
            c_in = c_out
        self.layers["fc"] = Linear(c_in, config.num_classes, rng, dtype, zero_init=zero_init_classifier)
        self.dropout_rng = make_rng(config.seed + 1)
        self.training = False
        self._cache = None

    # parameters are views into the layers so updates apply in place
    @property
    def params(self) -> dict:
        return {f"{name}.{p}": arr for name, layer in self.layers.items() for p, arr in layer.params.items()}

    def set_params(self, params: dict) -> None:
        for key, arr in params.items():
            name, p = key.rsplit(".", 1)
            target = self.layers[name].params[p]
            if target.shape != np.shape(arr):
                raise DimensionError(f"parameter {key}: expected {target.shape}, got {np.shape(arr)}")
            target[...] = arr

    def state(self) -> ModelState:
        return ModelState(params=self.params)

    def _fold(self, batch: np.ndarray) -> np.ndarray:
        cfg = self.config
        if batch.ndim != 5 or batch.shape[1:] != (cfg.in_channels, cfg.T_in, cfg.K, cfg.N):
            raise DimensionError(
                f"expected batch (B, {cfg.in_channels}, {cfg.T_in}, {cfg.K}, {cfg.N}), got {batch.shape}")
        B = batch.shape[0]
        return np.ascontiguousarray(batch.transpose(0, 4, 1, 2, 3)).reshape(B * cfg.N, cfg.in_channels, cfg.T_in, cfg.K)

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Logits ``(B, num_classes)`` for a ``(B, C_in, T_in, K, N)`` batch."""
        batch = np.asarray(batch, dtype=self.dtype)
        B = batch.shape[0]
        h = self._fold(batch)
        outs = []
        for gname, tname in self.block_names:
            h = self.layers[gname].forward(h)
            h = np.maximum(self.layers[tname].forward(h), 0)
            outs.append(h)
        pooled_shape = h.shape
        feat = h.mean(axis=(2, 3)).reshape(B, self.config.N, -1).sum(axis=1)
        keep = None
        if self.training and self.config.dropout > 0:
            p = self.config.dropout
            keep = (self.dropout_rng.random(feat.shape) >= p).astype(self.dtype) / (1 - p)
            feat = feat * keep
        self._cache = (B, outs, pooled_shape, keep)
        return self.layers["fc"].forward(feat)

    def backward(self, g_logits: np.ndarray) -> tuple[dict, np.ndarray]:
        """Parameter gradients and the input gradient for the last forward."""
        B, outs, pooled_shape, keep = self._cache
        grads = {}
        g, gp = self.layers["fc"].backward(g_logits)
        grads.update({f"fc.{k}": v for k, v in gp.items()})
        if keep is not None:
            g = g * keep
        _, C, T, K = pooled_shape
        N = self.config.N
        g = np.repeat(g[:, None, :], N, axis=1).reshape(B * N, C)
        g = np.broadcast_to((g / (T * K))[:, :, None, None], pooled_shape).astype(self.dtype)
        for (gname, tname), out in zip(reversed(self.block_names), reversed(outs)):
            g = relu_backward(g, out)
            g, gp = self.layers[tname].backward(g)
            grads.update({f"{tname}.{k}": v for k, v in gp.items()})
            g, gp = self.layers[gname].backward(g)
            grads.update({f"{gname}.{k}": v for k, v in gp.items()})
        cfg = self.config
        gx = g.reshape(B, N, cfg.in_channels, cfg.T_in, cfg.K).transpose(0, 2, 3, 4, 1)
        return grads, gx


# -- loss and optimiser ----------------------------------------------------------

def one_hot(labels, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError("label out of range")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy against one-hot rows, and its logit gradient."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if labels.shape != logits.shape:
        raise InputError(f"labels {labels.shape} do not match logits {logits.shape}")
    if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)):
        raise InputError("labels must be one-hot rows")
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    loss = float(-(labels * log_p).sum() / B)
    grad = (np.exp(log_p) - labels) / B
    return loss, grad.astype(logits.dtype, copy=False)


def sgd_step(state: ModelState, grads: dict, lr: float, momentum: float = 0.9,
             weight_decay: float = 1e-4) -> ModelState:
    """In-place momentum SGD: ``v = m v + g + wd p``; ``p -= lr v``."""
    if not lr > 0:
        raise InputError("learning rate must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NumericError(f"gradient of {name} has {bad} non-finite entries at step {state.step}")
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            continue
        v = state.momentum.get(name)
        upd = g + weight_decay * p
        v = upd if v is None else momentum * v + upd
        state.momentum[name] = v.astype(p.dtype, copy=False)
        p -= (lr * state.momentum[name]).astype(p.dtype, copy=False)
    state.step += 1
    return state
