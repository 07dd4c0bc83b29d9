"""Two independently trained branches and their late fusion.

The S branch reads joint coordinates (optionally with bones); the P branch
reads packed JFP (or JAP) tensors with ``mu^2`` channels. Each branch is
trained on its own; at test time their scores are blended linearly.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InputError, SchemaError
from .graph import GraphTopology, bones
from .jfp import SkeletonSequence, temporal_downsample
from .model import Network, NetworkConfig, cross_entropy, one_hot, sgd_step, softmax
from .numerics import make_rng

MODALITIES = {"S": ("joints", "joints+bones"), "P": ("jap", "jfp")}


@dataclass(frozen=True)
class BranchSpec:
    branch_id: str
    modality: str
    topology: GraphTopology
    net: NetworkConfig

    def __post_init__(self):
        if self.branch_id not in MODALITIES:
            raise SchemaError(f"branch must be S or P, got {self.branch_id!r}")
        if self.modality not in MODALITIES[self.branch_id]:
            raise SchemaError(f"modality {self.modality!r} does not feed branch {self.branch_id}")
        if self.topology.K != self.net.K:
            raise SchemaError(f"topology has {self.topology.K} joints, network expects {self.net.K}")
        if self.modality == "joints+bones" and self.net.in_channels % 2:
            raise SchemaError("joints+bones input needs an even channel count")


@dataclass
class BranchDataset:
    """Network-ready inputs ``(S, C_in, T_in, K, N)`` plus labels and split."""

    x: np.ndarray
    labels: np.ndarray
    modality: str
    ids: tuple = ()
    val_mask: np.ndarray | None = None
    feature_hash: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.x.ndim != 5 or self.x.shape[0] != self.labels.shape[0]:
            raise DimensionError(f"inputs {self.x.shape} do not match {self.labels.shape[0]} labels")
        if self.val_mask is None:
            self.val_mask = np.zeros(len(self.labels), dtype=bool)
        self.val_mask = np.asarray(self.val_mask, dtype=bool)
        if not self.ids:
            self.ids = tuple(str(i) for i in range(len(self.labels)))
        self.ids = tuple(self.ids)

    def subset(self, mask) -> "BranchDataset":
        mask = np.asarray(mask, dtype=bool)
        return BranchDataset(self.x[mask], self.labels[mask], self.modality,
                             tuple(i for i, m in zip(self.ids, mask) if m), self.val_mask[mask], self.feature_hash)

    @property
    def train(self) -> "BranchDataset":
        return self.subset(~self.val_mask)

    @property
    def val(self) -> "BranchDataset":
        return self.subset(self.val_mask)


# -- input features ------------------------------------------------------------

def skeleton_features(skel: SkeletonSequence, frame_size: tuple[int, int], factor: int = 2,
                      target_len: int = 64, topology: GraphTopology | None = None) -> np.ndarray:
    """S-branch input ``(C, T', K, N)`` at the frames used for JFPs.

    Coordinates are centred on the frame and divided by half its larger side.
    With ``topology`` the bone vectors are appended as extra channels.
    """
    idx = temporal_downsample(skel.T, factor, target_len)
    H, W = frame_size
    coords = skel.coords[idx, :, :2].copy()
    coords[:, :, 0] -= W / 2.0
    coords[:, :, 1] -= H / 2.0
    coords /= max(H, W) / 2.0
    coords *= skel.person_mask[idx][:, None, None, :]
    if topology is not None:
        coords = np.concatenate([coords, bones(coords, topology)], axis=2)
    return coords.transpose(2, 0, 1, 3).astype(np.float32)


def packed_features(packed: np.ndarray) -> np.ndarray:
    """P-branch input ``(mu^2, C*T', K, N)`` from a packed ``(C*T') x K x mu^2 x N`` tensor."""
    packed = np.asarray(packed)
    if packed.ndim != 4:
        raise DimensionError(f"packed tensor must be 4-D, got {packed.shape}")
    return np.ascontiguousarray(packed.transpose(2, 0, 1, 3), dtype=np.float32)


# -- training ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainParams:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_steps: tuple = ()          # epochs at which lr is multiplied by lr_decay
    lr_decay: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise InputError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        object.__setattr__(self, "lr_steps", tuple(int(e) for e in self.lr_steps))

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** sum(epoch >= e for e in self.lr_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_steps"] = list(self.lr_steps)
        return d


@dataclass
class TrainResult:
    network: Network              # holds the best-validation parameters
    initial: dict                 # parameters before the first step
    log: list = field(default_factory=list)
    best_epoch: int = -1


def _check_modality(spec: BranchSpec, data: BranchDataset) -> None:
    if data.modality != spec.modality:
        raise SchemaError(f"dataset modality {data.modality!r} does not match branch modality {spec.modality!r}")
    cfg = spec.net
    want = (cfg.in_channels, cfg.T_in, cfg.K, cfg.N)
    if data.x.shape[1:] != want:
        raise SchemaError(f"dataset inputs {data.x.shape[1:]} do not match network layout {want}")


def predict(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Logits for every sample, evaluated in inference mode."""
    was = net.training
    net.training = False
    try:
        out = [net.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    finally:
        net.training = was
    if not out:
        return np.zeros((0, net.config.num_classes), dtype=np.float32)
    return np.concatenate(out).astype(np.float32)


def train_branch(spec: BranchSpec, data: BranchDataset, hp: TrainParams | None = None,
                 log_path=None) -> TrainResult:
    """Mini-batch SGD on softmax cross-entropy for one branch.

    Each epoch appends ``{"epoch", "loss", "top1", "val_top1", "lr"}`` to the
    log (``top1`` on the training batches as seen). The returned network
    carries the parameters of the epoch with the best validation top-1
    (earliest on ties; the last epoch when there is no validation part).
    """
    hp = hp or TrainParams()
    _check_modality(spec, data)
    net = Network(spec.net, spec.topology)
    initial = {k: v.copy() for k, v in net.params.items()}
    train, val = data.train, data.val
    result = TrainResult(network=net, initial=initial)
    if hp.epochs == 0 or len(train.labels) == 0:
        return result
    state = net.state()
    rng = make_rng(hp.seed)
    C = spec.net.num_classes
    best_score, best_params = -1.0, None
    sink = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(hp.epochs):
            lr = hp.lr_at(epoch)
            order = rng.permutation(len(train.labels))
            net.training = True
            total, correct = 0.0, 0
            for s in range(0, len(order), hp.batch_size):
                b = order[s:s + hp.batch_size]
                logits = net.forward(train.x[b])
                loss, g = cross_entropy(logits, one_hot(train.labels[b], C, logits.dtype))
                grads, _ = net.backward(g)
                sgd_step(state, grads, lr, hp.momentum, hp.weight_decay)
                total += loss * len(b)
                correct += int((logits.argmax(axis=1) == train.labels[b]).sum())
            net.training = False
            rec = {"epoch": epoch, "loss": total / len(order), "top1": correct / len(order), "lr": lr}
            if len(val.labels):
                rec["val_top1"] = top_k_accuracy(predict(net, val.x), val.labels, 1)
                score = rec["val_top1"]
            else:
                score = float(epoch)
            if score > best_score:
                best_score, result.best_epoch = score, epoch
                best_params = {k: v.copy() for k, v in net.params.items()}
            result.log.append(rec)
            if sink:
                sink.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if sink:
            sink.close()
    net.set_params(best_params)
    return result


# -- fusion and metrics ----------------------------------------------------------

def blend_scores(s1: np.ndarray, s2: np.ndarray, w1: float = 0.5, w2: float = 0.5,
                 use_softmax: bool = False) -> np.ndarray:
    """``w1 * s1 + w2 * s2``; raw logits by default, class probabilities with ``use_softmax``."""
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.shape != s2.shape or s1.ndim != 2:
        raise DimensionError(f"score shapes differ: {s1.shape} vs {s2.shape}")
    if not (np.isfinite(w1) and np.isfinite(w2)):
        raise InputError("blend weights must be finite")
    if use_softmax:
        s1, s2 = softmax(s1), softmax(s2)
    return w1 * s1 + w2 * s2


def _check_labels(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= scores.shape[1]):
        raise InputError("label out of range")
    return scores, labels


def ranking(scores: np.ndarray) -> np.ndarray:
    """Class indices by decreasing score; equal scores keep the lower index first."""
    return np.argsort(-np.asarray(scores), axis=1, kind="stable")


def top_k_accuracy(scores: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    scores, labels = _check_labels(scores, labels)
    if not 1 <= k <= scores.shape[1]:
        raise InputError(f"k must lie in [1, {scores.shape[1]}]")
    if labels.size == 0:
        return float("nan")
    top = ranking(scores)[:, :k]
    return float((top == labels[:, None]).any(axis=1).mean())


def per_class_accuracy(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Top-1 accuracy per class; classes without samples give NaN and a warning."""
    scores, labels = _check_labels(scores, labels)
    pred = ranking(scores)[:, 0]
    out = np.full(scores.shape[1], np.nan)
    for c in range(scores.shape[1]):
        sel = labels == c
        if sel.any():
            out[c] = float((pred[sel] == c).mean())
        else:
            warnings.warn(f"class {c} has no samples; accuracy reported as NaN", RuntimeWarning, stacklevel=2)
    return out


def per_class_table(variants: dict, class_names=None) -> str:
    """CSV comparing per-class accuracies across variants (one column each)."""
    names = list(variants)
    C = len(next(iter(variants.values()))) if variants else 0
    class_names = list(class_names) if class_names is not None else [str(c) for c in range(C)]
    lines = [",".join(["class"] + names)]
    for c in range(C):
        cells = ["nan" if np.isnan(variants[n][c]) else f"{variants[n][c]:.4f}" for n in names]
        lines.append(",".join([class_names[c]] + cells))
    return "\n".join(lines) + "\n"


def write_per_class_csv(path, variants: dict, class_names=None) -> None:
    Path(path).write_text(per_class_table(variants, class_names))
