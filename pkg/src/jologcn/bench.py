"""Synthetic two-stream benchmark: skeleton branch, JFP branch, JAP branch and fusion.

One run generates a labelled set, extracts every modality, trains each
branch on the training part and scores the held-out part.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import figure7_topology
from .jfp import JfpConfig, extract_jap, extract_jfp, pack_jfp
from .model import NetworkConfig
from .synth import CLASS_NAMES, SynthConfig, generate_samples, split_indices
from .twostream import (BranchDataset, BranchSpec, TrainParams, blend_scores, packed_features,
                        per_class_accuracy, predict, skeleton_features, top_k_accuracy, train_branch)


@dataclass(frozen=True)
class BenchmarkConfig:
    num_classes: int = 6
    train_per_class: int = 50
    val_per_class: int = 12
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(frames=9))
    jfp: JfpConfig = field(default_factory=lambda: JfpConfig(target_len=4))
    epochs: int = 30
    lr: float = 0.01


@dataclass
class BenchmarkResult:
    seed: int
    labels: np.ndarray
    scores: dict                  # variant -> (S_val, C) logits
    per_class: dict               # variant -> (C,) top-1
    top1: dict                    # variant -> overall top-1

    def pair_top1(self, variant: str, classes) -> float:
        sel = np.isin(self.labels, classes)
        return top_k_accuracy(self.scores[variant][sel], self.labels[sel], 1)


def build_features(cfg: BenchmarkConfig, seed: int, workers: int = 1) -> dict:
    """Per-modality inputs, labels and validation mask for one seed."""
    per_class = cfg.train_per_class + cfg.val_per_class
    topo = figure7_topology()
    feats = {"joints": [], "joints+bones": [], "jfp": [], "jap": []}
    labels = []
    size = (cfg.synth.height, cfg.synth.width)
    for s in generate_samples(cfg.num_classes, per_class, seed, cfg.synth):
        j = cfg.jfp
        feats["joints"].append(skeleton_features(s.skeleton, size, j.temporal_factor, j.target_len))
        feats["joints+bones"].append(skeleton_features(s.skeleton, size, j.temporal_factor, j.target_len, topo))
        feats["jfp"].append(packed_features(pack_jfp(extract_jfp(s.frames, s.skeleton, j, workers)).data))
        feats["jap"].append(packed_features(pack_jfp(extract_jap(s.frames, s.skeleton, j, workers)).data))
        labels.append(s.label)
    val = np.tile(split_indices(per_class, seed, val_per_class=cfg.val_per_class), cfg.num_classes)
    out = {k: np.stack(v) for k, v in feats.items()}
    out["labels"] = np.array(labels)
    out["val_mask"] = val
    return out


def train_variant(x: np.ndarray, labels: np.ndarray, val_mask: np.ndarray, modality: str,
                  cfg: BenchmarkConfig, seed: int):
    branch = "S" if modality.startswith("joints") else "P"
    net = NetworkConfig(in_channels=x.shape[1], T_in=x.shape[2], K=x.shape[3], N=x.shape[4],
                        num_classes=cfg.num_classes, seed=seed)
    spec = BranchSpec(branch, modality, figure7_topology(), net)
    data = BranchDataset(x, labels, modality, val_mask=val_mask)
    hp = TrainParams(epochs=cfg.epochs, lr=cfg.lr, lr_steps=(int(0.7 * cfg.epochs),), seed=seed)
    result = train_branch(spec, data, hp)
    return predict(result.network, data.val.x)


def run_benchmark(seed: int, cfg: BenchmarkConfig | None = None, workers: int = 1,
                  modalities=("joints", "jfp", "jap")) -> BenchmarkResult:
    """Train each modality and the S+JFP fusion; report held-out accuracies."""
    cfg = cfg or BenchmarkConfig()
    f = build_features(cfg, seed, workers)
    val = f["val_mask"]
    labels = f["labels"][val]
    scores = {m: train_variant(f[m], f["labels"], val, m, cfg, seed) for m in modalities}
    if "joints" in scores and "jfp" in scores:
        scores["fused"] = blend_scores(scores["joints"], scores["jfp"])
    per_class = {k: per_class_accuracy(v, labels) for k, v in scores.items()}
    top1 = {k: top_k_accuracy(v, labels, 1) for k, v in scores.items()}
    return BenchmarkResult(seed=seed, labels=labels, scores=scores, per_class=per_class, top1=top1)


def class_names(num_classes: int) -> list[str]:
    return list(CLASS_NAMES[:num_classes])
