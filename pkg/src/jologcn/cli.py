"""Command-line entry point: ``jolo <command> [flags]``.

Commands
--------
synth-gen    render a labelled synthetic dataset to disk
extract-jfp  write one JFPC tensor per sample (JFP or JAP modality)
train        train one branch; writes a JCKP checkpoint and a JSONL log
eval         score a checkpoint; writes scores, top-1/top-5 and per-class CSV
blend        fuse two score files linearly

Exit codes: 0 success, 1 runtime failure, 2 usage error. The default worker
count comes from the ``JOLO_WORKERS`` environment variable (else 1).
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .errors import HashMismatchError, JoloError, SchemaError
from .graph import build_topology, figure7_topology, load_topology, save_topology
from .jfp import JfpConfig, config_hash, extract_jap, extract_jfp, pack_jfp
from .model import DEFAULT_BLOCKS, Network, NetworkConfig
from .synth import CLASS_NAMES, SynthConfig, generate_sample, split_indices
from .tvl1 import Tvl1Params
from .twostream import (MODALITIES, BranchDataset, BranchSpec, TrainParams, blend_scores,
                        packed_features, per_class_accuracy, predict, skeleton_features,
                        top_k_accuracy, train_branch, write_per_class_csv)

WORKERS_ENV = "JOLO_WORKERS"


@dataclass
class RunConfig:
    """Defaults shared by the commands."""

    patch_size: int = 32
    mu: int = 8
    temporal_factor: int = 2
    target_len: int = 64
    joint_preset: str = "figure7"
    tvl1: Tvl1Params = field(default_factory=Tvl1Params)
    blocks: tuple = DEFAULT_BLOCKS
    blend_weights: tuple = (0.5, 0.5)
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_env(cls) -> "RunConfig":
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = max(1, int(raw))
        except ValueError:
            workers = 1
        return cls(workers=workers)


class CommandError(JoloError):
    """A command could not complete."""


# -- helpers -------------------------------------------------------------------

def _load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise CommandError(f"{path}: dataset manifest not found")
    return formats.read_json(path)


def _parse_blocks(text: str) -> tuple:
    try:
        return tuple(tuple(int(v) for v in part.split(":")) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"blocks must look like 16:1,32:2 (got {text!r})") from None


def _skeleton_hash(manifest: dict, modality: str, factor: int, target_len: int) -> str:
    return config_hash({"modality": modality, "temporal_factor": factor, "target_len": target_len,
                        "frame_size": manifest["frame_size"], "K": manifest["K"]})


def _load_inputs(args, manifest: dict, modality: str, factor: int, target_len: int):
    """``(ids, x, labels, splits, feature_hash)`` for every usable sample."""
    data_dir = Path(args.data)
    samples = manifest["samples"]
    if modality in MODALITIES["S"]:
        topo = load_topology(data_dir / "topology.json") if modality == "joints+bones" else None
        fhash = _skeleton_hash(manifest, modality, factor, target_len)
        xs = [skeleton_features(formats.load_skeleton(data_dir / "samples" / s["id"] / "skeleton.json"),
                                tuple(manifest["frame_size"]), factor, target_len, topo) for s in samples]
        kept = samples
    else:
        if not args.features:
            raise CommandError(f"modality {modality} needs --features")
        feat_dir = Path(args.features)
        fman = formats.read_json(feat_dir / "manifest.json")
        if fman["modality"] != modality:
            raise SchemaError(f"{feat_dir} holds {fman['modality']} tensors, not {modality}")
        if fman["dataset_hash"] != manifest["config_hash"]:
            raise HashMismatchError(f"{feat_dir} was extracted from a dataset with hash "
                                    f"{fman['dataset_hash']}, not {manifest['config_hash']}")
        fhash = fman["config_hash"]
        failed = {f["id"] for f in fman.get("failures", [])}
        kept = [s for s in samples if s["id"] not in failed]
        xs = [packed_features(formats.read_jfpc(feat_dir / f"{s['id']}.jfpc", expect_hash=fhash)[0])
              for s in kept]
    ids = [s["id"] for s in kept]
    labels = np.array([s["label"] for s in kept], dtype=np.int64)
    splits = np.array([s["split"] for s in kept])
    return ids, np.stack(xs), labels, splits, fhash


# -- synth-gen -----------------------------------------------------------------

def _write_sample(job):
    c, i, seed, cfg, root, split, dhash = job
    s = generate_sample(c, i, seed, cfg)
    sdir = Path(root) / "samples" / s.sample_id
    formats.save_frames(sdir / "frames", s.frames, config_hash=dhash)
    doc = formats.skeleton_to_json(s.skeleton)
    doc["config_hash"] = dhash
    formats.write_json(sdir / "skeleton.json", doc)
    return {"id": s.sample_id, "label": c, "class_name": CLASS_NAMES[c], "split": split}


def cmd_synth_gen(args) -> int:
    cfg = SynthConfig(frames=args.frames, height=args.height, width=args.width)
    config = {"synth": cfg.to_dict(), "classes": args.classes, "per_class": args.per_class,
              "seed": args.seed, "val_fraction": args.val_fraction}
    dhash = config_hash(config)
    if not 2 <= args.classes <= len(CLASS_NAMES):
        raise SchemaError(f"--classes must lie in [2, {len(CLASS_NAMES)}]")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    val = split_indices(args.per_class, args.seed, args.val_fraction)
    jobs = [(c, i, args.seed, cfg, str(out), "val" if val[i] else "train", dhash)
            for c in range(args.classes) for i in range(args.per_class)]
    if args.workers > 1:
        with cf.ProcessPoolExecutor(max_workers=args.workers) as pool:
            samples = list(pool.map(_write_sample, jobs))
    else:
        samples = [_write_sample(j) for j in jobs]
    topo = figure7_topology()
    save_topology(topo, out / "topology.json")
    with open(out / "labels.csv", "w") as fh:
        fh.write(f"# config_hash={dhash}\nsample_id,label,class_name,split\n")
        for s in samples:
            fh.write(f"{s['id']},{s['label']},{s['class_name']},{s['split']}\n")
    formats.write_json(out / "manifest.json", {
        "config": config, "config_hash": dhash, "frame_size": [cfg.height, cfg.width], "K": topo.K,
        "class_names": list(CLASS_NAMES[:args.classes]), "samples": samples})
    print(f"wrote {len(samples)} samples to {out} (config {dhash})")
    return 0


# -- extract-jfp ---------------------------------------------------------------

def _extract_one(job):
    sid, data_dir, out_dir, cfg, modality, fhash = job
    sdir = Path(data_dir) / "samples" / sid
    try:
        frames = formats.load_frames(sdir / "frames")
        skel = formats.load_skeleton(sdir / "skeleton.json")
        fn = extract_jfp if modality == "jfp" else extract_jap
        packed = pack_jfp(fn(frames, skel, cfg), fhash)
        formats.write_jfpc(Path(out_dir) / f"{sid}.jfpc", packed.data, fhash)
        return None
    except (JoloError, OSError, ValueError) as exc:
        return {"id": sid, "error": f"{type(exc).__name__}: {exc}"}


def cmd_extract_jfp(args) -> int:
    manifest = _load_manifest(args.data)
    cfg = JfpConfig(patch_size=args.patch_size, mu=args.mu, temporal_factor=args.temporal_factor,
                    target_len=args.target_len)
    fhash = config_hash({"modality": args.modality, "jfp": cfg.to_dict(),
                         "frame_size": manifest["frame_size"], "K": manifest["K"]})
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    ids = [s["id"] for s in manifest["samples"]]
    jobs = [(sid, args.data, str(out), cfg, args.modality, fhash) for sid in ids]
    if args.workers > 1:
        with cf.ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]
    failures = [r for r in results if r is not None]
    formats.write_json(out / "manifest.json", {
        "config_hash": fhash, "dataset_hash": manifest["config_hash"], "modality": args.modality,
        "jfp": cfg.to_dict(), "samples": [s for s in ids if s not in {f["id"] for f in failures}],
        "failures": failures})
    for f in failures:
        print(f"failed {f['id']}: {f['error']}", file=sys.stderr)
    print(f"extracted {len(ids) - len(failures)}/{len(ids)} samples to {out} (config {fhash})")
    return 1 if failures and len(failures) == len(ids) else 0


# -- train / eval / blend --------------------------------------------------------

def cmd_train(args) -> int:
    manifest = _load_manifest(args.data)
    modality = args.modality
    branch = "S" if modality in MODALITIES["S"] else "P"
    ids, x, labels, splits, fhash = _load_inputs(args, manifest, modality, args.temporal_factor, args.target_len)
    topo = load_topology(Path(args.data) / "topology.json")
    num_classes = len(manifest["class_names"])
    net_cfg = NetworkConfig(in_channels=x.shape[1], T_in=x.shape[2], K=x.shape[3], N=x.shape[4],
                            num_classes=num_classes, blocks=args.blocks, kt=args.kt,
                            dropout=args.dropout, seed=args.seed)
    hp = TrainParams(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                     lr_steps=tuple(args.lr_steps), seed=args.seed)
    spec = BranchSpec(branch, modality, topo, net_cfg)
    data = BranchDataset(x, labels, modality, tuple(ids), splits == "val", fhash)
    data = data.subset(np.isin(splits, ["train", "val"]))
    config = {"branch": branch, "modality": modality, "network": net_cfg.to_dict(),
              "train": hp.to_dict(), "topology": topo.to_json(), "feature_hash": fhash,
              "dataset_hash": manifest["config_hash"], "class_names": manifest["class_names"],
              "temporal_factor": args.temporal_factor, "target_len": args.target_len}
    chash = config_hash(config)
    config["config_hash"] = chash
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    result = train_branch(spec, data, hp)
    with open(out / "log.jsonl", "w") as fh:
        for rec in result.log:
            fh.write(json.dumps({**rec, "config_hash": chash}, sort_keys=True) + "\n")
    formats.write_jckp(out / "checkpoint.jckp", result.network.params, {**config, "best_epoch": result.best_epoch})
    print(f"trained {branch}/{modality} for {hp.epochs} epochs; best epoch {result.best_epoch} (config {chash})")
    return 0


def load_network(path) -> tuple[Network, dict]:
    params, config = formats.read_jckp(path)
    body = {k: v for k, v in config.items() if k not in ("config_hash", "best_epoch")}
    if config_hash(body) != config.get("config_hash"):
        raise HashMismatchError(f"{path}: stored config hash does not match its config")
    topo_doc = config["topology"]
    topo = build_topology(topo_doc["edges"], topo_doc["K"], parent=topo_doc["parent"])
    net = Network(NetworkConfig.from_dict(config["network"]), topo)
    net.set_params(params)
    return net, config


def _metrics(scores, labels, chash, extra=None) -> dict:
    C = scores.shape[1]
    return {"config_hash": chash, "num_samples": int(len(labels)), "top1": top_k_accuracy(scores, labels, 1),
            "top5": top_k_accuracy(scores, labels, min(5, C)), **(extra or {})}


def _write_eval(out: Path, ids, labels, scores, chash, class_names, extra=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    formats.write_scores(out / "scores.csv", ids, labels, scores, chash)
    metrics = _metrics(scores, labels, chash, extra)
    formats.write_json(out / "metrics.json", metrics)
    pc = per_class_accuracy(scores, labels)
    write_per_class_csv(out / "per_class.csv", {"top1": pc}, class_names)
    text = (out / "per_class.csv").read_text()
    (out / "per_class.csv").write_text(f"# config_hash={chash}\n{text}")
    return metrics


def cmd_eval(args) -> int:
    net, config = load_network(args.checkpoint)
    manifest = _load_manifest(args.data)
    ids, x, labels, splits, fhash = _load_inputs(args, manifest, config["modality"],
                                                 config["temporal_factor"], config["target_len"])
    if fhash != config["feature_hash"]:
        raise HashMismatchError(f"inputs have config hash {fhash}; checkpoint {args.checkpoint} "
                                f"expects {config['feature_hash']}")
    mask = splits == args.split if args.split != "all" else np.ones(len(ids), dtype=bool)
    ids = [i for i, m in zip(ids, mask) if m]
    scores = predict(net, x[mask])
    chash = config_hash({"checkpoint": config["config_hash"], "split": args.split,
                         "dataset_hash": manifest["config_hash"]})
    metrics = _write_eval(Path(args.output), ids, labels[mask], scores, chash, manifest["class_names"],
                          {"split": args.split, "checkpoint_hash": config["config_hash"]})
    print(f"top1 {metrics['top1']:.4f} top5 {metrics['top5']:.4f} on {metrics['num_samples']} samples")
    return 0


def cmd_blend(args) -> int:
    ids1, lab1, s1, h1 = formats.read_scores(args.scores[0])
    ids2, lab2, s2, h2 = formats.read_scores(args.scores[1])
    if ids1 != ids2 or not np.array_equal(lab1, lab2):
        raise SchemaError("score files cover different samples or labels")
    w1, w2 = args.weights
    fused = blend_scores(s1, s2, w1, w2, use_softmax=args.softmax)
    chash = config_hash({"inputs": [h1, h2], "weights": [w1, w2], "softmax": args.softmax})
    names = [str(c) for c in range(fused.shape[1])]
    metrics = _write_eval(Path(args.output), ids1, lab1, fused, chash, names,
                          {"weights": [w1, w2], "softmax": args.softmax, "inputs": [h1, h2]})
    print(f"top1 {metrics['top1']:.4f} top5 {metrics['top5']:.4f}")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser(defaults: RunConfig | None = None) -> argparse.ArgumentParser:
    d = defaults or RunConfig.from_env()
    p = argparse.ArgumentParser(prog="jolo", description="Joint-aligned flow patches and two-stream GCN tools.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="render a synthetic dataset")
    g.add_argument("--classes", type=int, default=6)
    g.add_argument("--per-class", type=int, default=50)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--frames", type=int, default=128)
    g.add_argument("--height", type=int, default=96)
    g.add_argument("--width", type=int, default=128)
    g.add_argument("--val-fraction", type=float, default=0.2)
    g.add_argument("--workers", type=int, default=d.workers)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_synth_gen)

    e = sub.add_parser("extract-jfp", help="extract JFP or JAP tensors")
    e.add_argument("data")
    e.add_argument("--modality", choices=("jfp", "jap"), default="jfp")
    e.add_argument("--patch-size", type=int, default=d.patch_size)
    e.add_argument("--mu", type=int, default=d.mu)
    e.add_argument("--temporal-factor", type=int, default=d.temporal_factor)
    e.add_argument("--target-len", type=int, default=d.target_len)
    e.add_argument("--workers", type=int, default=d.workers)
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_extract_jfp)

    t = sub.add_parser("train", help="train one branch")
    t.add_argument("data")
    t.add_argument("--features", help="extract-jfp output directory (P branch)")
    t.add_argument("--modality", choices=MODALITIES["S"] + MODALITIES["P"], default="joints")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--lr-steps", type=int, nargs="*", default=[])
    t.add_argument("--blocks", type=_parse_blocks, default=d.blocks)
    t.add_argument("--kt", type=int, default=5)
    t.add_argument("--dropout", type=float, default=0.0)
    t.add_argument("--temporal-factor", type=int, default=d.temporal_factor)
    t.add_argument("--target-len", type=int, default=d.target_len)
    t.add_argument("--seed", type=int, default=d.seed)
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="score a checkpoint")
    v.add_argument("data")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--features")
    v.add_argument("--split", choices=("train", "val", "all"), default="val")
    v.add_argument("-o", "--output", required=True)
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("blend", help="fuse two score files")
    b.add_argument("scores", nargs=2)
    b.add_argument("--weights", type=float, nargs=2, default=list(d.blend_weights))
    b.add_argument("--softmax", action="store_true", help="blend class probabilities instead of logits")
    b.add_argument("-o", "--output", required=True)
    b.set_defaults(func=cmd_blend)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (JoloError, OSError, KeyError, ValueError) as exc:
        print(f"jolo {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
