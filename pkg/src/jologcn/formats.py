"""On-disk formats: JFPC tensors, JCKP checkpoints, skeleton JSON, frames and score tables.

Binary layouts (all integers little-endian)::

    JFPC  b"JFPC" | u32 version | u32 rank | u32 extents[rank] | u32 dtype (0 = f32 LE)
          | u64 payload bytes | payload | u32 hash length | utf-8 config hash

    JCKP  b"JCKP" | u32 version | u32 config length | utf-8 JSON config | u32 record count
          | records: u32 name length | utf-8 name | u32 rank | u32 extents[rank] | f32 LE data
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .errors import FormatError, HashMismatchError, SchemaError
from .jfp import FrameSequence, SkeletonSequence

JFPC_MAGIC = b"JFPC"
JCKP_MAGIC = b"JCKP"
FORMAT_VERSION = 1
DTYPE_F32 = 0


# -- JFPC ----------------------------------------------------------------------

def encode_jfpc(array: np.ndarray, config_hash: str = "") -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f4")
    head = JFPC_MAGIC + struct.pack("<II", FORMAT_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<IQ", DTYPE_F32, arr.nbytes)
    tag = config_hash.encode()
    return head + arr.tobytes() + struct.pack("<I", len(tag)) + tag


def decode_jfpc(blob: bytes) -> tuple[np.ndarray, str]:
    """Tensor and config hash from JFPC bytes."""
    buf = io.BytesIO(blob)

    def take(n):
        chunk = buf.read(n)
        if len(chunk) != n:
            raise FormatError("JFPC data truncated")
        return chunk

    if take(4) != JFPC_MAGIC:
        raise FormatError("not a JFPC container")
    version, rank = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported JFPC version {version}")
    extents = struct.unpack(f"<{rank}I", take(4 * rank))
    dtype, nbytes = struct.unpack("<IQ", take(12))
    if dtype != DTYPE_F32:
        raise FormatError(f"unknown JFPC dtype tag {dtype}")
    if nbytes != 4 * int(np.prod(extents, dtype=np.int64)):
        raise FormatError("JFPC payload length disagrees with extents")
    data = np.frombuffer(take(nbytes), dtype="<f4").reshape(extents).astype(np.float32)
    tag = ""
    rest = buf.read()
    if rest:
        if len(rest) < 4:
            raise FormatError("JFPC trailer truncated")
        (n,) = struct.unpack("<I", rest[:4])
        if len(rest) != 4 + n:
            raise FormatError("JFPC trailer length mismatch")
        tag = rest[4:].decode()
    return data, tag


def write_jfpc(path, array: np.ndarray, config_hash: str = "") -> None:
    Path(path).write_bytes(encode_jfpc(array, config_hash))


def read_jfpc(path, expect_hash: str | None = None) -> tuple[np.ndarray, str]:
    data, tag = decode_jfpc(Path(path).read_bytes())
    if expect_hash is not None and tag != expect_hash:
        raise HashMismatchError(f"{path}: config hash {tag!r} differs from expected {expect_hash!r}")
    return data, tag


# -- JCKP ----------------------------------------------------------------------

def encode_jckp(params: dict, config: dict) -> bytes:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    out = [JCKP_MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg)), cfg, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        key = name.encode()
        out.append(struct.pack("<I", len(key)) + key)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_jckp(blob: bytes) -> tuple[dict, dict]:
    """``(params, config)`` from JCKP bytes; parameters come back as float32."""
    buf = io.BytesIO(blob)

    def take(n):
        chunk = buf.read(n)
        if len(chunk) != n:
            raise FormatError("JCKP data truncated")
        return chunk

    if take(4) != JCKP_MAGIC:
        raise FormatError("not a JCKP checkpoint")
    version, n_cfg = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported JCKP version {version}")
    try:
        config = json.loads(take(n_cfg).decode())
    except ValueError as exc:
        raise FormatError(f"JCKP config blob is not JSON: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (n_name,) = struct.unpack("<I", take(4))
        name = take(n_name).decode()
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if buf.read():
        raise FormatError("trailing bytes after JCKP records")
    return params, config


def write_jckp(path, params: dict, config: dict) -> None:
    Path(path).write_bytes(encode_jckp(params, config))


def read_jckp(path) -> tuple[dict, dict]:
    return decode_jckp(Path(path).read_bytes())


# -- skeleton JSON -------------------------------------------------------------

def skeleton_to_json(skel: SkeletonSequence) -> dict:
    coords = np.where(np.isfinite(skel.coords), skel.coords, 0.0)
    doc = {"T": skel.T, "K": skel.K, "N": skel.N, "C": skel.C,
           "coords": coords.tolist(), "joint_names": list(skel.joint_names),
           "parent": list(skel.parent) if skel.parent is not None else None}
    if not skel.person_mask.all():
        doc["person_mask"] = skel.person_mask.astype(int).tolist()
    return doc


def skeleton_from_json(doc: dict) -> SkeletonSequence:
    try:
        T, K, N, C = (int(doc[k]) for k in ("T", "K", "N", "C"))
        coords = np.asarray(doc["coords"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad skeleton JSON: {exc}") from None
    if coords.shape != (T, K, C, N):
        raise SchemaError(f"coords shape {coords.shape} disagrees with declared {(T, K, C, N)}")
    mask = doc.get("person_mask")
    return SkeletonSequence(coords, tuple(doc.get("joint_names") or ()),
                            None if mask is None else np.asarray(mask, dtype=bool), doc.get("parent"))


def save_skeleton(path, skel: SkeletonSequence) -> None:
    Path(path).write_text(json.dumps(skeleton_to_json(skel)))


def load_skeleton(path) -> SkeletonSequence:
    try:
        doc = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise SchemaError(f"{path}: not JSON ({exc})") from None
    return skeleton_from_json(doc)


# -- frames --------------------------------------------------------------------

def save_frames(directory, frames: FrameSequence, config_hash: str = "") -> None:
    """One 8-bit PNG per frame (grayscale or RGB), named ``00000.png`` onwards.

    A non-empty ``config_hash`` is stored as a ``config_hash`` text chunk.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    q = np.clip(np.rint(frames.frames * 255.0), 0, 255).astype(np.uint8)
    for t, f in enumerate(q):
        img = Image.fromarray(f[..., 0] if f.shape[-1] == 1 else f)
        info = PngInfo()
        if config_hash:
            info.add_text("config_hash", config_hash)
        img.save(directory / f"{t:05d}.png", optimize=False, pnginfo=info)


def load_frames(directory, fps: float = 30.0) -> FrameSequence:
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise FormatError(f"{directory}: no PNG frames")
    frames = []
    for f in files:
        try:
            with Image.open(f) as img:
                frames.append(np.asarray(img, dtype=np.float32) / 255.0)
        except (OSError, SyntaxError) as exc:
            raise FormatError(f"{f}: unreadable frame ({exc})") from None
    shapes = {a.shape for a in frames}
    if len(shapes) != 1:
        raise FormatError(f"{directory}: frames differ in size {sorted(shapes)}")
    return FrameSequence(np.stack(frames), fps)


# -- manifests and tables ------------------------------------------------------

def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except ValueError as exc:
        raise FormatError(f"{path}: not JSON ({exc})") from None


def write_scores(path, ids, labels, scores: np.ndarray, config_hash: str) -> None:
    """Score table: a ``# config_hash=`` line, then ``sample_id,label,s0..s{C-1}``."""
    scores = np.asarray(scores, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"] + [f"s{c}" for c in range(scores.shape[1])])
        for sid, lab, row in zip(ids, labels, scores):
            w.writerow([sid, int(lab)] + [repr(float(v)) for v in row])


def read_scores(path) -> tuple[list, np.ndarray, np.ndarray, str]:
    """``(ids, labels, scores, config_hash)`` from a score table."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# config_hash="):
            raise FormatError(f"{path}: missing config hash line")
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["sample_id", "label"]:
        raise FormatError(f"{path}: missing header")
    body = rows[1:]
    ids = [r[0] for r in body]
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    scores = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64).reshape(len(body), -1)
    return ids, labels, scores, first.split("=", 1)[1]
