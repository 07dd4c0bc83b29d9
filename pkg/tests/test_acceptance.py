"""Acceptance criteria; each test records one PASS/FAIL line shown in the terminal summary."""
import hashlib
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, rotated_pair, shifted_pair, smooth_texture

from jologcn.bench import BenchmarkConfig, run_benchmark
from jologcn.cli import main
from jologcn.formats import read_json
from jologcn.graph import build_topology, figure7_topology
from jologcn.jfp import crop_patch, joint_displacement, make_jfp, pack_jfp, reconstruct_full_motion, unpack_jfp
from jologcn.model import Linear, Network, NetworkConfig, SpatialGCN, TemporalConv, cross_entropy, one_hot
from jologcn.numerics import bilinear_sample, finite_diff_grad, relative_error
from jologcn.synth import SynthConfig, analytic_flow_at, figure_mask, generate_sample
from jologcn.tvl1 import FlowField, central_mask, endpoint_error, estimate_flow

B_AND_C = [2, 3, 4, 5]
C_PAIR = [4, 5]


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


# -- 1. gradients ------------------------------------------------------------------

def _layer_errors(layer, x, rng):
    up = rng.standard_normal(layer.forward(x).shape)

    def loss_wrt(name):
        def f(v):
            if name == "x":
                return float((layer.forward(v) * up).sum())
            old = layer.params[name].copy()
            layer.params[name][...] = v
            out = float((layer.forward(x) * up).sum())
            layer.params[name][...] = old
            return out
        return f

    layer.forward(x)
    gx, grads = layer.backward(up)
    errs = {"x": relative_error(gx, finite_diff_grad(loss_wrt("x"), x))}
    for name, p in layer.params.items():
        errs[name] = relative_error(grads[name], finite_diff_grad(loss_wrt(name), p.copy()))
    return errs


def _random_params(layer, rng):
    for p in layer.params.values():
        p[...] = rng.standard_normal(p.shape) * 0.5


def gradient_config(seed):
    """Worst relative error per layer kind for one random configuration."""
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 8))
    parent = [0] + [int(rng.integers(0, k)) for k in range(1, K)]
    topo = build_topology([(parent[k], k) for k in range(1, K)], K)
    B, C, O, T = (int(v) for v in rng.integers(1, 4, 4) + np.array([0, 0, 1, 3]))
    out = {}

    gcn = SpatialGCN(C, O, topo.A_norm, rng, np.float64)
    _random_params(gcn, rng)
    out["gcn"] = max(_layer_errors(gcn, rng.standard_normal((B, C, T, K)), rng).values())

    kt = int(rng.choice([1, 3, 5]))
    tcn = TemporalConv(C, O, kt, int(rng.integers(1, 3)), rng, np.float64)
    _random_params(tcn, rng)
    out["tcn"] = max(_layer_errors(tcn, rng.standard_normal((B, C, T, K)), rng).values())

    fc = Linear(C, O, rng, np.float64)
    _random_params(fc, rng)
    out["fc"] = max(_layer_errors(fc, rng.standard_normal((B, C)), rng).values())

    n_cls = int(rng.integers(2, 7))
    logits = rng.standard_normal((B, n_cls)) * 2
    y = one_hot(rng.integers(0, n_cls, B), n_cls, np.float64)
    _, g = cross_entropy(logits, y)
    out["loss"] = relative_error(g, finite_diff_grad(lambda v: cross_entropy(v, y)[0], logits.copy()))

    # composed network, sampled parameters
    cfg = NetworkConfig(C, 6, K, N=int(rng.integers(1, 3)), num_classes=n_cls, blocks=((3, 1), (4, 2)), kt=3,
                        seed=seed)
    net = Network(cfg, topo, dtype=np.float64)
    for layer in net.layers.values():
        layer.params["b"][...] = rng.standard_normal(layer.params["b"].shape) * 0.1
    x = rng.standard_normal((B, C, 6, K, cfg.N))
    yn = one_hot(rng.integers(0, n_cls, B), n_cls, np.float64)
    grads, _ = net.backward(cross_entropy(net.forward(x), yn)[1])
    errs = []
    for name in ("blocks.0.gcn.M", "blocks.1.gcn.W", "blocks.1.tcn.W", "fc.b"):
        p = net.params[name]

        def f(v, p=p):
            old = p.copy()
            p[...] = v
            val = cross_entropy(net.forward(x), yn)[0]
            p[...] = old
            return val
        errs.append(relative_error(grads[name], finite_diff_grad(f, p.copy())))
    out["network"] = max(errs)
    return out


def test_gradient_suite():
    t0 = time.time()
    seeds = np.random.default_rng(2024).integers(0, 2**31, 24)
    worst = {}
    for s in seeds:
        for k, v in gradient_config(int(s)).items():
            worst[k] = max(worst.get(k, 0.0), v)
    elapsed = time.time() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed <= 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" over {len(seeds)} configs in {elapsed:.0f}s"
    record("1 gradient suite", ok, detail)


# -- 2. flow oracle ------------------------------------------------------------------

def test_flow_oracle():
    t0 = time.time()
    rng = np.random.default_rng(7)
    mask = central_mask(32, 32, 0.75)
    shift_err = []
    for dx, dy in [(0.5, 0), (1, 1), (-2, 0.5), (3, 0), (0, -3), (2.1, -2.1), (-1.3, 2.7)]:
        p, n = shifted_pair(smooth_texture(rng), dx, dy)
        gt = FlowField(np.full((32, 32), float(dx)), np.full((32, 32), float(dy)))
        shift_err.append(endpoint_error(estimate_flow(p, n), gt, mask))
    rot_err = []
    for deg in (5.0, -5.0):
        for _ in range(2):
            p, n, u, v = rotated_pair(smooth_texture(rng), deg)
            rot_err.append(endpoint_error(estimate_flow(p, n), FlowField(u, v), mask))
    elapsed = time.time() - t0
    ok = max(shift_err) <= 0.3 and max(rot_err) <= 0.5 and elapsed <= 60
    record("2 flow oracle", ok, f"shift AEE max {max(shift_err):.3f}, rotation AEE max {max(rot_err):.3f}, "
                                f"{elapsed:.0f}s")


# -- 3. decomposition -----------------------------------------------------------------

def _patch_grid(j0, l=32):
    yy, xx = np.mgrid[0:l, 0:l].astype(np.float64)
    return xx + j0[0] - l / 2, yy + j0[1] - l / 2


def _rigid_pair(tex, angle_deg, shift, size=64):
    a = np.deg2rad(angle_deg)
    c = (size - 1) / 2
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    rx, ry = xx - c - shift[0], yy - c - shift[1]
    bx = np.cos(a) * rx + np.sin(a) * ry + c
    by = -np.sin(a) * rx + np.cos(a) * ry + c
    return tex[:size, :size], bilinear_sample(tex, bx, by, border="edge")


def test_decomposition():
    t0 = time.time()
    synth_err = []
    cfg = SynthConfig(frames=9)
    for i in range(3):
        s = generate_sample(2, i, 13, cfg)          # rotating hands on a moving body
        H, W = cfg.height, cfg.width
        for t in (1, 5):
            region = figure_mask(s, t, 1.5)
            for k in range(7):
                j0 = s.skeleton.coords[t, k, :2, 0]
                j1 = s.skeleton.coords[t + 1, k, :2, 0]
                jfp = make_jfp(crop_patch(s.frames.gray(t), j0, 32), crop_patch(s.frames.gray(t + 1), j1, 32))
                full = reconstruct_full_motion(joint_displacement(s.skeleton, t, k, 0, 1), jfp)
                xx, yy = _patch_grid(j0)
                gt = analytic_flow_at(s.spec, cfg, t, 1, xx + 0.5, yy + 0.5)
                xi = np.clip(np.floor(xx + 0.5).astype(int), 0, W - 1)
                yi = np.clip(np.floor(yy + 0.5).astype(int), 0, H - 1)
                synth_err.append(endpoint_error(full, gt, region[yi, xi]))
    rng = np.random.default_rng(3)
    rigid_err = []
    for angle, shift in [(4.0, (1.8, -1.2)), (-3.0, (-2.0, 0.7)), (5.0, (0.4, 2.3))]:
        f0, f1 = _rigid_pair(smooth_texture(rng, 96), angle, shift)
        j0 = np.array([31.5, 31.5])
        jfp = make_jfp(crop_patch(f0, j0, 32), crop_patch(f1, j0 + shift, 32))
        full = reconstruct_full_motion(shift, jfp)
        xx, yy = _patch_grid(j0)
        a = np.deg2rad(angle)
        rx, ry = xx - 31.5, yy - 31.5          # index space, as the pair was built
        gt = FlowField(np.cos(a) * rx - np.sin(a) * ry - rx + shift[0], np.sin(a) * rx + np.cos(a) * ry - ry + shift[1])
        rigid_err.append(endpoint_error(full, gt, central_mask(32, 32)))
    trans_mag = []
    for dx, dy in [(2.4, -1.3), (-0.7, 0.6), (3.0, 1.0)]:
        f0, f1 = _rigid_pair(smooth_texture(rng, 96), 0.0, (dx, dy))
        j0 = np.array([31.5, 31.5])
        trans_mag.append(make_jfp(crop_patch(f0, j0, 32), crop_patch(f1, j0 + (dx, dy), 32)).magnitude().mean())
    for c in (0, 1):
        s = generate_sample(c, 0, 13, cfg)
        for k in (0, 1, 2, 5, 6):
            j0, j1 = s.skeleton.coords[3, k, :2, 0], s.skeleton.coords[4, k, :2, 0]
            f = make_jfp(crop_patch(s.frames.gray(3), j0, 32), crop_patch(s.frames.gray(4), j1, 32))
            trans_mag.append(f.magnitude().mean())
    elapsed = time.time() - t0
    worst = max(max(synth_err), max(rigid_err))
    ok = worst <= 0.7 and max(trans_mag) <= 0.3 and elapsed <= 120
    record("3 decomposition", ok, f"reconstruction AEE max {worst:.3f}, translation JFP magnitude max "
                                  f"{max(trans_mag):.3f}, {elapsed:.0f}s")


# -- 4. packing -----------------------------------------------------------------------

def test_packing_round_trip():
    rng = np.random.default_rng(11)
    exact = 0
    for _ in range(100):
        T, K, mu, C, N = (int(v) for v in rng.integers(1, [9, 15, 9, 3, 3], endpoint=True))
        x = rng.standard_normal((T, K, mu, mu, C, N)).astype(np.float32)
        packed = pack_jfp(x)
        ok_shape = packed.data.shape == (C * T, K, mu * mu, N)
        exact += ok_shape and np.array_equal(unpack_jfp(packed, channels=C), x)
    big = np.random.default_rng(0).standard_normal((64, 14, 8, 8, 2, 2)).astype(np.float32)
    p = pack_jfp(big)
    shape_ok = p.data.shape == (128, 14, 64, 2) and np.array_equal(unpack_jfp(p), big)
    record("4 packing round-trip", exact == 100 and shape_ok,
           f"{exact}/100 bit-exact, (64,14,8,8,2,2) -> {p.data.shape}")


# -- 5/6. synthetic benchmark -----------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark():
    t0 = time.time()
    runs = [run_benchmark(seed, BenchmarkConfig()) for seed in range(5)]
    return runs, time.time() - t0


def test_branch_trend(benchmark):
    runs, elapsed = benchmark
    s_bc = np.mean([r.pair_top1("joints", B_AND_C) for r in runs])
    p_bc = np.mean([r.pair_top1("jfp", B_AND_C) for r in runs])
    top1 = {v: np.mean([r.top1[v] for r in runs]) for v in ("joints", "jfp", "fused")}
    best_single = max(top1["joints"], top1["jfp"])
    ok = (s_bc <= 0.60 and p_bc >= 0.90 and top1["fused"] >= best_single - 0.02 and top1["fused"] >= 0.90
          and elapsed <= 1200)
    record("5 two-stream trend", ok,
           f"S on B/C {s_bc:.3f}, P on B/C {p_bc:.3f}, S {top1['joints']:.3f}, P {top1['jfp']:.3f}, "
           f"fused {top1['fused']:.3f}, 5 seeds in {elapsed:.0f}s")


def test_jap_below_jfp(benchmark):
    runs, _ = benchmark
    jap = np.mean([r.pair_top1("jap", C_PAIR) for r in runs])
    jfp = np.mean([r.pair_top1("jfp", C_PAIR) for r in runs])
    record("6 JAP vs JFP on C1/C2", jap <= jfp - 0.20, f"JAP {jap:.3f}, JFP {jfp:.3f}")


# -- 7. determinism ------------------------------------------------------------------------

def _pipeline(root, workers):
    def run(*argv):
        assert main([str(a) for a in argv]) == 0, argv

    d, f = root / "data", root / "jfp"
    run("synth-gen", "--classes", 6, "--per-class", 3, "--seed", 21, "--frames", 9, "--workers", workers, "-o", d)
    run("extract-jfp", d, "--target-len", 4, "--workers", workers, "-o", f)
    run("train", d, "--modality", "jfp", "--features", f, "--target-len", 4, "--epochs", 4, "-o", root / "p")
    run("train", d, "--modality", "joints", "--target-len", 4, "--epochs", 4, "-o", root / "s")
    run("eval", d, "--checkpoint", root / "p" / "checkpoint.jckp", "--features", f, "-o", root / "ep")
    run("eval", d, "--checkpoint", root / "s" / "checkpoint.jckp", "-o", root / "es")
    run("blend", root / "es" / "scores.csv", root / "ep" / "scores.csv", "-o", root / "fused")
    files = ["ep/metrics.json", "es/metrics.json", "fused/metrics.json", "fused/scores.csv",
             "p/checkpoint.jckp", "s/checkpoint.jckp", "p/log.jsonl"]
    return {name: hashlib.sha256((root / name).read_bytes()).hexdigest() for name in files}


def test_pipeline_determinism(tmp_path):
    a = _pipeline(tmp_path / "one", 1)
    b = _pipeline(tmp_path / "two", 2)
    differ = [k for k in a if a[k] != b[k]]
    top1 = read_json(tmp_path / "one" / "fused" / "metrics.json")["top1"]
    record("7 pipeline determinism", not differ,
           f"{len(a) - len(differ)}/{len(a)} artefacts identical across worker counts (fused top-1 {top1:.3f})")
