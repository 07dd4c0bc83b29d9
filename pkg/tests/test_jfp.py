import numpy as np
import pytest
from conftest import smooth_texture
from hypothesis import given
from hypothesis import strategies as st

from jologcn.errors import DimensionError, InputError, SchemaError
from jologcn.graph import OPENPOSE18_NAMES
from jologcn.jfp import (FrameSequence, JfpConfig, JfpSequence, Patch, SkeletonSequence, adaptive_patch_size,
                         crop_patch, extract_jap, extract_jfp, joint_displacement, make_jfp, pack_jfp,
                         reconstruct_full_motion, round_to_even, select_joints_14, temporal_downsample,
                         unpack_jfp)
from jologcn.numerics import bilinear_sample
from jologcn.synth import SynthConfig, generate_sample
from jologcn.tvl1 import FlowField, central_mask, endpoint_error


def moved_frames(tex, angle_deg=0.0, shift=(0.0, 0.0), size=64):
    """Frame pair where the content rotates about the frame centre, then shifts."""
    a = np.deg2rad(angle_deg)
    c = (size - 1) / 2
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    rx, ry = xx - c - shift[0], yy - c - shift[1]
    bx = np.cos(a) * rx + np.sin(a) * ry + c
    by = -np.sin(a) * rx + np.cos(a) * ry + c
    return tex[:size, :size], bilinear_sample(tex, bx, by, border="edge")


def full_motion(points_x, points_y, angle_deg, shift, size=64):
    a = np.deg2rad(angle_deg)
    c = (size - 1) / 2
    rx, ry = points_x - c, points_y - c
    u = np.cos(a) * rx - np.sin(a) * ry - rx + shift[0]
    v = np.sin(a) * rx + np.cos(a) * ry - ry + shift[1]
    return u, v


class TestCrop:
    def test_uniform(self):
        p = crop_patch(np.full((40, 50), 0.3), (20.7, 13.2), 16)
        np.testing.assert_allclose(p.pixels, 0.3)
        assert p.side == 16

    def test_whole_frame(self, rng):
        frame = rng.random((32, 32))
        p = crop_patch(frame, (16.0, 16.0), 32)
        np.testing.assert_array_equal(p.gray(), frame)

    def test_left_border_padding(self, rng):
        frame = rng.random((48, 48))
        jx, jy = 4, 20
        p = crop_patch(frame, (jx, jy), 32).gray()
        oracle = np.zeros((32, 32))
        for i in range(32):
            for j in range(32):
                fy, fx = jy - 16 + i, jx - 16 + j
                if 0 <= fy < 48 and 0 <= fx < 48:
                    oracle[i, j] = frame[fy, fx]
        assert not p[:, :12].any()
        np.testing.assert_array_equal(p, oracle)

    def test_subpixel(self, rng):
        frame = rng.random((20, 20))
        p = crop_patch(frame, (10.5, 10.0), 4).gray()
        np.testing.assert_allclose(p[0, 0], 0.5 * (frame[8, 8] + frame[8, 9]))

    def test_rgb_channels(self, rng):
        frame = rng.random((20, 20, 3))
        p = crop_patch(frame, (10, 10), 8)
        assert p.pixels.shape == (8, 8, 3)

    def test_non_finite_joint(self):
        with pytest.raises(InputError):
            crop_patch(np.zeros((8, 8)), (np.nan, 1.0), 4)

    @pytest.mark.parametrize("l", [0, 3, 7])
    def test_bad_side(self, l):
        with pytest.raises(InputError):
            crop_patch(np.zeros((8, 8)), (4, 4), l)


class TestMakeJfp:
    def test_identical(self, rng):
        tex = smooth_texture(rng)
        p = crop_patch(tex, (32, 32), 32)
        f = make_jfp(p, p)
        assert f.magnitude().mean() <= 0.05

    def test_tracked_translation(self, rng):
        shift = (2.4, -1.3)
        f0, f1 = moved_frames(smooth_texture(rng, 96), 0.0, shift)
        j0 = np.array([31.5, 31.5])
        f = make_jfp(crop_patch(f0, j0, 32), crop_patch(f1, j0 + shift, 32))
        assert f.magnitude().mean() <= 0.3

    def test_zero_mean(self, rng):
        f0, f1 = moved_frames(smooth_texture(rng, 96), 4.0)
        f = make_jfp(crop_patch(f0, (31.5, 31.5), 32), crop_patch(f1, (31.5, 31.5), 32))
        assert abs(f.u.mean()) <= 1e-5 and abs(f.v.mean()) <= 1e-5

    def test_constant_joint_offset(self, rng):
        f0, f1 = moved_frames(smooth_texture(rng, 96), 4.0)
        c = np.array([31.5, 31.5])
        ref = make_jfp(crop_patch(f0, c, 32), crop_patch(f1, c, 32))
        off = make_jfp(crop_patch(f0, c + (2, 0), 32), crop_patch(f1, c + (2, 0), 32))
        assert endpoint_error(off, ref, central_mask(32, 32)) <= 0.3

    def test_joint_mismatch(self, rng):
        a = Patch(np.zeros((16, 16, 1)), (0, 1, 0))
        b = Patch(np.zeros((16, 16, 1)), (2, 3, 0))
        with pytest.raises(InputError):
            make_jfp(a, b)


class TestDecomposition:
    def test_zero_displacement(self, rng):
        ur = FlowField(rng.random((4, 4)), rng.random((4, 4)))
        out = reconstruct_full_motion((0, 0), ur)
        np.testing.assert_array_equal(out.u, ur.u)
        np.testing.assert_array_equal(out.v, ur.v)

    def test_constant(self):
        out = reconstruct_full_motion((3, -1), FlowField(np.zeros((3, 3)), np.zeros((3, 3))))
        np.testing.assert_array_equal(out.u, 3)
        np.testing.assert_array_equal(out.v, -1)

    def test_non_finite(self):
        with pytest.raises(InputError):
            reconstruct_full_motion((np.inf, 0), FlowField(np.zeros((2, 2)), np.zeros((2, 2))))

    def test_translate_rotate_field(self, rng):
        angle, shift = 4.0, (1.8, -1.2)
        f0, f1 = moved_frames(smooth_texture(rng, 96), angle, shift)
        j0 = np.array([31.5, 31.5])
        jfp = make_jfp(crop_patch(f0, j0, 32), crop_patch(f1, j0 + shift, 32))
        full = reconstruct_full_motion(shift, jfp)
        yy, xx = np.mgrid[0:32, 0:32] + (j0 - 16)[::-1, None, None]
        u, v = full_motion(xx, yy, angle, shift)
        assert endpoint_error(full, FlowField(u, v), central_mask(32, 32)) <= 0.7

    def test_displacement_plus_mean_flow_at_joint(self, rng):
        angle, shift = 3.0, (2.2, 0.9)
        f0, f1 = moved_frames(smooth_texture(rng, 96), angle, shift)
        # joint off the rotation centre, tracked exactly
        j0 = np.array([37.5, 27.5])
        u_j, v_j = full_motion(np.array(j0[0]), np.array(j0[1]), angle, shift)
        j1 = j0 + (u_j, v_j)
        raw = make_jfp(crop_patch(f0, j0, 32), crop_patch(f1, j1, 32), normalize=False)
        approx = np.array([u_j, v_j]) + (raw.u.mean(), raw.v.mean())
        assert np.hypot(*(approx - (u_j, v_j))) <= 0.7


def _skel(coords, **kw):
    return SkeletonSequence(np.asarray(coords, dtype=np.float64), **kw)


class TestJointDisplacement:
    def test_static(self):
        s = _skel(np.ones((3, 2, 2, 1)))
        np.testing.assert_array_equal(joint_displacement(s, 0, 1, 0, 2), [0, 0])

    def test_subtraction(self):
        c = np.zeros((2, 1, 2, 1))
        c[0, 0, :, 0] = (10, 10)
        c[1, 0, :, 0] = (13, 14)
        np.testing.assert_array_equal(joint_displacement(_skel(c), 0, 0, 0, 1), [3, 4])

    def test_out_of_range(self):
        s = _skel(np.zeros((3, 2, 2, 1)))
        with pytest.raises(IndexError):
            joint_displacement(s, 2, 0, 0, 1)

    def test_invalid_person(self):
        mask = np.array([[True], [False]])
        s = _skel(np.zeros((2, 1, 2, 1)), person_mask=mask)
        with pytest.raises(IndexError):
            joint_displacement(s, 0, 0, 0, 1)


class TestSelectJoints:
    def make18(self):
        return _skel(np.arange(18 * 2, dtype=float).reshape(1, 18, 2, 1), joint_names=OPENPOSE18_NAMES)

    def test_drops_four(self):
        out = select_joints_14(self.make18())
        assert out.K == 14
        np.testing.assert_array_equal(out.coords[0, :, 0, 0], np.arange(14) * 2)

    def test_names(self):
        out = select_joints_14(self.make18())
        assert not any("eye" in n or "ear" in n for n in out.joint_names)

    def test_unnamed_layout(self):
        out = select_joints_14(_skel(np.zeros((2, 18, 2, 1))))
        assert out.K == 14

    def test_wrong_count(self):
        with pytest.raises(SchemaError):
            select_joints_14(select_joints_14(self.make18()))


class TestAdaptivePatch:
    def bone_skel(self, length):
        c = np.zeros((3, 2, 2, 1))
        c[:, 1, 0, 0] = length
        return _skel(c, parent=(0, 0))

    def test_all_32(self):
        assert adaptive_patch_size(self.bone_skel(32.0), 1.0) == 32

    def test_rounding(self):
        assert adaptive_patch_size(self.bone_skel(20.3), 1.5) == 30
        assert round_to_even(30.45) == 30

    def test_clamped(self):
        assert adaptive_patch_size(self.bone_skel(100.0), 1.0) == 64
        assert adaptive_patch_size(self.bone_skel(1.0), 1.0) == 8

    def test_no_bones(self):
        with pytest.raises(InputError):
            adaptive_patch_size(_skel(np.zeros((2, 1, 2, 1)), parent=(0,)))

    def test_bad_alpha(self):
        with pytest.raises(InputError):
            adaptive_patch_size(self.bone_skel(10.0), 0.0)


class TestTemporal:
    def test_128_by_2(self):
        assert temporal_downsample(128, 2, 64) == list(range(0, 128, 2))

    def test_identity(self):
        assert temporal_downsample(64, 1, 64) == list(range(64))

    def test_padding(self):
        idx = temporal_downsample(10, 2, 64)
        assert idx[:5] == [0, 2, 4, 6, 8] and idx[5:] == [8] * 59

    def test_errors(self):
        with pytest.raises(InputError):
            temporal_downsample(0, 2, 4)
        with pytest.raises(InputError):
            temporal_downsample(10, 0, 4)


class TestPacking:
    def test_headline_shape(self):
        assert pack_jfp(np.zeros((64, 14, 8, 8, 2, 2))).data.shape == (128, 14, 64, 2)

    def test_minimal(self):
        assert pack_jfp(np.zeros((1, 1, 1, 1, 2, 1))).data.shape == (2, 1, 1, 1)

    def test_row_convention(self, rng):
        x = rng.standard_normal((3, 2, 4, 4, 2, 1))
        d = pack_jfp(x).data
        t, k, i, j = 2, 1, 3, 1
        assert d[2 * t, k, 4 * i + j, 0] == x[t, k, i, j, 0, 0]
        assert d[2 * t + 1, k, 4 * i + j, 0] == x[t, k, i, j, 1, 0]

    @given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 4), st.integers(1, 2), st.integers(1, 2),
           st.integers(0, 2**31))
    def test_round_trip(self, T, K, mu, C, N, seed):
        x = np.random.default_rng(seed).standard_normal((T, K, mu, mu, C, N)).astype(np.float32)
        back = unpack_jfp(pack_jfp(x), channels=C)
        assert back.dtype == x.dtype
        np.testing.assert_array_equal(back, x)

    def test_sequence_input(self, rng):
        seq = JfpSequence(rng.standard_normal((2, 3, 2, 2, 2, 1)), d=2, mu=2)
        np.testing.assert_array_equal(pack_jfp(seq, "abc").data, pack_jfp(seq.flows).data)
        assert pack_jfp(seq, "abc").config_hash == "abc"

    def test_bad_shapes(self):
        with pytest.raises(DimensionError):
            pack_jfp(np.zeros((2, 3, 4, 5, 2, 1)))
        with pytest.raises(DimensionError):
            unpack_jfp(np.zeros((3, 1, 4, 1)))


@pytest.fixture(scope="module")
def clip():
    return generate_sample(2, 0, 3, SynthConfig(frames=7))


class TestPipeline:
    cfg = JfpConfig(target_len=3)

    def test_shape_and_zero_mean(self, clip):
        seq = extract_jfp(clip.frames, clip.skeleton, self.cfg)
        assert seq.flows.shape == (3, 7, 8, 8, 2, 1)
        assert np.abs(seq.flows.mean(axis=(2, 3))).max() <= 1e-5
        assert seq.d == 2 and seq.mu == 8

    def test_workers_identical(self, clip):
        a = extract_jfp(clip.frames, clip.skeleton, self.cfg, workers=1)
        b = extract_jfp(clip.frames, clip.skeleton, self.cfg, workers=2)
        np.testing.assert_array_equal(a.flows, b.flows)

    def test_missing_person_zero(self, clip):
        coords = np.concatenate([clip.skeleton.coords, clip.skeleton.coords], axis=3)
        mask = np.ones((clip.frames.T, 2), dtype=bool)
        mask[:, 1] = False
        coords[:, :, :, 1] = 0.0
        skel = SkeletonSequence(coords, clip.skeleton.joint_names, mask)
        seq = extract_jfp(clip.frames, skel, self.cfg)
        assert not seq.flows[..., 1].any()
        single = extract_jfp(clip.frames, clip.skeleton, self.cfg)
        np.testing.assert_array_equal(seq.flows[..., :1], single.flows)

    def test_appearance(self, clip):
        seq = extract_jap(clip.frames, clip.skeleton, self.cfg)
        assert seq.flows.shape == (3, 7, 8, 8, 1, 1)
        assert pack_jfp(seq).data.shape == (3, 7, 64, 1)

    def test_mu_one(self, clip):
        seq = extract_jfp(clip.frames, clip.skeleton, JfpConfig(mu=1, target_len=2))
        assert pack_jfp(seq).data.shape == (4, 7, 1, 1)

    def test_length_mismatch(self, clip):
        frames = FrameSequence(clip.frames.frames[:-1])
        with pytest.raises(DimensionError):
            extract_jfp(frames, clip.skeleton, self.cfg)

    def test_config_hash_stable(self):
        assert JfpConfig().hash() == JfpConfig().hash()
        assert JfpConfig(mu=4).hash() != JfpConfig().hash()

    def test_bad_config(self):
        with pytest.raises(InputError):
            JfpConfig(patch_size=31)
