"""Force CSV parsing, alignment, downsampling, manifests, augmentation."""

import numpy as np
import pytest

from fgseg import dataio
from fgseg.dataio import (AlignmentError, AugmentConfig, ForceRecord, ForceTrace,
                          FrameSequence, ParseError, Sample)


def write_force(tmp_path, text, name="force.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="ascii")
    return p


class TestForceCsv:
    def test_basic_read(self, tmp_path):
        p = write_force(tmp_path, "0,0,1.5,0,0,0\n" * 3)
        trace = dataio.load_force_csv(p)
        assert len(trace) == 3
        assert np.allclose(trace.fz_magnitudes(), 1.5)

    def test_empty_file_rejected(self, tmp_path):
        p = write_force(tmp_path, "")
        with pytest.raises(ParseError):
            dataio.load_force_csv(p)

    def test_five_fields_names_row(self, tmp_path):
        p = write_force(tmp_path, "0,0,1,0,0,0\n1,2,3,4,5\n")
        with pytest.raises(ParseError, match=":2"):
            dataio.load_force_csv(p)

    def test_non_numeric_names_row(self, tmp_path):
        p = write_force(tmp_path, "0,0,oops,0,0,0\n")
        with pytest.raises(ParseError, match=":1"):
            dataio.load_force_csv(p)

    def test_non_finite_rejected(self, tmp_path):
        p = write_force(tmp_path, "0,0,inf,0,0,0\n")
        with pytest.raises(ParseError):
            dataio.load_force_csv(p)

    def test_roundtrip_exact_text(self, tmp_path, rng):
        rows = rng.uniform(-4, 4, size=(7, 6))
        trace = ForceTrace([ForceRecord(*row) for row in rows])
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        dataio.save_force_csv(trace, p1)
        dataio.save_force_csv(dataio.load_force_csv(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_column_order_is_fx_fy_fz_mx_my_mz(self, tmp_path):
        p = write_force(tmp_path, "1,2,3,4,5,6\n")
        r = dataio.load_force_csv(p)[0]
        assert (r.fx, r.fy, r.fz, r.mx, r.my, r.mz) == (1, 2, 3, 4, 5, 6)


class TestAlign:
    def frames(self, n):
        return FrameSequence(frames=np.zeros((n, 4, 4), dtype=np.uint8))

    def trace(self, n):
        return ForceTrace([ForceRecord(0, 0, 1, 0, 0, 0)] * n)

    def test_match_ok(self):
        video = dataio.align(self.trace(10), self.frames(10), video_id="v")
        assert len(video) == 10

    def test_mismatch_carries_lengths(self):
        with pytest.raises(AlignmentError) as err:
            dataio.align(self.trace(10), self.frames(9))
        assert err.value.trace_len == 10 and err.value.frame_len == 9

    def test_empty_rejected(self):
        with pytest.raises(AlignmentError):
            dataio.align(self.trace(0), self.frames(0))


class TestDownsample:
    def make_video(self, n):
        frames = np.arange(n, dtype=np.uint8)[:, None, None] * np.ones((4, 4), np.uint8)
        masks = (np.arange(n, dtype=np.uint8) % 3)[:, None, None] * np.ones((4, 4), np.uint8)
        trace = ForceTrace([ForceRecord(0, 0, float(i), 0, 0, 0) for i in range(n)])
        return dataio.align(trace, FrameSequence(frames=frames, masks=masks), video_id="v")

    def test_stride_one_identity(self):
        v = self.make_video(6)
        d = dataio.downsample(v, 1)
        assert np.array_equal(d.frames, v.frames)
        assert len(d.trace) == 6

    def test_stride_three_indices(self):
        d = dataio.downsample(self.make_video(10), 3)
        assert len(d) == 4
        assert [f[0, 0] for f in d.frames] == [0, 3, 6, 9]

    def test_force_pairing_preserved(self):
        d = dataio.downsample(self.make_video(10), 3)
        # frame i carries intensity == original index; force fz likewise
        for frame, record in zip(d.frames, d.trace):
            assert float(frame[0, 0]) == abs(record.fz)

    def test_bad_stride(self):
        with pytest.raises(ValueError):
            dataio.downsample(self.make_video(4), 0)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        entries = [("vid_a", 12, "train"), ("vid_b", 8, "val")]
        dataio.write_manifest(entries, tmp_path / "manifest.txt")
        assert dataio.read_manifest(tmp_path / "manifest.txt") == entries

    def test_bad_split_rejected(self, tmp_path):
        (tmp_path / "manifest.txt").write_text(
            "video.x.frames = 3\nvideo.x.split = test\n")
        with pytest.raises(ParseError):
            dataio.read_manifest(tmp_path / "manifest.txt")

    def test_incomplete_entry_rejected(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("video.x.frames = 3\n")
        with pytest.raises(ParseError):
            dataio.read_manifest(tmp_path / "manifest.txt")


def make_sample_from(img, mask):
    return Sample(current=img, mask=mask, key_min=img.copy(), key_max=img.copy(),
                  f_cur=1.0, f_min=0.0, f_max=2.0, video_id="t", frame_index=0)


class TestAugment:
    def phantom_like(self, rng):
        img = np.full((64, 64), 120, dtype=np.uint8)
        mask = np.zeros((64, 64), dtype=np.uint8)
        yy, xx = np.mgrid[0:64, 0:64]
        mask[(xx - 20) ** 2 + (yy - 32) ** 2 <= 49] = 1
        mask[(xx - 44) ** 2 + (yy - 30) ** 2 <= 64] = 2
        img[mask > 0] = 30
        img = np.clip(img + rng.normal(0, 4, (64, 64)), 0, 255).astype(np.uint8)
        return img, mask

    def test_deterministic_given_seed(self, rng):
        img, mask = self.phantom_like(rng)
        s = make_sample_from(img, mask)
        a = dataio.augment(s, 77)
        b = dataio.augment(s, 77)
        assert np.array_equal(a.current, b.current)
        assert np.array_equal(a.mask, b.mask)
        c = dataio.augment(s, 78)
        assert not np.array_equal(a.current, c.current)

    def test_identical_triplet_stays_identical(self, rng):
        img, mask = self.phantom_like(rng)
        out = dataio.augment(make_sample_from(img, mask), 5)
        assert np.array_equal(out.current, out.key_min)
        assert np.array_equal(out.current, out.key_max)

    def test_flip_applies_to_mask_identically(self, rng):
        img, mask = self.phantom_like(rng)
        cfg = AugmentConfig(p_flip_h=1.0, p_flip_v=0.0, max_rotate_deg=0.0,
                            max_translate_frac=0.0, gain_low=1.0, gain_high=1.0,
                            max_offset=0.0, bias_coeff=0.0, noise_sigma_max=0.0)
        out = dataio.augment(make_sample_from(img, mask), 3, cfg)
        assert np.array_equal(out.current, img[:, ::-1])
        assert np.array_equal(out.mask, mask[:, ::-1])

    def test_rotation_roundtrip_close(self):
        # smooth image: the round trip loses only interpolation detail
        yy, xx = np.mgrid[0:64, 0:64]
        img = np.clip(120 - 90 * np.exp(-((xx - 30) ** 2 + (yy - 34) ** 2) / 80.0),
                      0, 255).astype(np.uint8)
        theta = 10.0
        there = dataio._AugmentDraw(False, False, theta, (0.0, 0.0),
                                    1.0, 0.0, None, None)
        back = dataio._AugmentDraw(False, False, -theta, (0.0, 0.0),
                                   1.0, 0.0, None, None)
        rotated = dataio._to_u8(dataio._geometric(img, there, is_mask=False))
        restored = dataio._to_u8(dataio._geometric(rotated, back, is_mask=False))
        diff = np.abs(restored.astype(float) - img.astype(float))
        assert diff.mean() < 2.0

    def test_mask_classes_preserved_under_rotation(self, rng):
        img, mask = self.phantom_like(rng)
        cfg = AugmentConfig(p_flip_h=0.0, p_flip_v=0.0, max_rotate_deg=15.0,
                            max_translate_frac=0.0, gain_low=1.0, gain_high=1.0,
                            max_offset=0.0, bias_coeff=0.0, noise_sigma_max=0.0)
        for seed in range(5):
            out = dataio.augment(make_sample_from(img, mask), seed, cfg)
            assert set(np.unique(out.mask)) <= {0, 1, 2}
            for cls in (1, 2):
                before = int((mask == cls).sum())
                after = int((out.mask == cls).sum())
                assert abs(after - before) / before < 0.10

    def test_intensity_never_touches_mask(self, rng):
        img, mask = self.phantom_like(rng)
        cfg = AugmentConfig(p_flip_h=0.0, p_flip_v=0.0, max_rotate_deg=0.0,
                            max_translate_frac=0.0, gain_low=0.5, gain_high=0.5,
                            max_offset=9.0, bias_coeff=0.2, noise_sigma_max=5.0)
        out = dataio.augment(make_sample_from(img, mask), 11, cfg)
        assert np.array_equal(out.mask, mask)
        assert not np.array_equal(out.current, img)

    def test_requires_mask(self, rng):
        img, mask = self.phantom_like(rng)
        s = make_sample_from(img, mask)
        s.mask = None
        with pytest.raises(ValueError):
            dataio.augment(s, 0)


class TestSampleInvariant:
    def test_force_window_enforced(self):
        img = np.zeros((4, 4), dtype=np.uint8)
        with pytest.raises(ValueError):
            Sample(current=img, mask=img, key_min=img, key_max=img,
                   f_cur=9.0, f_min=0.0, f_max=5.0)


class TestFrameSequenceInvariants:
    def test_mask_values_checked(self):
        with pytest.raises(ValueError):
            FrameSequence(frames=np.zeros((2, 4, 4), np.uint8),
                          masks=np.full((2, 4, 4), 7, np.uint8))

    def test_mask_shape_checked(self):
        with pytest.raises(ValueError):
            FrameSequence(frames=np.zeros((2, 4, 4), np.uint8),
                          masks=np.zeros((2, 5, 4), np.uint8))
