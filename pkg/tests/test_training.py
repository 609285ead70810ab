"""Training loop: determinism, variants, logging, degenerate cases."""

import numpy as np
import pytest

from fgseg import phantom
from fgseg.network import UNetTinyConfig, count_params, default_neck_config
from fgseg.training import (VARIANTS, TrainConfig, evaluate, log_to_csv,
                            make_sample, sample_weights, train)

MCFG = UNetTinyConfig(base_channels=8, depth=2, image_size=32)
NCFG = default_neck_config(MCFG)
PCFG = phantom.PhantomConfig(image_size=32, frames_per_sequence=6,
                             artery_center=(10.0, 16.0), artery_radius=4.0,
                             vein_center=(22.0, 16.0), vein_semi_axes=(4.0, 4.0),
                             radius_range=(3.0, 4.5))


def tiny_videos(n, tag, offset=0):
    out = []
    for i in range(n):
        v = phantom.generate_sequence(PCFG, np.random.SeedSequence([321, offset + i]))
        v.video_id = f"{tag}{i:03d}"
        out.append(v)
    return out


@pytest.fixture(scope="module")
def tiny_sets():
    return tiny_videos(3, "tr"), tiny_videos(2, "va", offset=100)


def fast_cfg(**kw):
    base = dict(learning_rate=5e-4, max_epochs=2, frames_per_seq=2,
                val_frames_per_seq=2, batch_size=4, augment=True, seed=3)
    base.update(kw)
    return TrainConfig(**base)


class TestMakeSample:
    def test_force_selected_keys(self, tiny_sets):
        video = tiny_sets[0][0]
        s = make_sample(video, 2, "fg_full")
        mags = video.trace.fz_magnitudes()
        assert s.f_min == mags.min() and s.f_max == mags.max()
        assert np.array_equal(s.key_min, video.frames[int(np.argmin(mags))])
        assert np.array_equal(s.key_max, video.frames[int(np.argmax(mags))])

    def test_preceding_frame_keys(self, tiny_sets):
        video = tiny_sets[0][0]
        s = make_sample(video, 3, "fg_wo_kfs_fbw")
        assert np.array_equal(s.key_min, video.frames[2])
        assert np.array_equal(s.key_max, video.frames[1])
        assert s.f_min == s.f_cur == s.f_max

    def test_weights_per_variant(self, tiny_sets):
        video = tiny_sets[0][0]
        s = make_sample(video, 2, "fg_full")
        w_full = sample_weights(s, "fg_full")
        assert w_full.w_min + w_full.w_max == 1.0
        for variant in ("fg_wo_fbw", "fg_wo_kfs_fbw"):
            w = sample_weights(make_sample(video, 2, variant), variant)
            assert (w.w_min, w.w_max) == (0.5, 0.5)

    def test_unknown_variant(self, tiny_sets):
        with pytest.raises(ValueError):
            make_sample(tiny_sets[0][0], 0, "fg_extra")


class TestTrainLoop:
    def test_same_seed_identical_logs(self, tiny_sets):
        train_v, val_v = tiny_sets
        r1 = train(train_v, val_v, MCFG, NCFG, fast_cfg(), "fg_full")
        r2 = train(train_v, val_v, MCFG, NCFG, fast_cfg(), "fg_full")
        assert len(r1.log) == len(r2.log) == 3
        for a, b in zip(r1.log, r2.log):
            assert (a.train_loss == b.train_loss or
                    (np.isnan(a.train_loss) and np.isnan(b.train_loss)))
            assert a.val_loss == b.val_loss and a.miou == b.miou and a.lr == b.lr

    def test_zero_epochs_returns_init(self, tiny_sets):
        train_v, val_v = tiny_sets
        res = train(train_v, val_v, MCFG, NCFG, fast_cfg(max_epochs=0), "baseline")
        from fgseg.network import init_params
        init = init_params(MCFG, None, 3)
        assert set(res.params) == set(init)
        for k in init:
            assert np.array_equal(res.params[k].data, init[k].data)
        assert len(res.log) == 1  # the pre-training validation row only

    def test_different_seeds_differ(self, tiny_sets):
        train_v, val_v = tiny_sets
        r1 = train(train_v, val_v, MCFG, NCFG, fast_cfg(seed=1), "baseline")
        r2 = train(train_v, val_v, MCFG, NCFG, fast_cfg(seed=2), "baseline")
        assert r1.log[-1].train_loss != r2.log[-1].train_loss

    def test_all_variants_run(self, tiny_sets):
        train_v, val_v = tiny_sets
        for variant in VARIANTS:
            res = train(train_v, val_v, MCFG, NCFG,
                        fast_cfg(max_epochs=1), variant)
            assert np.isfinite(res.log[-1].val_loss)

    def test_baseline_has_no_neck_params(self, tiny_sets):
        train_v, val_v = tiny_sets
        res = train(train_v, val_v, MCFG, NCFG, fast_cfg(max_epochs=0), "baseline")
        assert not any(k.startswith("neck.") for k in res.params)

    def test_class_weight_length_checked(self, tiny_sets):
        train_v, val_v = tiny_sets
        with pytest.raises(ValueError):
            train(train_v, val_v, MCFG, NCFG,
                  fast_cfg(class_weights=(1.0, 2.0)), "baseline")

    def test_log_csv_format(self, tiny_sets, tmp_path):
        train_v, val_v = tiny_sets
        res = train(train_v, val_v, MCFG, NCFG, fast_cfg(max_epochs=1), "baseline")
        path = tmp_path / "log.csv"
        log_to_csv(res.log, path, header_comment="started 2026-01-01T00:00:00Z")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("#")
        assert lines[1] == "epoch,train_loss,val_loss,miou,dice,lr"
        assert len(lines) == 2 + len(res.log)


class TestEvaluate:
    def test_deterministic(self, tiny_sets):
        train_v, val_v = tiny_sets
        res = train(train_v, val_v, MCFG, NCFG, fast_cfg(max_epochs=1), "fg_full")
        l1, rep1 = evaluate(val_v, res.params, MCFG, NCFG, "fg_full",
                            (1.0, 30.7, 23.1))
        l2, rep2 = evaluate(val_v, res.params, MCFG, NCFG, "fg_full",
                            (1.0, 30.7, 23.1))
        assert l1 == l2 and rep1.miou == rep2.miou

    def test_subset_frame_selection(self, tiny_sets):
        _, val_v = tiny_sets
        from fgseg.network import init_params
        params = init_params(MCFG, None, 0)
        _, rep = evaluate(val_v, params, MCFG, None, "baseline",
                          (1.0, 30.7, 23.1), frames_per_seq=2)
        assert rep.sample_count == 2 * len(val_v)
