"""Tests for the training loop, schedule, and batch gradients."""

from __future__ import annotations

import math

import numpy as np
import pytest

from echobench.data import Report, Study, VideoClip, ViewLabel
from echobench.encoders import EncoderDims, EncodingMode, init_params
from echobench.errors import (
    EmptyInputError,
    InvalidInputError,
    MissingViewError,
    TrainingDivergedError,
    ValidationError,
)
from echobench.rng import Rng
from echobench.synthgen import GenConfig, generate_dataset
from echobench.trainer import (
    TrainConfig,
    TrainHistory,
    batch_loss_and_grads,
    eligible_studies,
    lr_at,
    make_training_pairs,
    train,
)


class TestTrainConfig:
    def test_video_batch_default(self):
        cfg = TrainConfig(mode=EncodingMode.MULTI_VIDEO)
        assert cfg.batch_size == 64

    def test_image_batch_default_is_larger(self):
        cfg = TrainConfig(mode=EncodingMode.SINGLE_IMAGE)
        assert cfg.batch_size == 256

    def test_small_batch_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(mode=EncodingMode.MULTI_VIDEO, batch_size=1)

    def test_warmup_must_precede_total(self):
        with pytest.raises(ValidationError):
            TrainConfig(
                mode=EncodingMode.MULTI_VIDEO, warmup_steps=100, total_steps=100
            )

    def test_negative_lr_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(mode=EncodingMode.MULTI_VIDEO, lr_peak=-1.0)

    def test_bad_beta_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(mode=EncodingMode.MULTI_VIDEO, adam_beta2=1.0)


class TestLrSchedule:
    def _cfg(self, **kw):
        defaults = dict(
            mode=EncodingMode.MULTI_VIDEO,
            lr_peak=2.0,
            warmup_steps=100,
            total_steps=1100,
        )
        defaults.update(kw)
        return TrainConfig(**defaults)

    def test_zero_at_step_zero(self):
        assert lr_at(0, self._cfg()) == 0.0

    def test_peak_at_warmup_end(self):
        assert lr_at(100, self._cfg()) == 2.0

    def test_half_peak_at_cosine_midpoint(self):
        midpoint = (100 + 1100) // 2
        assert lr_at(midpoint, self._cfg()) == pytest.approx(1.0, abs=1e-12)

    def test_zero_at_total(self):
        assert lr_at(1100, self._cfg()) == pytest.approx(0.0, abs=1e-15)

    def test_out_of_range_rejected(self):
        cfg = self._cfg()
        with pytest.raises(InvalidInputError):
            lr_at(-1, cfg)
        with pytest.raises(InvalidInputError):
            lr_at(1101, cfg)

    def test_continuous_at_warmup_boundary(self):
        cfg = self._cfg()
        gap = lr_at(100, cfg) - lr_at(99, cfg)
        assert abs(gap) < 2.5 * cfg.lr_peak / cfg.warmup_steps

    def test_shape(self):
        cfg = self._cfg()
        values = [lr_at(s, cfg) for s in range(0, 1101)]
        warm = values[: cfg.warmup_steps + 1]
        decay = values[cfg.warmup_steps :]
        assert all(b > a for a, b in zip(warm, warm[1:]))
        assert all(b < a for a, b in zip(decay, decay[1:]))


def _manual_study(study_id, views, frames_per_clip=4, frame_dim=5, text_dim=3):
    rng = Rng(hash(study_id) % (2**32))
    clips = [
        VideoClip(view=v, frames=rng.standard_normal((frames_per_clip, frame_dim)))
        for v in views
    ]
    return Study(
        study_id=study_id,
        patient_id="p_" + study_id,
        clips=clips,
        report=Report(features=rng.standard_normal((text_dim,))),
    )


@pytest.fixture(scope="module")
def corpus():
    return generate_dataset(GenConfig(n_studies=24, seed=5))


class TestMakeTrainingPairs:
    def test_multi_view_epoch_covers_every_clip(self, corpus):
        total_clips = sum(len(s.clips) for s in corpus)
        stream = make_training_pairs(corpus, EncodingMode.MULTI_VIDEO, Rng(0))
        seen = {id(frames) for frames, _ in (next(stream) for _ in range(total_clips))}
        expected = {id(c.frames) for s in corpus for c in s.clips}
        assert seen == expected

    def test_restricted_modes_sample_only_ch4(self, corpus):
        ch4_ids = {
            id(c.frames)
            for s in corpus
            for c in s.clips_for_view(ViewLabel.CH4)
        }
        stream = make_training_pairs(corpus, EncodingMode.SINGLE_VIDEO, Rng(1))
        for _ in range(3 * len(ch4_ids)):
            frames, _ = next(stream)
            assert id(frames) in ch4_ids

    def test_image_mode_yields_single_frames(self, corpus):
        stream = make_training_pairs(corpus, EncodingMode.SINGLE_IMAGE, Rng(2))
        frame_dim = corpus[0].clips[0].frame_dim
        for _ in range(50):
            frame, report = next(stream)
            assert frame.shape == (frame_dim,)
            assert report.features.ndim == 1

    def test_image_frames_come_from_ch4_rows(self, corpus):
        by_id = {
            id(c.frames): c.frames
            for s in corpus
            for c in s.clips_for_view(ViewLabel.CH4)
        }
        stream = make_training_pairs(corpus, EncodingMode.SINGLE_IMAGE, Rng(3))
        for _ in range(30):
            frame, _ = next(stream)
            assert any(
                any(np.array_equal(frame, row) for row in frames)
                for frames in by_id.values()
            )

    def test_fixed_seed_reproduces_stream(self, corpus):
        first = make_training_pairs(corpus, EncodingMode.SINGLE_IMAGE, Rng(7))
        second = make_training_pairs(corpus, EncodingMode.SINGLE_IMAGE, Rng(7))
        for _ in range(40):
            f1, r1 = next(first)
            f2, r2 = next(second)
            assert np.array_equal(f1, f2)
            assert r1 is r2

    def test_no_eligible_clips_rejected(self):
        lax_only = [_manual_study("s1", [ViewLabel.LAX, ViewLabel.SAX])]
        with pytest.raises(MissingViewError):
            next(make_training_pairs(lax_only, EncodingMode.SINGLE_VIDEO, Rng(0)))

    def test_eligible_studies_filter(self):
        studies = [
            _manual_study("a", [ViewLabel.LAX]),
            _manual_study("b", [ViewLabel.CH4, ViewLabel.LAX]),
        ]
        assert len(eligible_studies(studies, EncodingMode.MULTI_VIDEO)) == 2
        kept = eligible_studies(studies, EncodingMode.SINGLE_VIDEO)
        assert [s.study_id for s in kept] == ["b"]


def _finite_difference_grads(params, mode, videos, feats, eps=1e-5):
    """Central differences over every parameter coordinate.

    eps balances truncation against round-off; at 1e-6 the round-off
    term alone exceeds the tolerance on coordinates near 1e-5.
    """
    numeric = {}
    for name, tensor in params.tensors():
        grad = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            original = tensor[idx]
            tensor[idx] = original + eps
            up, _ = batch_loss_and_grads(params, mode, videos, feats)
            tensor[idx] = original - eps
            down, _ = batch_loss_and_grads(params, mode, videos, feats)
            tensor[idx] = original
            grad[idx] = (up - down) / (2.0 * eps)
            it.iternext()
        numeric[name] = grad
    return numeric


def _relative_error(a, n):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return np.max(np.abs(a - n) / scale)


class TestBatchGradients:
    DIMS = EncoderDims(
        frame_dim=5, text_dim=4, hidden=6, frame_embed_dim=4, embed_dim=7
    )

    def test_video_mode_gradients_match_finite_differences(self):
        rng = Rng(42)
        params = init_params(self.DIMS, rng)
        videos = rng.standard_normal((3, 4, 5))
        feats = rng.standard_normal((3, 4))
        _, analytic = batch_loss_and_grads(
            params, EncodingMode.MULTI_VIDEO, videos, feats
        )
        numeric = _finite_difference_grads(
            params, EncodingMode.MULTI_VIDEO, videos, feats
        )
        for name in numeric:
            assert _relative_error(analytic[name], numeric[name]) < 2e-5, name

    def test_image_mode_gradients_match_finite_differences(self):
        rng = Rng(43)
        params = init_params(self.DIMS, rng)
        frames = rng.standard_normal((4, 5))
        feats = rng.standard_normal((4, 4))
        _, analytic = batch_loss_and_grads(
            params, EncodingMode.SINGLE_IMAGE, frames, feats
        )
        numeric = _finite_difference_grads(
            params, EncodingMode.SINGLE_IMAGE, frames, feats
        )
        for name in numeric:
            assert _relative_error(analytic[name], numeric[name]) < 2e-5, name

    def test_image_mode_leaves_motion_projection_untouched(self):
        rng = Rng(44)
        params = init_params(self.DIMS, rng)
        frames = rng.standard_normal((4, 5))
        feats = rng.standard_normal((4, 4))
        _, grads = batch_loss_and_grads(
            params, EncodingMode.SINGLE_IMAGE, frames, feats
        )
        df = self.DIMS.frame_embed_dim
        assert np.all(grads["wp"][:, df:] == 0.0)
        assert np.any(grads["wp"][:, :df] != 0.0)

    def test_wrong_rank_rejected(self):
        rng = Rng(45)
        params = init_params(self.DIMS, rng)
        with pytest.raises(InvalidInputError):
            batch_loss_and_grads(
                params,
                EncodingMode.MULTI_VIDEO,
                rng.standard_normal((3, 5)),
                rng.standard_normal((3, 4)),
            )
        with pytest.raises(InvalidInputError):
            batch_loss_and_grads(
                params,
                EncodingMode.SINGLE_IMAGE,
                rng.standard_normal((3, 4, 5)),
                rng.standard_normal((3, 4)),
            )


def _tiny_cfg(mode=EncodingMode.MULTI_VIDEO, **kw):
    defaults = dict(
        mode=mode,
        batch_size=8,
        lr_peak=1e-3,
        warmup_steps=5,
        total_steps=25,
        eval_interval=10,
        seed=11,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def split_corpus(corpus):
    train_set = corpus[:18]
    valid_set = corpus[18:]
    return train_set, valid_set


class TestTrain:
    def test_zero_lr_is_a_no_op(self, split_corpus):
        train_set, valid_set = split_corpus
        dims = EncoderDims()
        start = init_params(dims, Rng(900))
        final, _ = train(
            _tiny_cfg(lr_peak=0.0),
            train_set,
            valid_set,
            initial_params=start,
        )
        for name, tensor in start.tensors():
            assert np.array_equal(tensor, getattr(final, name)), name

    def test_same_seed_bit_identical(self, split_corpus):
        train_set, valid_set = split_corpus
        p1, h1 = train(_tiny_cfg(), train_set, valid_set)
        p2, h2 = train(_tiny_cfg(), train_set, valid_set)
        for name, tensor in p1.tensors():
            assert np.array_equal(tensor, getattr(p2, name)), name
        assert h1.steps == h2.steps
        assert h1.evals == h2.evals

    def test_history_structure(self, split_corpus):
        train_set, valid_set = split_corpus
        cfg = _tiny_cfg()
        _, history = train(cfg, train_set, valid_set)
        assert [r.step for r in history.steps] == list(range(25))
        for record in history.steps:
            assert record.lr == lr_at(record.step, cfg)
        assert [r.step for r in history.evals] == [9, 19, 24]
        for record in history.evals:
            assert record.mcmrr_v2r >= 1.0
            assert record.mcmrr_r2v >= 1.0
        history.validate()

    def test_history_round_trip(self, split_corpus):
        train_set, valid_set = split_corpus
        _, history = train(_tiny_cfg(), train_set, valid_set)
        restored = TrainHistory.from_dict(history.to_dict())
        assert restored.steps == history.steps
        assert restored.evals == history.evals

    def test_temperature_stays_clamped(self, split_corpus):
        train_set, valid_set = split_corpus
        params, _ = train(_tiny_cfg(lr_peak=0.5), train_set, valid_set)
        assert math.log(0.01) <= float(params.log_temperature) <= math.log(100.0)

    def test_inference_only_mode_rejected(self, split_corpus):
        train_set, valid_set = split_corpus
        with pytest.raises(InvalidInputError):
            train(_tiny_cfg(mode=EncodingMode.MULTI_VIDEO_4CH), train_set, valid_set)

    def test_empty_sets_rejected(self, split_corpus):
        train_set, valid_set = split_corpus
        with pytest.raises(EmptyInputError):
            train(_tiny_cfg(), [], valid_set)
        with pytest.raises(EmptyInputError):
            train(_tiny_cfg(), train_set, [])

    def test_unusable_validation_set_rejected(self, split_corpus):
        train_set, _ = split_corpus
        lax_only = [_manual_study("v1", [ViewLabel.LAX], frame_dim=32, text_dim=24)]
        with pytest.raises(MissingViewError):
            train(
                _tiny_cfg(mode=EncodingMode.SINGLE_VIDEO),
                train_set,
                lax_only,
            )

    def test_divergence_aborts(self, split_corpus):
        train_set, valid_set = split_corpus
        start = init_params(EncoderDims(), Rng(901))
        start.w2[0, 0] = np.inf
        with np.errstate(invalid="ignore"):
            with pytest.raises(TrainingDivergedError, match="step 0"):
                train(_tiny_cfg(), train_set, valid_set, initial_params=start)

    def test_loss_decreases(self):
        studies = generate_dataset(GenConfig(n_studies=60, seed=77))
        train_set = studies[:50]
        valid_set = studies[50:]
        cfg = TrainConfig(
            mode=EncodingMode.MULTI_VIDEO,
            batch_size=32,
            lr_peak=1e-3,
            warmup_steps=30,
            total_steps=300,
            eval_interval=300,
            seed=3,
        )
        _, history = train(cfg, train_set, valid_set)
        first = np.mean([r.loss for r in history.steps[:10]])
        last = np.mean([r.loss for r in history.steps[-30:]])
        assert last < first
        assert history.steps[0].loss == pytest.approx(math.log(32), rel=0.2)


class TestDeskRun:
    """Full-length training on a default-knob 2,000-study corpus."""

    def test_desk_run_beats_uniform_baseline_by_half(self):
        studies = generate_dataset(GenConfig(n_studies=2050, seed=11))
        train_set = studies[:2000]
        valid_set = studies[2000:]
        cfg = TrainConfig(mode=EncodingMode.SINGLE_VIDEO, seed=41, eval_interval=5000)
        _, history = train(cfg, train_set, valid_set)
        losses = [r.loss for r in history.steps]
        n = len(losses)
        assert n == cfg.total_steps
        first_percent = float(np.mean(losses[: n // 100]))
        last_tenth = float(np.mean(losses[-n // 10 :]))
        assert last_tenth < first_percent
        assert losses[-1] < math.log(cfg.batch_size) / 2
