import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echobench.data import (
    Report,
    SplitAssignment,
    Study,
    VideoClip,
    ViewLabel,
    filter_test_studies,
    split_patients,
    validate_dataset,
)
from echobench.errors import (
    DimensionError,
    EmptyInputError,
    InvalidInputError,
    ValidationError,
)
from echobench.rng import Rng


def make_study(study_id="s1", patient_id="p1", views=(ViewLabel.CH4,), t=4, f=3):
    clips = [VideoClip(view=v, frames=np.zeros((t, f))) for v in views]
    return Study(
        study_id=study_id,
        patient_id=patient_id,
        clips=clips,
        report=Report(features=np.zeros(5)),
    )


class TestVideoClip:
    def test_shape_properties(self):
        clip = VideoClip(view=ViewLabel.LAX, frames=np.ones((8, 3)))
        assert clip.num_frames == 8
        assert clip.frame_dim == 3

    def test_frames_frozen(self):
        clip = VideoClip(view=ViewLabel.LAX, frames=np.ones((2, 2)))
        with pytest.raises(ValueError):
            clip.frames[0, 0] = 5.0

    def test_rejects_1d(self):
        with pytest.raises(DimensionError):
            VideoClip(view=ViewLabel.SAX, frames=np.ones(4))

    def test_rejects_nan(self):
        with pytest.raises(InvalidInputError):
            VideoClip(view=ViewLabel.SAX, frames=np.full((2, 2), np.nan))

    def test_rejects_bad_view(self):
        with pytest.raises(InvalidInputError):
            VideoClip(view="4CH", frames=np.ones((2, 2)))


class TestStudy:
    def test_view_helpers(self):
        s = make_study(views=(ViewLabel.LAX, ViewLabel.CH4, ViewLabel.CH4))
        assert s.has_view(ViewLabel.CH4)
        assert not s.has_view(ViewLabel.SAX)
        assert len(s.clips_for_view(ViewLabel.CH4)) == 2

    def test_rejects_empty_clips(self):
        with pytest.raises(EmptyInputError):
            Study(
                study_id="s",
                patient_id="p",
                clips=[],
                report=Report(features=np.zeros(3)),
            )

    def test_rejects_blank_ids(self):
        with pytest.raises(InvalidInputError):
            make_study(study_id="")


class TestSplitPatients:
    def test_paper_scale_counts(self):
        ids = [f"p{i}" for i in range(1000)]
        split = split_patients(ids, (0.875, 0.025, 0.1), Rng(1))
        assert len(split.train) == 875
        assert len(split.valid) == 25
        assert len(split.test) == 100

    def test_single_patient_goes_to_train(self):
        split = split_patients(["only"], (0.875, 0.025, 0.1), Rng(1))
        assert split.train == frozenset(["only"])
        assert not split.valid
        assert not split.test

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValidationError):
            split_patients(["a", "a"], (0.875, 0.025, 0.1), Rng(1))

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            split_patients([], (0.875, 0.025, 0.1), Rng(1))

    def test_bad_ratios_rejected(self):
        with pytest.raises(ValidationError):
            split_patients(["a"], (0.5, 0.5), Rng(1))
        with pytest.raises(ValidationError):
            split_patients(["a"], (0.5, 0.4, 0.2), Rng(1))
        with pytest.raises(ValidationError):
            split_patients(["a"], (1.1, -0.05, -0.05), Rng(1))

    def test_deterministic_given_seed(self):
        ids = [f"p{i}" for i in range(97)]
        a = split_patients(ids, (0.875, 0.025, 0.1), Rng(5))
        b = split_patients(ids, (0.875, 0.025, 0.1), Rng(5))
        assert a == b

    @given(st.integers(min_value=1, max_value=400), st.integers(min_value=0, max_value=2**32))
    @settings(max_examples=60)
    def test_partition_properties(self, n, seed):
        ids = [f"p{i}" for i in range(n)]
        split = split_patients(ids, (0.875, 0.025, 0.1), Rng(seed))
        assert split.train | split.valid | split.test == set(ids)
        assert not (split.train & split.valid)
        assert not (split.train & split.test)
        assert not (split.valid & split.test)
        # Each non-train split holds round(n * ratio) patients.
        assert len(split.valid) == int(n * 0.025 + 0.5)
        assert len(split.test) == int(n * 0.1 + 0.5)

    def test_split_of(self):
        split = SplitAssignment(
            train=frozenset(["a"]), valid=frozenset(["b"]), test=frozenset(["c"])
        )
        assert split.split_of("a") == "train"
        assert split.split_of("b") == "valid"
        assert split.split_of("c") == "test"
        assert split.split_of("zzz") is None


class TestFilterTestStudies:
    def test_keeps_only_ch4(self):
        with_ch4 = make_study("s1", views=(ViewLabel.LAX, ViewLabel.CH4))
        without = make_study("s2", views=(ViewLabel.LAX, ViewLabel.SAX))
        kept = filter_test_studies([with_ch4, without])
        assert [s.study_id for s in kept] == ["s1"]

    def test_idempotent(self):
        studies = [
            make_study("s1", views=(ViewLabel.CH4,)),
            make_study("s2", views=(ViewLabel.CH2,)),
        ]
        once = filter_test_studies(studies)
        assert filter_test_studies(once) == once

    def test_empty_input(self):
        assert filter_test_studies([]) == []


class TestValidateDataset:
    def test_clean_corpus(self):
        studies = [make_study(f"s{i}", f"p{i}") for i in range(3)]
        assert validate_dataset(studies) == []

    def test_duplicate_ids_flagged(self):
        studies = [make_study("dup", "p1"), make_study("dup", "p2")]
        violations = validate_dataset(studies)
        assert [v.kind for v in violations] == ["duplicate_id"]
        assert violations[0].study_id == "dup"

    def test_short_clip_flagged(self):
        good = make_study("s1", t=32)
        bad = make_study("s2", t=31)
        violations = validate_dataset([good, bad])
        assert [v.kind for v in violations] == ["clip_shape"]
        assert "31" in violations[0].message

    def test_report_shape_flagged(self):
        good = make_study("s1")
        bad = make_study("s2")
        bad.report = Report(features=np.zeros(7))
        violations = validate_dataset([good, bad])
        assert [v.kind for v in violations] == ["report_shape"]

    def test_explicit_expected_shapes(self):
        studies = [make_study("s1", t=4, f=3)]
        violations = validate_dataset(studies, frames_per_clip=9, frame_dim=3)
        assert [v.kind for v in violations] == ["clip_shape"]

    def test_empty_corpus_valid(self):
        assert validate_dataset([]) == []
