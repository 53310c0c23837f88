"""Core dataset model: studies, clips, reports, and patient-level splits.

A study is one imaging session: a handful of short video clips, each tagged
with the probe view it was recorded from, plus a single structured report.
Studies belong to patients, and train/valid/test membership is decided per
patient so no patient straddles a split boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    InvalidInputError,
    ValidationError,
)
from .rng import Rng


class ViewLabel(Enum):
    """Probe view a clip was recorded from."""

    LAX = "LAX"
    SAX = "SAX"
    CH2 = "2CH"
    CH3 = "3CH"
    CH4 = "4CH"


#: Deterministic iteration order for anything keyed by view.
VIEW_ORDER: tuple[ViewLabel, ...] = (
    ViewLabel.LAX,
    ViewLabel.SAX,
    ViewLabel.CH2,
    ViewLabel.CH3,
    ViewLabel.CH4,
)


def _frozen_array(x, name: str, ndim: int) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyInputError(f"{name} must be non-empty")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass
class VideoClip:
    """One clip: a (frames, features) float64 array plus its view label.

    Frames are already feature vectors (this benchmark has no pixel stage);
    the array is frozen after construction.
    """

    view: ViewLabel
    frames: np.ndarray

    def __post_init__(self):
        if not isinstance(self.view, ViewLabel):
            raise InvalidInputError(f"view must be a ViewLabel, got {self.view!r}")
        self.frames = _frozen_array(self.frames, "frames", ndim=2)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class Report:
    """Structured report: a numeric feature vector and optional display text."""

    features: np.ndarray
    display_text: str | None = None

    def __post_init__(self):
        self.features = _frozen_array(self.features, "features", ndim=1)


@dataclass
class Study:
    """One imaging session: clips from one or more views plus its report."""

    study_id: str
    patient_id: str
    clips: list[VideoClip]
    report: Report

    def __post_init__(self):
        if not self.study_id:
            raise InvalidInputError("study_id must be non-empty")
        if not self.patient_id:
            raise InvalidInputError("patient_id must be non-empty")
        if not self.clips:
            raise EmptyInputError(f"study {self.study_id} has no clips")

    def clips_for_view(self, view: ViewLabel) -> list[VideoClip]:
        return [c for c in self.clips if c.view is view]

    def has_view(self, view: ViewLabel) -> bool:
        return any(c.view is view for c in self.clips)


@dataclass(frozen=True)
class SplitAssignment:
    """Patient-level partition into train / valid / test."""

    train: frozenset[str]
    valid: frozenset[str]
    test: frozenset[str]

    def split_of(self, patient_id: str) -> str | None:
        if patient_id in self.train:
            return "train"
        if patient_id in self.valid:
            return "valid"
        if patient_id in self.test:
            return "test"
        return None

    @property
    def all_patients(self) -> frozenset[str]:
        return self.train | self.valid | self.test


def split_patients(
    patient_ids,
    ratios: tuple[float, float, float],
    rng: Rng,
) -> SplitAssignment:
    """Partition patients into train/valid/test at the given ratios.

    The order of patient_ids does not leak into the assignment beyond the
    shuffle: valid and test receive round(n * ratio) patients each and train
    takes the remainder.

    Raises:
        ValidationError: on duplicate ids or malformed ratios.
        EmptyInputError: if patient_ids is empty.
    """
    ids = list(patient_ids)
    if not ids:
        raise EmptyInputError("patient_ids must be non-empty")
    if len(set(ids)) != len(ids):
        seen, dupes = set(), []
        for p in ids:
            if p in seen:
                dupes.append(p)
            seen.add(p)
        raise ValidationError(f"duplicate patient ids: {sorted(set(dupes))[:5]}")
    if len(ratios) != 3:
        raise ValidationError(f"need exactly 3 ratios, got {len(ratios)}")
    if any(not (r > 0.0) for r in ratios):
        raise ValidationError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got sum {sum(ratios)!r}")

    rng.shuffle(ids)
    n = len(ids)
    n_valid = int(n * ratios[1] + 0.5)
    n_test = int(n * ratios[2] + 0.5)
    n_train = n - n_valid - n_test
    if n_train < 0:
        raise ValidationError(f"ratios {ratios} leave no patients for train")
    return SplitAssignment(
        train=frozenset(ids[:n_train]),
        valid=frozenset(ids[n_train : n_train + n_valid]),
        test=frozenset(ids[n_train + n_valid :]),
    )


def filter_test_studies(studies) -> list[Study]:
    """Keep only studies that carry at least one 4CH clip.

    The evaluation pool is restricted this way so that single-view and
    multi-view encoders can be compared on identical queries.
    """
    return [s for s in studies if s.has_view(ViewLabel.CH4)]


@dataclass(frozen=True)
class DatasetViolation:
    """One structural problem found by validate_dataset."""

    kind: str  # "duplicate_id" | "clip_shape" | "report_shape"
    study_id: str
    message: str


def validate_dataset(
    studies,
    frames_per_clip: int | None = None,
    frame_dim: int | None = None,
    text_dim: int | None = None,
) -> list[DatasetViolation]:
    """Check a corpus for structural problems; an empty list means valid.

    Expected shapes default to those of the first clip and report so a
    self-consistent corpus needs no extra arguments. Empty-clip studies
    cannot occur here (Study rejects them at construction), so the checks
    cover duplicate ids and shape mismatches.
    """
    studies = list(studies)
    violations: list[DatasetViolation] = []
    if not studies:
        return violations

    if frames_per_clip is None:
        frames_per_clip = studies[0].clips[0].num_frames
    if frame_dim is None:
        frame_dim = studies[0].clips[0].frame_dim
    if text_dim is None:
        text_dim = studies[0].report.features.shape[0]

    seen: set[str] = set()
    for study in studies:
        if study.study_id in seen:
            violations.append(
                DatasetViolation(
                    kind="duplicate_id",
                    study_id=study.study_id,
                    message=f"study_id {study.study_id!r} appears more than once",
                )
            )
        seen.add(study.study_id)
        for i, clip in enumerate(study.clips):
            if clip.frames.shape != (frames_per_clip, frame_dim):
                violations.append(
                    DatasetViolation(
                        kind="clip_shape",
                        study_id=study.study_id,
                        message=(
                            f"clip {i} has shape {clip.frames.shape}, "
                            f"expected {(frames_per_clip, frame_dim)}"
                        ),
                    )
                )
        if study.report.features.shape != (text_dim,):
            violations.append(
                DatasetViolation(
                    kind="report_shape",
                    study_id=study.study_id,
                    message=(
                        f"report has shape {study.report.features.shape}, "
                        f"expected {(text_dim,)}"
                    ),
                )
            )
    return violations
