"""Synthetic corpus generator.

Each study is driven by a latent condition vector on a severity grid
{0, 1/3, 2/3, 1}: a static block (anatomy) and a motion block (dynamics).
Clips render the latents through per-view mixing matrices. Two properties
are built in deliberately:

* Each view exposes only a masked subset of the static block, and the 4CH
  mask alone does not cover it, so single-view encoders are blind to part of
  the anatomy that the report describes. The union of all five views covers
  everything.
* Motion latents enter only through a sinusoid with a random per-clip phase.
  A full clip determines the motion amplitudes; any single frame confounds
  amplitude with phase, so still-image encoders cannot recover them.

Reports mix the full latent vector, so they describe information that no
single view (and no single frame) fully carries.

Everything is a pure function of the config and its seed: per-study and
per-clip RNG streams are derived with stable integer tags, so any clip can
be regenerated bit-identically in isolation.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .data import VIEW_ORDER, Report, Study, VideoClip, ViewLabel
from .errors import InvalidInputError, ValidationError
from .rng import Rng, derive_seed

#: Severity grid each latent component is drawn from.
SEVERITY_GRID: tuple[float, ...] = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)
SEVERITY_NAMES: tuple[str, ...] = ("none", "mild", "moderate", "severe")

#: Long-run fraction of clips carried by each view.
DEFAULT_VIEW_PROPORTIONS: dict[ViewLabel, float] = {
    ViewLabel.LAX: 0.269,
    ViewLabel.SAX: 0.256,
    ViewLabel.CH2: 0.088,
    ViewLabel.CH3: 0.140,
    ViewLabel.CH4: 0.247,
}

#: Expected clips per study before per-view truncation.
DEFAULT_CLIPS_PER_STUDY = 6.0

# Stream tags for derive_seed; values are arbitrary but frozen.
_TAG_LATENT = 1
_TAG_COUNTS = 2
_TAG_CLIP = 3
_TAG_REPORT = 4
_TAG_MIXING = 5

_VIEW_INDEX = {view: i for i, view in enumerate(VIEW_ORDER)}


def default_view_masks(k_static: int = 10) -> dict[ViewLabel, tuple[int, ...]]:
    """Static-index masks per view: 4CH sees a majority block but never all.

    The remaining indices are dealt to the other four views in overlapping
    pairs, so every static component is visible from at least one view and
    the non-4CH components from exactly two.
    """
    if k_static < 2:
        raise InvalidInputError(f"k_static must be >= 2, got {k_static}")
    m = max(1, min(k_static - 1, (6 * k_static) // 10))
    ch4 = tuple(range(m))
    rest = list(range(m, k_static))
    masks: dict[ViewLabel, tuple[int, ...]] = {ViewLabel.CH4: ch4}
    others = (ViewLabel.LAX, ViewLabel.SAX, ViewLabel.CH2, ViewLabel.CH3)
    for j, view in enumerate(others):
        picked = set(rest[j::4]) | set(rest[(j + 1) % 4 :: 4])
        picked |= {j % m, (j + 1) % m}
        masks[view] = tuple(sorted(picked))
    return masks


def default_view_clip_rate() -> dict[ViewLabel, float]:
    """Poisson rate of clips per study for each view."""
    return {
        view: DEFAULT_CLIPS_PER_STUDY * prop
        for view, prop in DEFAULT_VIEW_PROPORTIONS.items()
    }


def default_view_motion_masks(k_motion: int = 6) -> dict[ViewLabel, tuple[int, ...]]:
    """Motion-index masks per view: by default every view shows all motion."""
    if k_motion < 1:
        raise InvalidInputError(f"k_motion must be >= 1, got {k_motion}")
    full = tuple(range(k_motion))
    return {view: full for view in VIEW_ORDER}


@dataclass
class GenConfig:
    """Knobs for the synthetic corpus.

    Defaults are desk scale: tiny feature dims, a few thousand studies.
    """

    n_studies: int
    seed: int = 0
    k_static: int = 10
    k_motion: int = 6
    frame_dim: int = 32
    text_dim: int = 24
    frames_per_clip: int = 32
    noise_frame: float = 0.1
    noise_report: float = 0.05
    severity_probs: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    view_masks: dict[ViewLabel, tuple[int, ...]] = field(
        default_factory=default_view_masks
    )
    view_motion_masks: dict[ViewLabel, tuple[int, ...]] = field(
        default_factory=default_view_motion_masks
    )
    view_clip_rate: dict[ViewLabel, float] = field(
        default_factory=default_view_clip_rate
    )
    max_clips_per_view: int = 3
    patient_pool: int | None = None
    static_scale: float = 1.0
    motion_scale: float = 1.0

    def validate(self) -> None:
        if self.n_studies < 1:
            raise InvalidInputError(f"n_studies must be >= 1, got {self.n_studies}")
        if self.k_static < 2 or self.k_motion < 1:
            raise InvalidInputError(
                f"need k_static >= 2 and k_motion >= 1, got "
                f"{self.k_static}/{self.k_motion}"
            )
        if self.frame_dim < 1 or self.text_dim < 1:
            raise InvalidInputError("feature dims must be positive")
        if self.frames_per_clip < 2:
            raise InvalidInputError(
                f"frames_per_clip must be >= 2, got {self.frames_per_clip}"
            )
        if self.noise_frame < 0 or self.noise_report < 0:
            raise InvalidInputError("noise levels must be >= 0")
        if self.max_clips_per_view < 1:
            raise InvalidInputError(
                f"max_clips_per_view must be >= 1, got {self.max_clips_per_view}"
            )
        if self.patient_pool is not None and self.patient_pool < 1:
            raise InvalidInputError(
                f"patient_pool must be >= 1, got {self.patient_pool}"
            )
        if self.static_scale <= 0 or self.motion_scale <= 0:
            raise InvalidInputError("mixing scales must be positive")
        if len(self.severity_probs) != len(SEVERITY_GRID):
            raise ValidationError(
                f"severity_probs needs {len(SEVERITY_GRID)} entries, "
                f"got {len(self.severity_probs)}"
            )
        if any(not (p >= 0.0 and math.isfinite(p)) for p in self.severity_probs):
            raise ValidationError("severity_probs entries must be >= 0 and finite")
        if abs(sum(self.severity_probs) - 1.0) > 1e-9:
            raise ValidationError(
                f"severity_probs must sum to 1, got {sum(self.severity_probs)}"
            )
        if set(self.view_clip_rate) != set(VIEW_ORDER):
            raise ValidationError("view_clip_rate must cover exactly the five views")
        self._validate_masks("view_masks", self.view_masks, self.k_static, "static")
        self._validate_masks(
            "view_motion_masks", self.view_motion_masks, self.k_motion, "motion"
        )
        full = set(range(self.k_static))
        if set(self.view_masks[ViewLabel.CH4]) == full:
            raise ValidationError(
                "the 4CH mask must not cover every static index; "
                "single-view encoders need an information gap"
            )
        for view, rate in self.view_clip_rate.items():
            if not (rate >= 0.0 and math.isfinite(rate)):
                raise ValidationError(f"clip rate for {view.value} must be >= 0")

    @staticmethod
    def _validate_masks(
        name: str,
        masks: dict[ViewLabel, tuple[int, ...]],
        size: int,
        kind: str,
    ) -> None:
        if set(masks) != set(VIEW_ORDER):
            raise ValidationError(f"{name} must cover exactly the five views")
        full = set(range(size))
        union: set[int] = set()
        for view, mask in masks.items():
            idx = set(mask)
            if not mask:
                raise ValidationError(f"{kind} mask for {view.value} is empty")
            if len(idx) != len(mask):
                raise ValidationError(f"{kind} mask for {view.value} has duplicates")
            if not idx <= full:
                raise ValidationError(
                    f"{kind} mask for {view.value} indexes outside 0..{size - 1}"
                )
            union |= idx
        if union != full:
            raise ValidationError(
                f"{name} leave {kind} indices {sorted(full - union)} unseen"
            )

    @property
    def resolved_patient_pool(self) -> int:
        if self.patient_pool is not None:
            return self.patient_pool
        return max(1, self.n_studies // 2)

    def _mixing_key(self) -> tuple:
        return (
            self.seed,
            self.k_static,
            self.k_motion,
            self.frame_dim,
            self.text_dim,
            float(self.static_scale),
            float(self.motion_scale),
            tuple(tuple(self.view_masks[v]) for v in VIEW_ORDER),
            tuple(tuple(self.view_motion_masks[v]) for v in VIEW_ORDER),
        )


@dataclass
class LatentCondition:
    """The condition behind one study: static and motion severity vectors."""

    z_static: np.ndarray
    z_motion: np.ndarray

    def __post_init__(self):
        self.z_static = np.asarray(self.z_static, dtype=np.float64)
        self.z_motion = np.asarray(self.z_motion, dtype=np.float64)
        for name, z in (("z_static", self.z_static), ("z_motion", self.z_motion)):
            if z.ndim != 1 or z.size == 0:
                raise InvalidInputError(f"{name} must be a non-empty vector")
            if not np.isfinite(z).all():
                raise InvalidInputError(f"{name} contains non-finite values")
            if z.min() < 0.0 or z.max() > 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class _Mixing:
    """Frozen per-config mixing matrices."""

    a_static: dict[ViewLabel, np.ndarray]  # frame_dim x k_static, per view
    b_motion: dict[ViewLabel, np.ndarray]  # frame_dim x k_motion, per view
    w_report: np.ndarray  # text_dim x (k_static + k_motion)
    mask_vec: dict[ViewLabel, np.ndarray]  # 0/1 static mask, per view
    motion_mask_vec: dict[ViewLabel, np.ndarray]  # 0/1 motion mask, per view


@functools.lru_cache(maxsize=8)
def _mixing_for_key(key: tuple) -> _Mixing:
    (
        seed,
        k_static,
        k_motion,
        frame_dim,
        text_dim,
        s_scale,
        m_scale,
        masks,
        motion_masks,
    ) = key
    a_static: dict[ViewLabel, np.ndarray] = {}
    b_motion: dict[ViewLabel, np.ndarray] = {}
    mask_vec: dict[ViewLabel, np.ndarray] = {}
    motion_mask_vec: dict[ViewLabel, np.ndarray] = {}
    for view, mask, mmask in zip(VIEW_ORDER, masks, motion_masks):
        vi = _VIEW_INDEX[view]
        rng_a = Rng(derive_seed(seed, _TAG_MIXING, vi, 0))
        rng_b = Rng(derive_seed(seed, _TAG_MIXING, vi, 1))
        a = rng_a.standard_normal((frame_dim, k_static))
        a *= s_scale / math.sqrt(len(mask))
        b = rng_b.standard_normal((frame_dim, k_motion))
        b *= m_scale / math.sqrt(len(mmask))
        vec = np.zeros(k_static)
        vec[list(mask)] = 1.0
        mvec = np.zeros(k_motion)
        mvec[list(mmask)] = 1.0
        for arr in (a, b, vec, mvec):
            arr.flags.writeable = False
        a_static[view] = a
        b_motion[view] = b
        mask_vec[view] = vec
        motion_mask_vec[view] = mvec
    rng_w = Rng(derive_seed(seed, _TAG_MIXING, len(VIEW_ORDER), 2))
    w = rng_w.standard_normal((text_dim, k_static + k_motion))
    w *= 1.0 / math.sqrt(k_static + k_motion)
    w.flags.writeable = False
    return _Mixing(
        a_static=a_static,
        b_motion=b_motion,
        w_report=w,
        mask_vec=mask_vec,
        motion_mask_vec=motion_mask_vec,
    )


def mixing_matrices(cfg: GenConfig) -> _Mixing:
    """Mixing matrices for a config; derived from the seed, cached."""
    return _mixing_for_key(cfg._mixing_key())


def _draw_severity(probs: tuple[float, ...], rng: Rng) -> float:
    """One grid level from the configured severity distribution."""
    u = rng.next_float()
    acc = 0.0
    for level, p in zip(SEVERITY_GRID, probs):
        acc += p
        if u < acc:
            return level
    return SEVERITY_GRID[-1]


def sample_latent(cfg: GenConfig, rng: Rng) -> LatentCondition:
    """Draw each latent component i.i.d. from the severity grid.

    Level probabilities come from ``cfg.severity_probs`` (uniform by default).
    """
    z_s = np.array(
        [_draw_severity(cfg.severity_probs, rng) for _ in range(cfg.k_static)]
    )
    z_m = np.array(
        [_draw_severity(cfg.severity_probs, rng) for _ in range(cfg.k_motion)]
    )
    return LatentCondition(z_static=z_s, z_motion=z_m)


def sample_clip_counts(cfg: GenConfig, rng: Rng) -> dict[ViewLabel, int]:
    """Clip counts per view: truncated Poisson, rejecting all-empty studies."""
    while True:
        counts = {
            view: min(rng.poisson(cfg.view_clip_rate[view]), cfg.max_clips_per_view)
            for view in VIEW_ORDER
        }
        if any(counts.values()):
            return counts


def clean_frames(
    z: LatentCondition, view: ViewLabel, cfg: GenConfig, phase: float
) -> np.ndarray:
    """Noise-free clip for a given motion phase.

    frame_t = A_view (mask_s * z_static)
              + sin(2 pi t / T + phase) * (B_view (mask_m * z_motion))
    """
    if z.z_static.shape[0] != cfg.k_static or z.z_motion.shape[0] != cfg.k_motion:
        raise InvalidInputError(
            f"latent dims {z.z_static.shape[0]}/{z.z_motion.shape[0]} do not match "
            f"config {cfg.k_static}/{cfg.k_motion}"
        )
    mix = mixing_matrices(cfg)
    static_row = mix.a_static[view] @ (mix.mask_vec[view] * z.z_static)
    amplitude = mix.b_motion[view] @ (mix.motion_mask_vec[view] * z.z_motion)
    t = np.arange(cfg.frames_per_clip, dtype=np.float64)
    wave = np.sin(2.0 * math.pi * t / cfg.frames_per_clip + phase)
    return static_row[None, :] + wave[:, None] * amplitude[None, :]


def render_frames(
    z: LatentCondition, view: ViewLabel, cfg: GenConfig, rng: Rng
) -> np.ndarray:
    """Render one clip: clean frames plus iid Gaussian sensor noise.

    Draw order is frozen: one uniform for the phase, then the noise block
    row-major. Same (z, view, config seed, rng stream) means bit-identical
    output.
    """
    phase = rng.next_float() * 2.0 * math.pi
    frames = clean_frames(z, view, cfg, phase)
    if cfg.noise_frame > 0.0:
        frames = frames + cfg.noise_frame * rng.standard_normal(
            (cfg.frames_per_clip, cfg.frame_dim)
        )
    return frames


def severity_level(value: float) -> int:
    """Index of the nearest severity grid level."""
    return min(
        range(len(SEVERITY_GRID)), key=lambda i: (abs(SEVERITY_GRID[i] - value), i)
    )


def _display_text(z: LatentCondition) -> str:
    parts = [
        f"s{i}={SEVERITY_NAMES[severity_level(v)]}" for i, v in enumerate(z.z_static)
    ]
    parts += [
        f"m{i}={SEVERITY_NAMES[severity_level(v)]}" for i, v in enumerate(z.z_motion)
    ]
    return "; ".join(parts)


def render_report(z: LatentCondition, cfg: GenConfig, rng: Rng) -> Report:
    """Render the study report: mixed full latents plus noise, with text."""
    if z.z_static.shape[0] != cfg.k_static or z.z_motion.shape[0] != cfg.k_motion:
        raise InvalidInputError(
            f"latent dims {z.z_static.shape[0]}/{z.z_motion.shape[0]} do not match "
            f"config {cfg.k_static}/{cfg.k_motion}"
        )
    mix = mixing_matrices(cfg)
    full = np.concatenate([z.z_static, z.z_motion])
    features = mix.w_report @ full
    if cfg.noise_report > 0.0:
        features = features + cfg.noise_report * rng.normals(cfg.text_dim)
    return Report(features=features, display_text=_display_text(z))


def generate_dataset(cfg: GenConfig) -> list[Study]:
    """Generate the full corpus for a config.

    Patients are assigned round-robin from a fixed pool, so several studies
    share each patient. Per-study and per-clip RNG streams are derived from
    the config seed with stable tags; the corpus is a pure function of cfg.
    """
    cfg.validate()
    pool = cfg.resolved_patient_pool
    studies: list[Study] = []
    for i in range(cfg.n_studies):
        z = sample_latent(cfg, Rng(derive_seed(cfg.seed, _TAG_LATENT, i)))
        counts = sample_clip_counts(cfg, Rng(derive_seed(cfg.seed, _TAG_COUNTS, i)))
        clips: list[VideoClip] = []
        for view in VIEW_ORDER:
            for j in range(counts[view]):
                clip_rng = Rng(
                    derive_seed(cfg.seed, _TAG_CLIP, i, _VIEW_INDEX[view], j)
                )
                clips.append(
                    VideoClip(view=view, frames=render_frames(z, view, cfg, clip_rng))
                )
        report = render_report(z, cfg, Rng(derive_seed(cfg.seed, _TAG_REPORT, i)))
        studies.append(
            Study(
                study_id=f"study_{i:06d}",
                patient_id=f"patient_{i % pool:06d}",
                clips=clips,
                report=report,
            )
        )
    return studies
