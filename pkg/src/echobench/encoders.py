"""Video, frame, and report encoders sharing one embedding space.

The frame encoder is a two-layer tanh MLP. A clip embedding pools its frame
embeddings twice over time (plain mean, and mean absolute successive
difference, which carries the motion signal) and projects the concatenation.
The report encoder is a separate two-layer tanh MLP onto the same space.

Four encoding modes cover the ablation axes: all clips, 4CH clips only
(shared or dedicated weights), and a still-image path that pools frame
embeddings directly and fills the motion half of the pooled vector with
zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import Report, Study, VideoClip, ViewLabel
from .errors import DimensionError, InvalidInputError, MissingViewError
from .linalg import mean_rows, mean_vectors
from .rng import Rng

#: Initial value of the learnable log-temperature.
INITIAL_LOG_TEMPERATURE = math.log(1.0 / 0.07)

#: Bounds the temperature is clamped to during training.
TEMPERATURE_RANGE = (0.01, 100.0)


class EncodingMode(Enum):
    """Which clips a study embedding is built from, and how."""

    MULTI_VIDEO = "multi_video"
    MULTI_VIDEO_4CH = "multi_video_4ch"
    SINGLE_VIDEO = "single_video"
    SINGLE_IMAGE = "single_image"

    @property
    def key(self) -> str:
        """Path- and config-safe name."""
        return self.value

    @property
    def display(self) -> str:
        return {
            EncodingMode.MULTI_VIDEO: "MultiVideo",
            EncodingMode.MULTI_VIDEO_4CH: "MultiVideo-4CH",
            EncodingMode.SINGLE_VIDEO: "SingleVideo",
            EncodingMode.SINGLE_IMAGE: "SingleImage",
        }[self]

    @property
    def ch4_only(self) -> bool:
        return self is not EncodingMode.MULTI_VIDEO

    @property
    def trains_own_weights(self) -> bool:
        """MULTI_VIDEO_4CH is inference-only: it reuses MULTI_VIDEO weights."""
        return self is not EncodingMode.MULTI_VIDEO_4CH


MODE_ORDER: tuple[EncodingMode, ...] = (
    EncodingMode.MULTI_VIDEO,
    EncodingMode.MULTI_VIDEO_4CH,
    EncodingMode.SINGLE_VIDEO,
    EncodingMode.SINGLE_IMAGE,
)


@dataclass(frozen=True)
class EncoderDims:
    """Layer widths; defaults are desk scale."""

    frame_dim: int = 32
    text_dim: int = 24
    hidden: int = 64
    frame_embed_dim: int = 32
    embed_dim: int = 64

    def validate(self) -> None:
        for name in ("frame_dim", "text_dim", "hidden", "frame_embed_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")


@dataclass
class EncoderParams:
    """All learnable tensors, float64 throughout.

    Weight layout: w1/b1 and w2/b2 form the frame MLP, wp/bp the temporal
    projection, wt1/bt1 and wt2/bt2 the report MLP. log_temperature is a
    0-d array so optimizers can treat every tensor uniformly.
    """

    dims: EncoderDims
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wp: np.ndarray
    bp: np.ndarray
    wt1: np.ndarray
    bt1: np.ndarray
    wt2: np.ndarray
    bt2: np.ndarray
    log_temperature: np.ndarray = field(
        default_factory=lambda: np.array(INITIAL_LOG_TEMPERATURE)
    )

    #: Frozen serialization and optimizer order.
    TENSOR_NAMES = (
        "w1", "b1", "w2", "b2", "wp", "bp",
        "wt1", "bt1", "wt2", "bt2", "log_temperature",
    )

    def tensors(self):
        """Yield (name, array) in the frozen order."""
        for name in self.TENSOR_NAMES:
            yield name, getattr(self, name)

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_temperature))

    def clone(self) -> "EncoderParams":
        kwargs = {name: np.array(arr, copy=True) for name, arr in self.tensors()}
        return EncoderParams(dims=self.dims, **kwargs)


def _glorot(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    u = rng.floats(fan_out * fan_in).reshape(fan_out, fan_in)
    return (2.0 * u - 1.0) * limit


def init_params(dims: EncoderDims, rng: Rng) -> EncoderParams:
    """Glorot-uniform weights, zero biases, draw order frozen."""
    dims.validate()
    d = dims
    return EncoderParams(
        dims=d,
        w1=_glorot(rng, d.hidden, d.frame_dim),
        b1=np.zeros(d.hidden),
        w2=_glorot(rng, d.frame_embed_dim, d.hidden),
        b2=np.zeros(d.frame_embed_dim),
        wp=_glorot(rng, d.embed_dim, 2 * d.frame_embed_dim),
        bp=np.zeros(d.embed_dim),
        wt1=_glorot(rng, d.hidden, d.text_dim),
        bt1=np.zeros(d.hidden),
        wt2=_glorot(rng, d.embed_dim, d.hidden),
        bt2=np.zeros(d.embed_dim),
    )


def encode_frames(params: EncoderParams, frames: np.ndarray) -> np.ndarray:
    """Frame MLP applied to an (n, frame_dim) batch; returns (n, frame_embed_dim)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != params.dims.frame_dim:
        raise DimensionError(
            f"frames must be (n, {params.dims.frame_dim}), got {frames.shape}"
        )
    hidden = np.tanh(frames @ params.w1.T + params.b1)
    return hidden @ params.w2.T + params.b2


def encode_frame(params: EncoderParams, frame: np.ndarray) -> np.ndarray:
    """Single-frame convenience wrapper around :func:`encode_frames`."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise DimensionError(f"frame must be 1-D, got shape {frame.shape}")
    return encode_frames(params, frame[None, :])[0]


def temporal_pool(frame_embeddings: np.ndarray) -> np.ndarray:
    """Pool a (T, d) sequence into (2d,): mean, then mean |Δ| over time.

    The first half summarizes appearance; the second half is zero exactly
    when the sequence is constant, so it isolates motion.
    """
    e = np.asarray(frame_embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise DimensionError(f"frame embeddings must be 2-D, got {e.shape}")
    if e.shape[0] < 2:
        raise InvalidInputError(
            f"temporal pooling needs at least 2 frames, got {e.shape[0]}"
        )
    mean_half = mean_rows(e)
    diff_half = mean_rows(np.abs(e[1:] - e[:-1]))
    return np.concatenate([mean_half, diff_half])


def project_pooled(params: EncoderParams, pooled: np.ndarray) -> np.ndarray:
    """Affine map from the pooled (2 * frame_embed_dim,) vector to embed_dim."""
    pooled = np.asarray(pooled, dtype=np.float64)
    expected = 2 * params.dims.frame_embed_dim
    if pooled.shape != (expected,):
        raise DimensionError(f"pooled vector must be ({expected},), got {pooled.shape}")
    return params.wp @ pooled + params.bp


def encode_video(params: EncoderParams, clip: VideoClip) -> np.ndarray:
    """Embed one clip."""
    return project_pooled(params, temporal_pool(encode_frames(params, clip.frames)))


def encode_report(params: EncoderParams, report: Report) -> np.ndarray:
    """Embed one report through the text MLP."""
    feats = report.features
    if feats.shape != (params.dims.text_dim,):
        raise DimensionError(
            f"report features must be ({params.dims.text_dim},), got {feats.shape}"
        )
    hidden = np.tanh(params.wt1 @ feats + params.bt1)
    return params.wt2 @ hidden + params.bt2


def usable_clips(study: Study, mode: EncodingMode) -> list[VideoClip]:
    """Clips the mode may look at; raises MissingViewError if there are none."""
    if mode is EncodingMode.MULTI_VIDEO:
        clips = list(study.clips)
    else:
        clips = study.clips_for_view(ViewLabel.CH4)
    if not clips:
        raise MissingViewError(
            f"study {study.study_id} has no clips usable in mode {mode.key}"
        )
    return clips


def encode_study(params: EncoderParams, study: Study, mode: EncodingMode) -> np.ndarray:
    """Study embedding under a mode.

    Video modes average clip embeddings (all clips, or 4CH only). The
    still-image mode averages raw frame embeddings across every 4CH frame
    and runs the projection with the motion half zeroed, so it shares the
    projection weights while seeing no temporal signal.
    """
    clips = usable_clips(study, mode)
    if mode is EncodingMode.SINGLE_IMAGE:
        all_frames = np.vstack([c.frames for c in clips])
        frame_mean = mean_rows(encode_frames(params, all_frames))
        pooled = np.concatenate([frame_mean, np.zeros_like(frame_mean)])
        return project_pooled(params, pooled)
    return mean_vectors([encode_video(params, c) for c in clips])
