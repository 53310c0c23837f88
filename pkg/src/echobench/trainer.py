"""Mini-batch contrastive training with a warmup-plus-cosine schedule.

Each encoding mode that owns weights trains its own parameter set from
scratch: the multi-view model sees clips of every view, the single-view
model sees only 4CH clips, and the still-image model sees one random
frame per 4CH clip visit. The 4CH-restricted multi-view variant never
trains; it borrows the multi-view weights at evaluation time.

Training contrasts one clip (or frame) against its study's report.
Study-level averaging exists only in evaluation; keeping the training
unit small gives the loss many more distinct pairs per epoch.

Everything is deterministic given the config seed: parameter init,
epoch shuffles, frame draws, and the optimizer trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .contrastive import TEMPERATURE_MAX, TEMPERATURE_MIN, BatchEmbeddings, contrastive_loss
from .data import Report, Study, ViewLabel
from .encoders import (
    EncoderDims,
    EncoderParams,
    EncodingMode,
    encode_report,
    encode_study,
    init_params,
)
from .errors import (
    EmptyInputError,
    InvalidInputError,
    MissingViewError,
    NonFiniteError,
    TrainingDivergedError,
    ValidationError,
)
from .metrics import evaluate_retrieval
from .rng import Rng, derive_seed

__all__ = [
    "EvalRecord",
    "StepRecord",
    "TrainConfig",
    "TrainHistory",
    "batch_loss_and_grads",
    "eligible_studies",
    "lr_at",
    "make_training_pairs",
    "train",
]

#: Stream tags so parameter init and batch sampling never share draws.
_STREAM_INIT = 1
_STREAM_PAIRS = 2

_LOG_TEMPERATURE_BOUNDS = (math.log(TEMPERATURE_MIN), math.log(TEMPERATURE_MAX))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    ``batch_size`` defaults per mode when left as None: video modes use
    64, the still-image mode uses 256. Image batches are kept several
    times larger than video batches on purpose; single frames carry
    less signal each, so the loss needs more in-batch negatives.
    """

    mode: EncodingMode
    batch_size: int | None = None
    lr_peak: float = 1e-3
    warmup_steps: int = 200
    total_steps: int = 5000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_interval: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size is None:
            default = 256 if self.mode is EncodingMode.SINGLE_IMAGE else 64
            object.__setattr__(self, "batch_size", default)
        if self.batch_size < 2:
            raise ValidationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.total_steps < 1:
            raise ValidationError("total_steps must be >= 1")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValidationError(
                f"warmup_steps must lie in [0, total_steps), got "
                f"{self.warmup_steps} vs {self.total_steps}"
            )
        if self.lr_peak < 0:
            raise ValidationError("lr_peak must be non-negative")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ValidationError(f"{name} must lie in [0, 1), got {beta}")
        if self.adam_eps <= 0:
            raise ValidationError("adam_eps must be positive")
        if self.eval_interval < 1:
            raise ValidationError("eval_interval must be >= 1")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate at a 0-based step: linear warmup, then cosine decay.

    Continuous on [0, total_steps]: the warmup ramp ends at ``lr_peak``
    exactly where the cosine arc begins, and the arc reaches zero at
    ``total_steps``.
    """
    if not 0 <= step <= cfg.total_steps:
        raise InvalidInputError(
            f"step must lie in [0, {cfg.total_steps}], got {step}"
        )
    if step < cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / span
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class StepRecord:
    step: int
    lr: float
    loss: float


@dataclass(frozen=True)
class EvalRecord:
    step: int
    mcmrr_v2r: float
    mcmrr_r2v: float


@dataclass
class TrainHistory:
    """Per-step loss curve plus periodic validation retrieval scores."""

    steps: list[StepRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)

    def validate(self) -> None:
        for prev, cur in zip(self.steps, self.steps[1:]):
            if cur.step <= prev.step:
                raise ValidationError("step indices must increase")
        for prev, cur in zip(self.evals, self.evals[1:]):
            if cur.step <= prev.step:
                raise ValidationError("eval step indices must increase")

    def to_dict(self) -> dict:
        return {
            "steps": [
                {"step": r.step, "lr": r.lr, "loss": r.loss} for r in self.steps
            ],
            "evals": [
                {"step": r.step, "mcmrr_v2r": r.mcmrr_v2r, "mcmrr_r2v": r.mcmrr_r2v}
                for r in self.evals
            ],
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "TrainHistory":
        try:
            history = cls(
                steps=[
                    StepRecord(int(r["step"]), float(r["lr"]), float(r["loss"]))
                    for r in payload["steps"]
                ],
                evals=[
                    EvalRecord(
                        int(r["step"]),
                        float(r["mcmrr_v2r"]),
                        float(r["mcmrr_r2v"]),
                    )
                    for r in payload["evals"]
                ],
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed history payload: {exc}") from exc
        history.validate()
        return history


def _eligible_units(
    studies: Sequence[Study], mode: EncodingMode
) -> list[tuple[np.ndarray, Report]]:
    """Sampling units for one epoch: (clip frames, report) pairs.

    The multi-view mode samples every clip; 4CH-restricted modes sample
    only CH4 clips. The still-image mode also enumerates CH4 clips here
    and draws the actual frame at yield time.
    """
    units: list[tuple[np.ndarray, Report]] = []
    for study in studies:
        if mode is EncodingMode.MULTI_VIDEO:
            clips = study.clips
        else:
            clips = study.clips_for_view(ViewLabel.CH4)
        for clip in clips:
            units.append((clip.frames, study.report))
    return units


def eligible_studies(studies: Sequence[Study], mode: EncodingMode) -> list[Study]:
    """Studies the mode can encode (non-4CH-only studies drop out of
    restricted modes)."""
    if mode is EncodingMode.MULTI_VIDEO:
        return [s for s in studies if s.clips]
    return [s for s in studies if s.clips_for_view(ViewLabel.CH4)]


def make_training_pairs(
    studies: Sequence[Study], mode: EncodingMode, rng: Rng
) -> Iterator[tuple[np.ndarray, Report]]:
    """Infinite stream of (input, report) pairs in shuffled epochs.

    Video modes yield a clip's full (T, frame_dim) array; the
    still-image mode yields one uniformly random (frame_dim,) row per
    clip visit. Every epoch visits every eligible clip exactly once in
    an order drawn from ``rng``, so a fixed seed fixes the stream.
    """
    units = _eligible_units(studies, mode)
    if not units:
        raise MissingViewError(
            f"no clips usable for training in mode {mode.key!r}"
        )
    order = list(range(len(units)))
    while True:
        rng.shuffle(order)
        for index in order:
            frames, report = units[index]
            if mode is EncodingMode.SINGLE_IMAGE:
                row = rng.next_uint(frames.shape[0])
                yield frames[row], report
            else:
                yield frames, report


def _video_forward_backward(
    params: EncoderParams, clips: np.ndarray, d_emb: np.ndarray | None
):
    """Forward (and optional backward) for a (B, T, F) clip batch."""
    b, t, f = clips.shape
    flat = clips.reshape(b * t, f)
    hidden = np.tanh(flat @ params.w1.T + params.b1)
    frame_emb = (hidden @ params.w2.T + params.b2).reshape(b, t, -1)
    mean_half = frame_emb.mean(axis=1)
    deltas = frame_emb[:, 1:, :] - frame_emb[:, :-1, :]
    motion_half = np.abs(deltas).mean(axis=1)
    pooled = np.concatenate([mean_half, motion_half], axis=1)
    emb = pooled @ params.wp.T + params.bp
    if d_emb is None:
        return emb, None

    grads: dict[str, np.ndarray] = {}
    grads["wp"] = d_emb.T @ pooled
    grads["bp"] = d_emb.sum(axis=0)
    d_pooled = d_emb @ params.wp
    df = frame_emb.shape[2]
    d_mean = d_pooled[:, :df]
    d_motion = d_pooled[:, df:]
    d_frame = np.broadcast_to(d_mean[:, None, :] / t, frame_emb.shape).copy()
    d_delta = (d_motion[:, None, :] / (t - 1)) * np.sign(deltas)
    d_frame[:, 1:, :] += d_delta
    d_frame[:, :-1, :] -= d_delta
    flat_d = d_frame.reshape(b * t, df)
    grads["w2"] = flat_d.T @ hidden
    grads["b2"] = flat_d.sum(axis=0)
    d_hidden = (flat_d @ params.w2) * (1.0 - hidden * hidden)
    grads["w1"] = d_hidden.T @ flat
    grads["b1"] = d_hidden.sum(axis=0)
    return emb, grads


def _image_forward_backward(
    params: EncoderParams, frames: np.ndarray, d_emb: np.ndarray | None
):
    """Forward (and optional backward) for a (B, F) single-frame batch.

    Matches study encoding for stills: the motion half of the pooled
    vector is zero, so only the appearance columns of the projection
    receive gradient.
    """
    hidden = np.tanh(frames @ params.w1.T + params.b1)
    frame_emb = hidden @ params.w2.T + params.b2
    df = frame_emb.shape[1]
    pooled = np.concatenate([frame_emb, np.zeros_like(frame_emb)], axis=1)
    emb = pooled @ params.wp.T + params.bp
    if d_emb is None:
        return emb, None

    grads: dict[str, np.ndarray] = {}
    grads["wp"] = d_emb.T @ pooled
    grads["bp"] = d_emb.sum(axis=0)
    d_frame = (d_emb @ params.wp)[:, :df]
    grads["w2"] = d_frame.T @ hidden
    grads["b2"] = d_frame.sum(axis=0)
    d_hidden = (d_frame @ params.w2) * (1.0 - hidden * hidden)
    grads["w1"] = d_hidden.T @ frames
    grads["b1"] = d_hidden.sum(axis=0)
    return emb, grads


def _text_forward_backward(
    params: EncoderParams, feats: np.ndarray, d_emb: np.ndarray | None
):
    hidden = np.tanh(feats @ params.wt1.T + params.bt1)
    emb = hidden @ params.wt2.T + params.bt2
    if d_emb is None:
        return emb, None
    grads = {
        "wt2": d_emb.T @ hidden,
        "bt2": d_emb.sum(axis=0),
    }
    d_hidden = (d_emb @ params.wt2) * (1.0 - hidden * hidden)
    grads["wt1"] = d_hidden.T @ feats
    grads["bt1"] = d_hidden.sum(axis=0)
    return emb, grads


def batch_loss_and_grads(
    params: EncoderParams,
    mode: EncodingMode,
    video_inputs: np.ndarray,
    text_features: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Contrastive loss and gradients for every parameter tensor.

    Parameters
    ----------
    params:
        Current encoder weights.
    mode:
        Decides the video-side forward: (B, T, F) clip batches for the
        video modes, (B, F) frame batches for the still-image mode.
    video_inputs:
        Stacked batch in the shape the mode expects.
    text_features:
        (B, text_dim) report feature batch.

    Returns
    -------
    (loss, grads)
        ``grads`` maps every name in ``EncoderParams.TENSOR_NAMES`` to
        an array shaped like the parameter.
    """
    video_inputs = np.asarray(video_inputs, dtype=np.float64)
    text_features = np.asarray(text_features, dtype=np.float64)
    if mode is EncodingMode.SINGLE_IMAGE:
        if video_inputs.ndim != 2:
            raise InvalidInputError(
                f"still-image batches must be (B, F), got {video_inputs.shape}"
            )
        forward_backward = _image_forward_backward
    else:
        if video_inputs.ndim != 3:
            raise InvalidInputError(
                f"clip batches must be (B, T, F), got {video_inputs.shape}"
            )
        forward_backward = _video_forward_backward

    video_emb, _ = forward_backward(params, video_inputs, None)
    text_emb, _ = _text_forward_backward(params, text_features, None)
    batch = BatchEmbeddings(video=video_emb, text=text_emb, temperature=params.tau)
    result = contrastive_loss(batch)
    _, video_grads = forward_backward(params, video_inputs, result.d_video)
    _, text_grads = _text_forward_backward(params, text_features, result.d_text)
    grads = {**video_grads, **text_grads}
    grads["log_temperature"] = np.array(result.d_log_temperature)
    return result.loss, grads


class _AdamState:
    def __init__(self, params: EncoderParams) -> None:
        self.first = {n: np.zeros_like(a) for n, a in params.tensors()}
        self.second = {n: np.zeros_like(a) for n, a in params.tensors()}
        self.count = 0

    def update(
        self,
        params: EncoderParams,
        grads: Mapping[str, np.ndarray],
        lr: float,
        cfg: TrainConfig,
    ) -> None:
        self.count += 1
        bias1 = 1.0 - cfg.adam_beta1**self.count
        bias2 = 1.0 - cfg.adam_beta2**self.count
        for name, tensor in params.tensors():
            grad = grads[name]
            m = self.first[name]
            v = self.second[name]
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * grad
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * grad * grad
            step_size = lr / bias1
            tensor -= step_size * m / (np.sqrt(v / bias2) + cfg.adam_eps)


def _validation_scores(
    params: EncoderParams,
    mode: EncodingMode,
    valid_studies: Sequence[Study],
) -> tuple[float, float]:
    study_embs = [
        (s.study_id, encode_study(params, s, mode)) for s in valid_studies
    ]
    report_embs = [
        (s.study_id, encode_report(params, s.report)) for s in valid_studies
    ]
    report = evaluate_retrieval(study_embs, report_embs, mode, recall_ks=(10,))
    return report.mcmrr_v2r, report.mcmrr_r2v


def train(
    cfg: TrainConfig,
    train_studies: Sequence[Study],
    valid_studies: Sequence[Study],
    dims: EncoderDims | None = None,
    initial_params: EncoderParams | None = None,
) -> tuple[EncoderParams, TrainHistory]:
    """Run the full optimization loop for one mode.

    Parameters
    ----------
    cfg:
        Hyperparameters; ``cfg.mode`` must own weights (the
        4CH-restricted multi-view variant is inference-only).
    train_studies, valid_studies:
        Non-empty study lists. Validation retrieval runs every
        ``cfg.eval_interval`` steps and after the final step, over the
        validation studies the mode can encode.
    dims:
        Layer widths for fresh initialization; ignored when
        ``initial_params`` is given. Defaults to desk-scale widths.
    initial_params:
        Start from these weights (cloned, never mutated) instead of a
        fresh init. Useful for resuming and for tests.

    Returns
    -------
    (params, history)
        Final weights and the per-step loss curve with validation
        scores.

    Raises
    ------
    TrainingDivergedError
        If the batch loss stops being finite.
    """
    if not cfg.mode.trains_own_weights:
        raise InvalidInputError(
            f"mode {cfg.mode.key!r} reuses multi-view weights and cannot train"
        )
    if len(train_studies) == 0 or len(valid_studies) == 0:
        raise EmptyInputError("training and validation sets must be non-empty")

    init_rng = Rng(derive_seed(cfg.seed, _STREAM_INIT))
    if initial_params is not None:
        params = initial_params.clone()
    else:
        params = init_params(dims if dims is not None else EncoderDims(), init_rng)

    valid_usable = eligible_studies(valid_studies, cfg.mode)
    if not valid_usable:
        raise MissingViewError(
            f"no validation study is usable in mode {cfg.mode.key!r}"
        )

    pair_rng = Rng(derive_seed(cfg.seed, _STREAM_PAIRS))
    pairs = make_training_pairs(train_studies, cfg.mode, pair_rng)
    adam = _AdamState(params)
    history = TrainHistory()
    low, high = _LOG_TEMPERATURE_BOUNDS

    for step in range(cfg.total_steps):
        batch = [next(pairs) for _ in range(cfg.batch_size)]
        video_inputs = np.stack([item[0] for item in batch])
        text_features = np.stack([item[1].features for item in batch])
        try:
            loss, grads = batch_loss_and_grads(
                params, cfg.mode, video_inputs, text_features
            )
        except NonFiniteError as exc:
            raise TrainingDivergedError(
                f"non-finite values in the forward pass at step {step} "
                f"(lr {lr_at(step, cfg):.3g}, mode {cfg.mode.key}): {exc}"
            ) from exc
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became non-finite at step {step} "
                f"(lr {lr_at(step, cfg):.3g}, mode {cfg.mode.key})"
            )
        lr = lr_at(step, cfg)
        adam.update(params, grads, lr, cfg)
        np.clip(params.log_temperature, low, high, out=params.log_temperature)
        history.steps.append(StepRecord(step=step, lr=lr, loss=loss))

        done = step + 1 == cfg.total_steps
        if (step + 1) % cfg.eval_interval == 0 or done:
            v2r, r2v = _validation_scores(params, cfg.mode, valid_usable)
            history.evals.append(
                EvalRecord(step=step, mcmrr_v2r=v2r, mcmrr_r2v=r2v)
            )

    history.validate()
    return params, history
