"""Bidirectional contrastive loss over cosine similarities.

For a batch of B matched (video, report) embedding pairs, the similarity
matrix holds the cosine of every report row against every video column,
scaled by a learnable temperature. Each direction is a softmax
cross-entropy against the diagonal (video-to-report over reports,
report-to-video over videos); the training loss is the average of both.

Softmax terms are computed in max-shifted form. Besides numerical
stability this makes the loss exactly temperature-independent whenever all
similarities are equal, which keeps finite differences honest in that
degenerate direction.

Gradients are derived by hand and returned alongside the loss;
:func:`grad_check` verifies them against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError, ValidationError
from .linalg import COSINE_EPS, as_matrix

#: Temperature bounds; values outside are a validation error.
TEMPERATURE_MIN = 0.01
TEMPERATURE_MAX = 100.0


@dataclass
class BatchEmbeddings:
    """A matched batch: row i of each matrix belongs to the same study."""

    video: np.ndarray  # (B, D)
    text: np.ndarray  # (B, D)
    temperature: float

    def __post_init__(self):
        self.video = as_matrix(self.video, "video")
        self.text = as_matrix(self.text, "text")
        if self.video.shape != self.text.shape:
            raise DimensionError(
                f"video and text shapes differ: {self.video.shape} vs {self.text.shape}"
            )
        if self.video.shape[0] < 2:
            raise ValidationError(
                f"contrastive batches need B >= 2, got B = {self.video.shape[0]}"
            )
        t = self.temperature
        if not (np.isfinite(t) and TEMPERATURE_MIN <= t <= TEMPERATURE_MAX):
            raise InvalidInputError(
                f"temperature must lie in [{TEMPERATURE_MIN}, {TEMPERATURE_MAX}], "
                f"got {t}"
            )

    @property
    def batch_size(self) -> int:
        return self.video.shape[0]


@dataclass
class LossGrad:
    """Loss value plus gradients for both embedding matrices and the
    log-temperature scalar."""

    loss: float
    d_video: np.ndarray
    d_text: np.ndarray
    d_log_temperature: float


def similarity_matrix(video: np.ndarray, text: np.ndarray) -> np.ndarray:
    """Cosine similarities; entry [i, j] pairs text row i with video row j."""
    v = as_matrix(video, "video")
    t = as_matrix(text, "text")
    if v.shape[1] != t.shape[1]:
        raise DimensionError(
            f"embedding dims differ: {v.shape[1]} vs {t.shape[1]}"
        )
    v_norm = np.linalg.norm(v, axis=1) + COSINE_EPS
    t_norm = np.linalg.norm(t, axis=1) + COSINE_EPS
    return (t @ v.T) / (t_norm[:, None] * v_norm[None, :])


def _direction_terms(z: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor cross-entropy terms and softmax along one axis of z.

    Returns (terms, probabilities); terms[k] = logsumexp(z along axis at k)
    minus the diagonal logit, all computed relative to the axis max.
    """
    m = z.max(axis=axis, keepdims=True)
    shifted = z - m
    e = np.exp(shifted)
    s = e.sum(axis=axis, keepdims=True)
    terms = np.log(s).ravel() - np.diagonal(shifted)
    return terms, e / s


def _loss_core(video: np.ndarray, text: np.ndarray, tau) -> float:
    """Loss without input validation, for finite-difference probes.

    Accepts float64 or extended-precision arrays; all arithmetic stays in
    the input dtype so probes can run above f64 resolution.
    """
    eps = np.asarray(COSINE_EPS, dtype=video.dtype)
    v_norm = np.sqrt((video * video).sum(axis=1)) + eps
    t_norm = np.sqrt((text * text).sum(axis=1)) + eps
    z = (text @ video.T) / (t_norm[:, None] * v_norm[None, :]) / tau
    col_terms, _ = _direction_terms(z, axis=0)
    row_terms, _ = _direction_terms(z, axis=1)
    # Keep the input dtype: extended-precision probes must not round here.
    return 0.5 * (col_terms.mean() + row_terms.mean())


def contrastive_loss(batch: BatchEmbeddings) -> LossGrad:
    """Average of both directional losses, with analytic gradients."""
    video, text, tau = batch.video, batch.text, batch.temperature
    b = batch.batch_size

    v_norm_bare = np.linalg.norm(video, axis=1)
    t_norm_bare = np.linalg.norm(text, axis=1)
    v_norm = v_norm_bare + COSINE_EPS
    t_norm = t_norm_bare + COSINE_EPS
    sims = (text @ video.T) / (t_norm[:, None] * v_norm[None, :])
    z = sims / tau

    # Video anchors: softmax over reports = down each column (text index).
    col_terms, p_col = _direction_terms(z, axis=0)
    # Report anchors: softmax over videos = along each row.
    row_terms, p_row = _direction_terms(z, axis=1)
    loss = 0.5 * (float(col_terms.mean()) + float(row_terms.mean()))

    g = (p_col + p_row - 2.0 * np.eye(b)) / (2.0 * b)
    w = g / tau

    # Unit rows; the bare norm enters through the derivative of the norm
    # itself. Zero rows fall outside the gradient guarantee; substitute a
    # denominator of 1 there to keep the arithmetic finite.
    v_dir = video / np.where(v_norm_bare > 0.0, v_norm_bare, 1.0)[:, None]
    t_dir = text / np.where(t_norm_bare > 0.0, t_norm_bare, 1.0)[:, None]
    v_hat = video / v_norm[:, None]
    t_hat = text / t_norm[:, None]

    row_dot = (w * sims).sum(axis=1)
    col_dot = (w * sims).sum(axis=0)
    d_text = (w @ v_hat - row_dot[:, None] * t_dir) / t_norm[:, None]
    d_video = (w.T @ t_hat - col_dot[:, None] * v_dir) / v_norm[:, None]
    d_log_tau = -float((w * sims).sum())

    return LossGrad(
        loss=loss,
        d_video=d_video,
        d_text=d_text,
        d_log_temperature=d_log_tau,
    )


def loss_value(video: np.ndarray, text: np.ndarray, temperature: float) -> float:
    """Loss alone, for finite-difference probes and quick evaluation."""
    return contrastive_loss(
        BatchEmbeddings(video=video, text=text, temperature=temperature)
    ).loss


def relative_error(analytic: float, numeric: float) -> float:
    """|a - n| / max(|a|, |n|, 1e-8)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _central_difference(f, x0, eps: float) -> float:
    """Fourth-order five-point central difference of f at x0.

    x0 carries the probe dtype; with extended precision the round-off floor
    sits well below the 1e-8 denominator floor of :func:`relative_error`,
    so even near-zero gradient coordinates compare cleanly.
    """
    two = 2.0 * eps
    return (
        f(x0 - two) - 8.0 * f(x0 - eps) + 8.0 * f(x0 + eps) - f(x0 + two)
    ) / (12.0 * eps)


def grad_check(batch: BatchEmbeddings, eps: float = 1e-4) -> float:
    """Worst relative error between analytic and central-difference
    gradients, over every coordinate of both matrices and the
    log-temperature.

    Probes run in extended precision (long double) where the platform
    provides it, which it does on x86 Linux.
    """
    if not (np.isfinite(eps) and 1e-7 <= eps <= 1e-3):
        raise InvalidInputError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    out = contrastive_loss(batch)
    video = batch.video.astype(np.longdouble)
    text = batch.text.astype(np.longdouble)
    tau = np.longdouble(batch.temperature)
    worst = 0.0

    for matrix, grads in ((video, out.d_video), (text, out.d_text)):
        it = np.nditer(grads, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = matrix[idx]

            def probe(x):
                matrix[idx] = x
                value = _loss_core(video, text, tau)
                matrix[idx] = orig
                return value

            numeric = _central_difference(probe, orig, eps)
            worst = max(worst, relative_error(float(grads[idx]), numeric))

    log_tau = np.log(tau)

    def probe_log_tau(x):
        return _loss_core(video, text, np.exp(x))

    numeric = _central_difference(probe_log_tau, log_tau, eps)
    worst = max(worst, relative_error(out.d_log_temperature, numeric))
    return worst
