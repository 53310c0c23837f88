"""Retrieval quality metrics and the four-mode ablation harness.

The headline number is the mean cross-modal retrieval rank (MCMRR):
the average 1-based position of the correct counterpart when the full
candidate pool is sorted by similarity. Lower is better; a clueless
ranker converges to (M + 1) / 2 on a pool of size M. Recall@k is the
percentage of queries whose correct counterpart lands in the top k.

Both metrics are reported in two directions: video-to-report ranks
reports for each study embedding, report-to-video ranks studies for
each report embedding.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .encoders import (
    MODE_ORDER,
    EncoderParams,
    EncodingMode,
    encode_report,
    encode_study,
)
from .data import Study
from .errors import EmptyInputError, InvalidInputError, ValidationError
from .retrieval import rank_of, retrieve_reports, retrieve_studies

__all__ = [
    "MetricsReport",
    "ablation_table",
    "evaluate_retrieval",
    "mcmrr",
    "ordering_violations",
    "recall_at_k",
    "run_ablation",
]

DEFAULT_RECALL_KS = (1, 5, 10)

EmbeddingList = Sequence[tuple[str, np.ndarray]]


def mcmrr(ranks: Sequence[int]) -> float:
    """Mean cross-modal retrieval rank: arithmetic mean of 1-based ranks."""
    if len(ranks) == 0:
        raise EmptyInputError("cannot average an empty list of ranks")
    for rank in ranks:
        if rank < 1:
            raise InvalidInputError(f"ranks are 1-based, got {rank}")
    return float(sum(ranks)) / len(ranks)


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    """Percentage of queries whose correct counterpart ranks within top k."""
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if len(ranks) == 0:
        raise EmptyInputError("cannot compute recall over an empty list of ranks")
    for rank in ranks:
        if rank < 1:
            raise InvalidInputError(f"ranks are 1-based, got {rank}")
    hits = sum(1 for rank in ranks if rank <= k)
    return 100.0 * hits / len(ranks)


@dataclass(frozen=True)
class MetricsReport:
    """Retrieval scores for one encoding mode over one test pool.

    Attributes
    ----------
    mode:
        The encoding rule the study embeddings were produced under.
    mcmrr_v2r, mcmrr_r2v:
        Mean correct rank per direction; in [1, pool_size].
    recall:
        ``{k: {"v2r": percent, "r2v": percent}}`` for each requested k.
    pool_size:
        Number of candidates each query was ranked against.
    n_queries:
        Number of queries per direction.
    """

    mode: EncodingMode
    mcmrr_v2r: float
    mcmrr_r2v: float
    recall: Mapping[int, Mapping[str, float]]
    pool_size: int
    n_queries: int

    def __post_init__(self) -> None:
        if self.pool_size < 1 or self.n_queries < 1:
            raise ValidationError("pool_size and n_queries must be positive")
        for value in (self.mcmrr_v2r, self.mcmrr_r2v):
            if not 1.0 <= value <= self.pool_size:
                raise ValidationError(
                    f"mean rank {value} outside [1, {self.pool_size}]"
                )
        previous: dict[str, float] = {}
        for k in sorted(self.recall):
            per_direction = self.recall[k]
            for direction in ("v2r", "r2v"):
                if direction not in per_direction:
                    raise ValidationError(f"recall@{k} missing {direction!r}")
                percent = per_direction[direction]
                if not 0.0 <= percent <= 100.0:
                    raise ValidationError(
                        f"recall@{k} {direction} = {percent} outside [0, 100]"
                    )
                if percent < previous.get(direction, 0.0):
                    raise ValidationError(
                        f"recall@{k} {direction} decreased as k grew"
                    )
                previous[direction] = percent

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.key,
            "display": self.mode.display,
            "mcmrr": {"v2r": self.mcmrr_v2r, "r2v": self.mcmrr_r2v},
            "recall_at": {
                str(k): {
                    "v2r": self.recall[k]["v2r"],
                    "r2v": self.recall[k]["r2v"],
                }
                for k in sorted(self.recall)
            },
            "pool_size": self.pool_size,
            "n_queries": self.n_queries,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "MetricsReport":
        try:
            mode = EncodingMode(payload["mode"])
            recall = {
                int(k): {
                    "v2r": float(v["v2r"]),
                    "r2v": float(v["r2v"]),
                }
                for k, v in payload["recall_at"].items()
            }
            return cls(
                mode=mode,
                mcmrr_v2r=float(payload["mcmrr"]["v2r"]),
                mcmrr_r2v=float(payload["mcmrr"]["r2v"]),
                recall=recall,
                pool_size=int(payload["pool_size"]),
                n_queries=int(payload["n_queries"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed metrics payload: {exc}") from exc


def _ranks_for_direction(
    queries: EmbeddingList,
    pool: EmbeddingList,
    retrieve: Callable,
    threads: int,
) -> list[int]:
    def rank_one(item: tuple[str, np.ndarray]) -> int:
        qid, emb = item
        return rank_of(qid, retrieve(emb, pool, query_id=qid)).rank

    if threads <= 1:
        return [rank_one(item) for item in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool_exec:
        return list(pool_exec.map(rank_one, queries))


def retrieval_ranks(
    study_embs: EmbeddingList,
    report_embs: EmbeddingList,
    threads: int = 1,
) -> tuple[list[int], list[int]]:
    """Correct-counterpart ranks for both directions, in query order.

    The first list follows ``study_embs`` order (video to report), the
    second follows ``report_embs`` order (report to video). Queries are
    independent and results are collected in query order, so the numbers
    are identical for any thread count.
    """
    if len(study_embs) == 0 or len(report_embs) == 0:
        raise EmptyInputError("both embedding pools must be non-empty")
    study_ids = [sid for sid, _ in study_embs]
    report_ids = [rid for rid, _ in report_embs]
    if sorted(study_ids) != sorted(report_ids):
        raise ValidationError(
            "study and report pools must cover the same ids; "
            f"{len(study_ids)} studies vs {len(report_ids)} reports"
        )
    if threads < 1:
        raise InvalidInputError(f"threads must be >= 1, got {threads}")
    ranks_v2r = _ranks_for_direction(study_embs, report_embs, retrieve_reports, threads)
    ranks_r2v = _ranks_for_direction(report_embs, study_embs, retrieve_studies, threads)
    return ranks_v2r, ranks_r2v


def report_from_ranks(
    mode: EncodingMode,
    ranks_v2r: Sequence[int],
    ranks_r2v: Sequence[int],
    pool_size: int,
    recall_ks: Sequence[int] = DEFAULT_RECALL_KS,
) -> MetricsReport:
    """Summarize per-query ranks into a MetricsReport."""
    if len(recall_ks) == 0:
        raise InvalidInputError("at least one recall cutoff is required")
    recall = {
        int(k): {
            "v2r": recall_at_k(ranks_v2r, int(k)),
            "r2v": recall_at_k(ranks_r2v, int(k)),
        }
        for k in recall_ks
    }
    return MetricsReport(
        mode=mode,
        mcmrr_v2r=mcmrr(ranks_v2r),
        mcmrr_r2v=mcmrr(ranks_r2v),
        recall=recall,
        pool_size=pool_size,
        n_queries=len(ranks_v2r),
    )


def evaluate_retrieval(
    study_embs: EmbeddingList,
    report_embs: EmbeddingList,
    mode: EncodingMode,
    recall_ks: Sequence[int] = DEFAULT_RECALL_KS,
    threads: int = 1,
) -> MetricsReport:
    """Score both retrieval directions over paired embedding pools.

    Parameters
    ----------
    study_embs, report_embs:
        ``(id, vector)`` pairs. The two lists must cover the same ids;
        each id pairs a study with its ground-truth report.
    mode:
        Recorded on the result; does not affect the computation.
    recall_ks:
        Cutoffs for recall percentages.
    threads:
        Worker threads for per-query ranking; any count gives identical
        numbers.

    Returns
    -------
    MetricsReport
        Mean ranks and recall percentages for both directions.
    """
    if len(recall_ks) == 0:
        raise InvalidInputError("at least one recall cutoff is required")
    ranks_v2r, ranks_r2v = retrieval_ranks(study_embs, report_embs, threads)
    return report_from_ranks(
        mode, ranks_v2r, ranks_r2v, pool_size=len(report_embs), recall_ks=recall_ks
    )


def _params_for_mode(
    params_by_mode: Mapping[EncodingMode, EncoderParams], mode: EncodingMode
) -> EncoderParams:
    # The 4CH-restricted multi-view mode is an inference-time variant:
    # it reuses the multi-view weights rather than training its own.
    source = EncodingMode.MULTI_VIDEO if mode is EncodingMode.MULTI_VIDEO_4CH else mode
    params = params_by_mode.get(source)
    if params is None:
        raise InvalidInputError(
            f"no trained parameters supplied for mode {source.key!r}"
        )
    return params


def run_ablation(
    params_by_mode: Mapping[EncodingMode, EncoderParams],
    test_studies: Sequence[Study],
    recall_ks: Sequence[int] = DEFAULT_RECALL_KS,
    threads: int = 1,
) -> list[MetricsReport]:
    """Evaluate retrieval for all four encoding modes over one test pool.

    Every study in ``test_studies`` must satisfy the pool filter (at
    least one CH4 clip), since three of the four modes encode CH4
    content only.

    Returns reports in the fixed mode order: multi-view video,
    4CH-restricted multi-view, single-view video, single-frame image.
    """
    if len(test_studies) == 0:
        raise EmptyInputError("test pool is empty")
    reports: list[MetricsReport] = []
    for mode in MODE_ORDER:
        params = _params_for_mode(params_by_mode, mode)
        study_embs = [
            (study.study_id, encode_study(params, study, mode))
            for study in test_studies
        ]
        report_embs = [
            (study.study_id, encode_report(params, study.report))
            for study in test_studies
        ]
        reports.append(
            evaluate_retrieval(
                study_embs, report_embs, mode, recall_ks=recall_ks, threads=threads
            )
        )
    return reports


def _headline_k(report: MetricsReport) -> int:
    ks = sorted(report.recall)
    return 10 if 10 in ks else ks[-1]


def ablation_table(reports: Sequence[MetricsReport]) -> str:
    """Render mode-by-mode scores as an aligned text table."""
    if len(reports) == 0:
        raise EmptyInputError("no metrics to tabulate")
    k = _headline_k(reports[0])
    header = (
        f"{'Mode':<16}{'MCMRR V2R':>12}{f'R@{k} V2R':>12}"
        f"{'MCMRR R2V':>12}{f'R@{k} R2V':>12}"
    )
    lines = [header, "-" * len(header)]
    for report in reports:
        lines.append(
            f"{report.mode.display:<16}"
            f"{report.mcmrr_v2r:>12.2f}"
            f"{report.recall[k]['v2r']:>11.1f}%"
            f"{report.mcmrr_r2v:>12.2f}"
            f"{report.recall[k]['r2v']:>11.1f}%"
        )
    lines.append(
        f"(pool size {reports[0].pool_size}, {reports[0].n_queries} queries "
        "per direction; lower MCMRR is better)"
    )
    return "\n".join(lines)


def ordering_violations(reports: Sequence[MetricsReport]) -> list[str]:
    """Check the expected quality ordering across the four modes.

    Multi-view video should beat both of its 4CH-restricted variants,
    and single-view video should beat single-frame image, in both
    retrieval directions. Returns human-readable descriptions of every
    violated comparison; an empty list means the ordering holds.
    """
    by_mode = {report.mode: report for report in reports}
    missing = [mode.key for mode in MODE_ORDER if mode not in by_mode]
    if missing:
        raise InvalidInputError(f"ablation results missing modes: {missing}")
    expected = [
        (EncodingMode.MULTI_VIDEO, EncodingMode.MULTI_VIDEO_4CH),
        (EncodingMode.MULTI_VIDEO, EncodingMode.SINGLE_VIDEO),
        (EncodingMode.SINGLE_VIDEO, EncodingMode.SINGLE_IMAGE),
    ]
    violations = []
    for better, worse in expected:
        for attr, label in (("mcmrr_v2r", "V2R"), ("mcmrr_r2v", "R2V")):
            left = getattr(by_mode[better], attr)
            right = getattr(by_mode[worse], attr)
            if not left < right:
                violations.append(
                    f"MCMRR {label}: {better.display} ({left:.2f}) not better "
                    f"than {worse.display} ({right:.2f})"
                )
    return violations
