"""Exact cross-modal retrieval: rank candidates by cosine similarity.

Both directions share one engine: score every candidate against the
query with :func:`echobench.linalg.cosine_similarity`, then sort
descending. The scan is deliberately a plain per-candidate loop. BLAS
matrix products choose different kernels for different operand shapes
and those kernels do not produce bit-identical floats, so any batched
"speedup" would break the exact-equivalence contract with the naive
scan. At the pool sizes this package targets (M up to ~10^4) the loop
is comfortably fast.

Ties are resolved pessimistically: a candidate tied with the correct
one counts as ranked ahead of it. Random continuous embeddings never
tie, but degenerate pools (all-zero vectors, duplicated candidates)
occur in tests and must rank reproducibly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, InvalidInputError, ValidationError
from .linalg import as_vector, cosine_similarity

__all__ = [
    "RankedList",
    "RankOutcome",
    "rank_of",
    "retrieve_reports",
    "retrieve_studies",
]


@dataclass(frozen=True)
class RankedList:
    """A full descending-similarity ordering of one candidate pool.

    Attributes
    ----------
    query_id:
        Identifier of the query the ranking answers. May be empty when
        the caller does not track query identity.
    ids:
        Candidate identifiers, best match first. Each candidate appears
        exactly once.
    scores:
        Cosine similarity of each candidate to the query, aligned with
        ``ids`` and non-increasing.
    """

    query_id: str
    ids: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.ids) == 0:
            raise EmptyInputError("ranked list must contain at least one candidate")
        if len(self.ids) != len(self.scores):
            raise ValidationError(
                f"ids and scores lengths differ: {len(self.ids)} vs {len(self.scores)}"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("ranked list contains duplicate candidate ids")
        for left, right in zip(self.scores, self.scores[1:]):
            if right > left:
                raise ValidationError("ranked list scores must be non-increasing")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class RankOutcome:
    """Where the correct candidate landed in a ranked list.

    ``rank`` is 1-based and uses the pessimistic tie rule: candidates
    scoring strictly higher than the correct one, plus every *other*
    candidate scoring exactly equal, are counted as ahead of it.
    """

    query_id: str
    correct_id: str
    rank: int
    top_k_ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValidationError(f"rank must be >= 1, got {self.rank}")


def _retrieve(
    query: np.ndarray,
    candidates: Sequence[tuple[str, np.ndarray]],
    query_id: str,
    kind: str,
) -> RankedList:
    q = as_vector(query, name="query embedding")
    if len(candidates) == 0:
        raise EmptyInputError(f"no candidate {kind} to rank")
    ids: list[str] = []
    scores = np.empty(len(candidates), dtype=np.float64)
    for pos, (cid, emb) in enumerate(candidates):
        vec = as_vector(emb, name=f"{kind} embedding {cid!r}")
        if vec.shape != q.shape:
            raise DimensionError(
                f"{kind} embedding {cid!r} has dimension {vec.shape[0]}, "
                f"query has {q.shape[0]}"
            )
        ids.append(cid)
        scores[pos] = cosine_similarity(vec, q)
    # Stable sort on the negated scores: descending by similarity,
    # ties kept in the caller's candidate order.
    order = np.argsort(-scores, kind="stable")
    return RankedList(
        query_id=query_id,
        ids=tuple(ids[i] for i in order),
        scores=tuple(float(scores[i]) for i in order),
    )


def retrieve_reports(
    study_emb: np.ndarray,
    report_embs: Sequence[tuple[str, np.ndarray]],
    query_id: str = "",
) -> RankedList:
    """Rank every candidate report against one study embedding.

    Parameters
    ----------
    study_emb:
        Query vector, typically the mean of a study's clip embeddings.
    report_embs:
        ``(report_id, embedding)`` pairs forming the candidate pool.
    query_id:
        Optional identifier recorded on the result for bookkeeping.

    Returns
    -------
    RankedList
        All candidates ordered by descending cosine similarity.
    """
    return _retrieve(study_emb, report_embs, query_id, kind="report")


def retrieve_studies(
    report_emb: np.ndarray,
    study_embs: Sequence[tuple[str, np.ndarray]],
    query_id: str = "",
) -> RankedList:
    """Rank every candidate study against one report embedding.

    Mirror image of :func:`retrieve_reports` with the modalities
    swapped; cosine similarity is symmetric, so for a fixed embedding
    set the two directions score identical pairs identically.
    """
    return _retrieve(report_emb, study_embs, query_id, kind="study")


def rank_of(correct_id: str, ranked: RankedList, top_k: int = 10) -> RankOutcome:
    """Locate the correct candidate in a ranked list.

    Parameters
    ----------
    correct_id:
        Identifier of the ground-truth counterpart; must be present.
    ranked:
        The full candidate ordering to search.
    top_k:
        How many leading ids to copy into the outcome for inspection.

    Returns
    -------
    RankOutcome
        1-based rank under the pessimistic tie rule: one plus the
        number of strictly-better candidates plus the number of other
        candidates with exactly equal similarity.
    """
    if top_k < 0:
        raise InvalidInputError(f"top_k must be >= 0, got {top_k}")
    try:
        position = ranked.ids.index(correct_id)
    except ValueError:
        raise InvalidInputError(
            f"correct id {correct_id!r} is not among the {len(ranked)} candidates"
        ) from None
    correct_score = ranked.scores[position]
    strictly_better = 0
    tied_others = 0
    for cid, score in zip(ranked.ids, ranked.scores):
        if score > correct_score:
            strictly_better += 1
        elif score == correct_score and cid != correct_id:
            tied_others += 1
    return RankOutcome(
        query_id=ranked.query_id,
        correct_id=correct_id,
        rank=1 + strictly_better + tied_others,
        top_k_ids=ranked.ids[:top_k],
    )
