"""Persistent file formats: embeddings, checkpoints, datasets, histories.

Every writer goes through a write-temp-then-rename step, so concurrent
readers never observe a partial file, and every format is free of
timestamps: identical inputs produce byte-identical files.

Binary layouts are little-endian. Vectors and frames are stored as 32-bit
floats on disk and promoted to float64 in memory; checkpoints keep full
float64 because training must resume bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np

from .data import Report, SplitAssignment, Study, VideoClip, ViewLabel
from .encoders import EncoderDims, EncoderParams
from .errors import (
    EmptyInputError,
    InvalidInputError,
    StorageFormatError,
    ValidationError,
)
from .metrics import MetricsReport
from .trainer import TrainHistory

EMBEDDING_MAGIC = b"XMRV"
EMBEDDING_VERSION = 1
CHECKPOINT_MAGIC = b"XMCK"
CHECKPOINT_VERSION = 1

MANIFEST_NAME = "manifest.jsonl"
FRAMES_NAME = "frames.bin"

_SPLIT_NAMES = ("train", "valid", "test")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write a file atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, compact separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# Embedding store
#
# magic "XMRV" | version u16 | dim u32 | count u64 | count * record
# record: id length u16 | id bytes (UTF-8) | dim * f32
# --------------------------------------------------------------------------


def write_embeddings(
    path: str | Path, embeddings: Sequence[tuple[str, np.ndarray]]
) -> None:
    """Write ``(id, vector)`` pairs in the given order."""
    if len(embeddings) == 0:
        raise EmptyInputError("embedding store needs at least one embedding")
    seen: set[str] = set()
    dim: int | None = None
    chunks: list[bytes] = []
    for eid, vec in embeddings:
        if eid in seen:
            raise ValidationError(f"duplicate embedding id {eid!r}")
        seen.add(eid)
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidInputError(
                f"embedding {eid!r} must be a non-empty vector, got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise InvalidInputError(f"embedding {eid!r} contains non-finite values")
        if dim is None:
            dim = arr.size
        elif arr.size != dim:
            raise ValidationError(
                f"embedding {eid!r} has dim {arr.size}, expected {dim}"
            )
        id_bytes = eid.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise InvalidInputError(f"embedding id longer than 65535 bytes: {eid[:40]!r}...")
        chunks.append(struct.pack("<H", len(id_bytes)))
        chunks.append(id_bytes)
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = EMBEDDING_MAGIC + struct.pack(
        "<HIQ", EMBEDDING_VERSION, dim, len(embeddings)
    )
    atomic_write_bytes(path, header + b"".join(chunks))


def read_embeddings(path: str | Path) -> list[tuple[str, np.ndarray]]:
    """Read the store back as ``(id, float64 vector)`` pairs in file order."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != EMBEDDING_MAGIC:
        raise StorageFormatError(
            f"{path}: bad magic, not an embedding store"
        )
    if len(data) < 18:
        raise StorageFormatError(f"{path}: truncated embedding store header")
    version, dim, count = struct.unpack_from("<HIQ", data, 4)
    if version != EMBEDDING_VERSION:
        raise StorageFormatError(
            f"{path}: unsupported embedding store version {version}"
        )
    if dim == 0:
        raise StorageFormatError(f"{path}: embedding dim must be positive")
    out: list[tuple[str, np.ndarray]] = []
    offset = 18
    vec_bytes = 4 * dim
    for i in range(count):
        if offset + 2 > len(data):
            raise StorageFormatError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + vec_bytes > len(data):
            raise StorageFormatError(f"{path}: truncated at record {i}")
        try:
            eid = data[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StorageFormatError(f"{path}: record {i} id is not UTF-8") from exc
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += vec_bytes
        out.append((eid, vec.astype(np.float64)))
    if offset != len(data):
        raise StorageFormatError(
            f"{path}: {len(data) - offset} trailing bytes after {count} records"
        )
    return out


# --------------------------------------------------------------------------
# Checkpoints
#
# magic "XMCK" | header length u32 | header JSON (UTF-8) | tensor data
# Header lists dims and per-tensor shapes; data is float64 little-endian,
# concatenated in EncoderParams.TENSOR_NAMES order.
# --------------------------------------------------------------------------


def _expected_shapes(dims: EncoderDims) -> dict[str, tuple[int, ...]]:
    return {
        "w1": (dims.hidden, dims.frame_dim),
        "b1": (dims.hidden,),
        "w2": (dims.frame_embed_dim, dims.hidden),
        "b2": (dims.frame_embed_dim,),
        "wp": (dims.embed_dim, 2 * dims.frame_embed_dim),
        "bp": (dims.embed_dim,),
        "wt1": (dims.hidden, dims.text_dim),
        "bt1": (dims.hidden,),
        "wt2": (dims.embed_dim, dims.hidden),
        "bt2": (dims.embed_dim,),
        "log_temperature": (),
    }


def write_checkpoint(path: str | Path, params: EncoderParams) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "dims": {
            "frame_dim": params.dims.frame_dim,
            "text_dim": params.dims.text_dim,
            "hidden": params.dims.hidden,
            "frame_embed_dim": params.dims.frame_embed_dim,
            "embed_dim": params.dims.embed_dim,
        },
        "tensors": [
            {"name": name, "shape": list(arr.shape)}
            for name, arr in params.tensors()
        ],
    }
    header_bytes = canonical_json(header).encode("utf-8")
    body = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for _, arr in params.tensors()
    )
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", len(header_bytes))
        + header_bytes
        + body
    )
    atomic_write_bytes(path, blob)


def read_checkpoint(path: str | Path) -> EncoderParams:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise StorageFormatError(f"{path}: bad magic, not a checkpoint")
    if len(data) < 8:
        raise StorageFormatError(f"{path}: truncated checkpoint header")
    (header_len,) = struct.unpack_from("<I", data, 4)
    if 8 + header_len > len(data):
        raise StorageFormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StorageFormatError(f"{path}: unreadable checkpoint header") from exc
    if not isinstance(header, dict) or header.get("version") != CHECKPOINT_VERSION:
        raise StorageFormatError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}"
        )
    try:
        dims = EncoderDims(**{k: int(v) for k, v in header["dims"].items()})
        listed = [(t["name"], tuple(int(s) for s in t["shape"])) for t in header["tensors"]]
    except (KeyError, TypeError, AttributeError) as exc:
        raise StorageFormatError(f"{path}: malformed checkpoint header") from exc
    dims.validate()
    expected = _expected_shapes(dims)
    if [name for name, _ in listed] != list(EncoderParams.TENSOR_NAMES):
        raise StorageFormatError(f"{path}: checkpoint tensor list mismatch")
    for name, shape in listed:
        if shape != expected[name]:
            raise StorageFormatError(
                f"{path}: tensor {name} has shape {shape}, expected {expected[name]}"
            )
    offset = 8 + header_len
    tensors: dict[str, np.ndarray] = {}
    for name, shape in listed:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * n
        if end > len(data):
            raise StorageFormatError(f"{path}: truncated at tensor {name}")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
        tensors[name] = np.array(arr.reshape(shape), dtype=np.float64, copy=True)
        offset = end
    if offset != len(data):
        raise StorageFormatError(
            f"{path}: {len(data) - offset} trailing bytes after tensors"
        )
    return EncoderParams(dims=dims, **tensors)


# --------------------------------------------------------------------------
# Dataset: manifest.jsonl + frames.bin
#
# One JSON object per line per study; clip frames live in the sidecar blob
# as row-major f32, addressed by byte offset and length.
# --------------------------------------------------------------------------


def write_dataset(
    out_dir: str | Path, studies: Sequence[Study], assignment: SplitAssignment
) -> None:
    """Write the manifest and frame blob for a split corpus."""
    if len(studies) == 0:
        raise EmptyInputError("dataset needs at least one study")
    out_dir = Path(out_dir)
    blob = bytearray()
    lines: list[str] = []
    for study in studies:
        split = assignment.split_of(study.patient_id)
        if split is None:
            raise ValidationError(
                f"patient {study.patient_id} of {study.study_id} is in no split"
            )
        clip_rows = []
        for clip in study.clips:
            frames32 = np.ascontiguousarray(clip.frames, dtype="<f4")
            offset = len(blob)
            raw = frames32.tobytes()
            blob.extend(raw)
            clip_rows.append(
                {
                    "view": clip.view.value,
                    "offset": offset,
                    "length": len(raw),
                    "frames": int(frames32.shape[0]),
                    "dim": int(frames32.shape[1]),
                }
            )
        row = {
            "study_id": study.study_id,
            "patient_id": study.patient_id,
            "split": split,
            "report": {
                "features": [float(x) for x in study.report.features],
                "display_text": study.report.display_text,
            },
            "clips": clip_rows,
        }
        lines.append(canonical_json(row))
    atomic_write_text(out_dir / MANIFEST_NAME, "".join(lines))
    atomic_write_bytes(out_dir / FRAMES_NAME, bytes(blob))


def read_dataset(in_dir: str | Path) -> tuple[list[Study], dict[str, str]]:
    """Read a dataset back: studies in file order plus study-id → split name."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / MANIFEST_NAME
    blob = (in_dir / FRAMES_NAME).read_bytes()
    studies: list[Study] = []
    splits: dict[str, str] = {}
    patient_split: dict[str, str] = {}
    for lineno, line in enumerate(
        manifest_path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StorageFormatError(
                f"{manifest_path}:{lineno}: invalid JSON"
            ) from exc
        try:
            split = row["split"]
            if split not in _SPLIT_NAMES:
                raise StorageFormatError(
                    f"{manifest_path}:{lineno}: unknown split {split!r}"
                )
            clips = []
            for c in row["clips"]:
                n_frames, dim = int(c["frames"]), int(c["dim"])
                offset, length = int(c["offset"]), int(c["length"])
                if length != 4 * n_frames * dim or offset < 0 or offset + length > len(blob):
                    raise StorageFormatError(
                        f"{manifest_path}:{lineno}: clip range out of bounds"
                    )
                frames = np.frombuffer(
                    blob, dtype="<f4", count=n_frames * dim, offset=offset
                )
                clips.append(
                    VideoClip(
                        view=ViewLabel(c["view"]),
                        frames=frames.astype(np.float64).reshape(n_frames, dim),
                    )
                )
            report = Report(
                features=np.array(row["report"]["features"], dtype=np.float64),
                display_text=row["report"]["display_text"],
            )
            study = Study(
                study_id=row["study_id"],
                patient_id=row["patient_id"],
                clips=clips,
                report=report,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, StorageFormatError):
                raise
            raise StorageFormatError(
                f"{manifest_path}:{lineno}: malformed study row: {exc}"
            ) from exc
        if study.study_id in splits:
            raise StorageFormatError(
                f"{manifest_path}:{lineno}: duplicate study id {study.study_id}"
            )
        prior = patient_split.setdefault(study.patient_id, split)
        if prior != split:
            raise ValidationError(
                f"patient {study.patient_id} appears in splits {prior} and {split}"
            )
        splits[study.study_id] = split
        studies.append(study)
    if not studies:
        raise EmptyInputError(f"{manifest_path}: no studies")
    return studies, splits


# --------------------------------------------------------------------------
# Histories, metrics, ranks
# --------------------------------------------------------------------------


def write_history_csv(path: str | Path, history: TrainHistory) -> None:
    lines = ["step,lr,loss"]
    lines += [f"{r.step},{r.lr!r},{r.loss!r}" for r in history.steps]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_history_json(path: str | Path, history: TrainHistory) -> None:
    atomic_write_text(path, canonical_json(history.to_dict()))


def read_history_json(path: str | Path) -> TrainHistory:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return TrainHistory.from_dict(payload)
    except (json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise StorageFormatError(f"{path}: unreadable history") from exc


def write_metrics_json(path: str | Path, report: MetricsReport) -> None:
    atomic_write_text(path, canonical_json(report.to_dict()))


def read_metrics_json(path: str | Path) -> MetricsReport:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StorageFormatError(f"{path}: invalid metrics JSON") from exc
    return MetricsReport.from_dict(payload)


def write_rank_csv(path: str | Path, rows: Sequence[tuple[str, int]]) -> None:
    """Per-query correct-counterpart ranks, one ``query_id,rank`` row each."""
    lines = ["query_id,rank"]
    for qid, rank in rows:
        if "," in qid or "\n" in qid:
            raise InvalidInputError(f"query id {qid!r} cannot be written as CSV")
        lines.append(f"{qid},{int(rank)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
