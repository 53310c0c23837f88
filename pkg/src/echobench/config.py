"""Run configuration: one YAML document drives every command.

The document is schema-checked before any work happens; errors name the
offending field by dotted path. Unknown keys are rejected so typos fail
loudly instead of silently falling back to defaults.

Seed discipline: the file carries one global seed. The generator uses it
directly; the patient split and each mode's trainer draw their own
streams from it with fixed tags, so a single integer pins the entire run.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import yaml

from .data import VIEW_ORDER, ViewLabel
from .encoders import EncoderDims, EncodingMode
from .errors import ConfigError, EchoBenchError
from .rng import derive_seed
from .synthgen import GenConfig
from .trainer import TrainConfig

#: Stream tags for deriving per-stage seeds from the global seed.
SPLIT_STREAM = 99
TRAIN_STREAM = 7

#: Modes that own a training run, in fixed order.
TRAINING_MODES: tuple[EncodingMode, ...] = (
    EncodingMode.MULTI_VIDEO,
    EncodingMode.SINGLE_VIDEO,
    EncodingMode.SINGLE_IMAGE,
)

_VIEW_BY_NAME = {view.value: view for view in VIEW_ORDER}

_GEN_INT_KEYS = (
    "n_studies",
    "k_static",
    "k_motion",
    "frame_dim",
    "text_dim",
    "frames_per_clip",
    "max_clips_per_view",
)
_GEN_FLOAT_KEYS = ("noise_frame", "noise_report", "static_scale", "motion_scale")
_TRAIN_INT_KEYS = ("batch_size", "warmup_steps", "total_steps", "eval_interval")
_TRAIN_FLOAT_KEYS = ("lr_peak", "adam_beta1", "adam_beta2", "adam_eps")


@dataclass(frozen=True)
class RunConfig:
    """Materialized configuration for one benchmark run."""

    seed: int
    out: Path
    gen: GenConfig
    split_ratios: tuple[float, float, float]
    dims: EncoderDims
    train: Mapping[EncodingMode, TrainConfig]
    recall_ks: tuple[int, ...]

    def train_config(self, mode: EncodingMode) -> TrainConfig:
        if mode not in self.train:
            raise ConfigError(f"mode {mode.key} has no training configuration")
        return self.train[mode]

    def train_seed(self, mode: EncodingMode) -> int:
        return derive_seed(self.seed, TRAIN_STREAM, TRAINING_MODES.index(mode))

    def split_seed(self) -> int:
        return derive_seed(self.seed, SPLIT_STREAM)


def _type_name(value) -> str:
    return type(value).__name__


def _expect_mapping(value, path: str) -> Mapping:
    if not isinstance(value, Mapping):
        raise ConfigError(f"{path}: expected a mapping, got {_type_name(value)}")
    return value


def _expect_int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {_type_name(value)}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _expect_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {_type_name(value)}")
    return float(value)


def _expect_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {_type_name(value)}")
    return value


def _expect_list(value, path: str) -> Sequence:
    if not isinstance(value, Sequence) or isinstance(value, (str, bytes)):
        raise ConfigError(f"{path}: expected a list, got {_type_name(value)}")
    return value


def _reject_unknown(payload: Mapping, allowed: Sequence[str], path: str) -> None:
    extras = sorted(set(payload) - set(allowed))
    if extras:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{extras[0]}: unknown key")


def _view_table(payload, path: str, parse_entry) -> dict[ViewLabel, object]:
    table = _expect_mapping(payload, path)
    out: dict[ViewLabel, object] = {}
    for name, entry in table.items():
        if name not in _VIEW_BY_NAME:
            raise ConfigError(
                f"{path}.{name}: unknown view (expected one of "
                f"{', '.join(v.value for v in VIEW_ORDER)})"
            )
        out[_VIEW_BY_NAME[name]] = parse_entry(entry, f"{path}.{name}")
    missing = [v.value for v in VIEW_ORDER if v not in out]
    if missing:
        raise ConfigError(f"{path}: missing view {missing[0]}")
    return out


def _index_tuple(entry, path: str) -> tuple[int, ...]:
    return tuple(_expect_int(x, f"{path}[{i}]", minimum=0) for i, x in enumerate(_expect_list(entry, path)))


def _build_gen(payload, seed: int) -> GenConfig:
    section = _expect_mapping(payload, "gen")
    allowed = (
        *_GEN_INT_KEYS,
        *_GEN_FLOAT_KEYS,
        "patient_pool",
        "severity_probs",
        "view_masks",
        "view_motion_masks",
        "view_clip_rate",
    )
    if "seed" in section:
        raise ConfigError("gen.seed: set by the global seed, not here")
    _reject_unknown(section, allowed, "gen")
    if "n_studies" not in section:
        raise ConfigError("gen.n_studies: required field is missing")
    kwargs: dict = {"seed": seed}
    for key in _GEN_INT_KEYS:
        if key in section:
            kwargs[key] = _expect_int(section[key], f"gen.{key}", minimum=1)
    for key in _GEN_FLOAT_KEYS:
        if key in section:
            kwargs[key] = _expect_number(section[key], f"gen.{key}")
    if "patient_pool" in section and section["patient_pool"] is not None:
        kwargs["patient_pool"] = _expect_int(
            section["patient_pool"], "gen.patient_pool", minimum=1
        )
    if "severity_probs" in section:
        probs = _expect_list(section["severity_probs"], "gen.severity_probs")
        kwargs["severity_probs"] = tuple(
            _expect_number(p, f"gen.severity_probs[{i}]") for i, p in enumerate(probs)
        )
    if "view_masks" in section:
        kwargs["view_masks"] = _view_table(
            section["view_masks"], "gen.view_masks", _index_tuple
        )
    if "view_motion_masks" in section:
        kwargs["view_motion_masks"] = _view_table(
            section["view_motion_masks"], "gen.view_motion_masks", _index_tuple
        )
    if "view_clip_rate" in section:
        kwargs["view_clip_rate"] = _view_table(
            section["view_clip_rate"], "gen.view_clip_rate", _expect_number
        )
    gen = GenConfig(**kwargs)
    try:
        gen.validate()
    except EchoBenchError as exc:
        raise ConfigError(f"gen: {exc}") from exc
    return gen


def _build_split(payload) -> tuple[float, float, float]:
    if payload is None:
        return (0.875, 0.025, 0.1)
    section = _expect_mapping(payload, "split")
    _reject_unknown(section, ("ratios",), "split")
    if "ratios" not in section:
        return (0.875, 0.025, 0.1)
    ratios = _expect_list(section["ratios"], "split.ratios")
    if len(ratios) != 3:
        raise ConfigError(f"split.ratios: expected 3 entries, got {len(ratios)}")
    values = tuple(
        _expect_number(r, f"split.ratios[{i}]") for i, r in enumerate(ratios)
    )
    if any(v <= 0 for v in values):
        raise ConfigError("split.ratios: every ratio must be > 0")
    if abs(sum(values) - 1.0) > 1e-9:
        raise ConfigError(f"split.ratios: must sum to 1, got {sum(values)}")
    return values


def _build_dims(payload, gen: GenConfig) -> EncoderDims:
    kwargs = {"frame_dim": gen.frame_dim, "text_dim": gen.text_dim}
    if payload is not None:
        section = _expect_mapping(payload, "dims")
        for key in ("frame_dim", "text_dim"):
            if key in section:
                raise ConfigError(f"dims.{key}: set by gen.{key}, not here")
        _reject_unknown(section, ("hidden", "frame_embed_dim", "embed_dim"), "dims")
        for key in ("hidden", "frame_embed_dim", "embed_dim"):
            if key in section:
                kwargs[key] = _expect_int(section[key], f"dims.{key}", minimum=1)
    dims = EncoderDims(**kwargs)
    dims.validate()
    return dims


def _build_train(payload, seed: int) -> dict[EncodingMode, TrainConfig]:
    sections: dict[str, Mapping] = {}
    if payload is not None:
        table = _expect_mapping(payload, "train")
        allowed_modes = tuple(m.key for m in TRAINING_MODES)
        for key in table:
            if key == EncodingMode.MULTI_VIDEO_4CH.key:
                raise ConfigError(
                    f"train.{key}: this mode reuses {EncodingMode.MULTI_VIDEO.key} "
                    "weights and takes no training configuration"
                )
            if key not in allowed_modes:
                raise ConfigError(f"train.{key}: unknown mode")
            sections[key] = _expect_mapping(table[key], f"train.{key}")
    out: dict[EncodingMode, TrainConfig] = {}
    for index, mode in enumerate(TRAINING_MODES):
        section = sections.get(mode.key, {})
        path = f"train.{mode.key}"
        for banned in ("mode", "seed"):
            if banned in section:
                raise ConfigError(f"{path}.{banned}: derived, not configurable")
        _reject_unknown(section, (*_TRAIN_INT_KEYS, *_TRAIN_FLOAT_KEYS), path)
        kwargs: dict = {}
        for key in _TRAIN_INT_KEYS:
            if key in section:
                kwargs[key] = _expect_int(section[key], f"{path}.{key}", minimum=0)
        for key in _TRAIN_FLOAT_KEYS:
            if key in section:
                kwargs[key] = _expect_number(section[key], f"{path}.{key}")
        try:
            out[mode] = TrainConfig(
                mode=mode,
                seed=derive_seed(seed, TRAIN_STREAM, index),
                **kwargs,
            )
        except EchoBenchError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return out


def _build_recall_ks(payload) -> tuple[int, ...]:
    if payload is None:
        return (1, 5, 10)
    section = _expect_mapping(payload, "eval")
    _reject_unknown(section, ("recall_ks",), "eval")
    if "recall_ks" not in section:
        return (1, 5, 10)
    ks = _expect_list(section["recall_ks"], "eval.recall_ks")
    if not ks:
        raise ConfigError("eval.recall_ks: needs at least one cutoff")
    values = tuple(
        _expect_int(k, f"eval.recall_ks[{i}]", minimum=1) for i, k in enumerate(ks)
    )
    if list(values) != sorted(set(values)):
        raise ConfigError("eval.recall_ks: must be strictly increasing")
    return values


def build_run_config(
    payload,
    seed_override: int | None = None,
    out_override: str | None = None,
) -> RunConfig:
    """Materialize a RunConfig from a parsed YAML document."""
    doc = _expect_mapping(payload, "config")
    _reject_unknown(doc, ("seed", "out", "gen", "split", "dims", "train", "eval"), "")
    if seed_override is not None:
        seed = seed_override
    else:
        if "seed" not in doc:
            raise ConfigError("seed: required field is missing")
        seed = _expect_int(doc["seed"], "seed", minimum=0)
    if seed >= 1 << 64:
        raise ConfigError(f"seed: must fit in 64 bits, got {seed}")
    if out_override is not None:
        out = Path(out_override)
    elif "out" in doc:
        out = Path(_expect_str(doc["out"], "out"))
    else:
        out = Path("runs")
    if "gen" not in doc:
        raise ConfigError("gen: required section is missing")
    gen = _build_gen(doc["gen"], seed)
    return RunConfig(
        seed=seed,
        out=out,
        gen=gen,
        split_ratios=_build_split(doc.get("split")),
        dims=_build_dims(doc.get("dims"), gen),
        train=_build_train(doc.get("train"), seed),
        recall_ks=_build_recall_ks(doc.get("eval")),
    )


def load_run_config(
    path: str | Path,
    seed_override: int | None = None,
    out_override: str | None = None,
) -> RunConfig:
    """Load and validate a YAML run configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        payload = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return build_run_config(payload, seed_override, out_override)
